"""Contrastive sub-goal reward over sliding windows, plus baseline shapes.

All reward arithmetic is float64 and done on logit differences so that
``exp(logit / tau)`` never has to be materialised.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .embeddings import cosine
from .errors import InvalidArgumentError


class RewardMode(str, enum.Enum):
    DECOMPOSED = "decomposed"
    SINGLE_PROMPT = "single_prompt"
    FINAL_SEGMENT = "final_segment"


@dataclass(frozen=True)
class PromptSet:
    """Positive sub-goal prompts, negative failure prompts and the coarse task.

    Each entry is a ``(prompt, embedding)`` pair.
    """

    positives: tuple
    negatives: tuple = ()
    coarse: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "positives", tuple(self.positives))
        object.__setattr__(self, "negatives", tuple(self.negatives))
        if not self.positives:
            raise InvalidArgumentError("PromptSet needs at least one positive prompt")
        for name, group in (("positives", self.positives), ("negatives", self.negatives)):
            texts = [p for p, _ in group]
            if len(set(texts)) != len(texts):
                raise InvalidArgumentError(f"duplicate prompt strings in {name}")

    @property
    def positive_matrix(self):
        return np.stack([e for _, e in self.positives])

    @property
    def negative_matrix(self):
        if not self.negatives:
            return np.zeros((0, len(self.positives[0][1])))
        return np.stack([e for _, e in self.negatives])


@dataclass(frozen=True)
class RewardConfig:
    tau: float = 0.1
    window: int = 16
    stride: int = 4
    success_bonus: float = 100.0
    reward_mode: RewardMode = RewardMode.DECOMPOSED

    def __post_init__(self):
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))
        if not self.tau > 0:
            raise InvalidArgumentError("tau must be positive")
        if not 1 <= self.stride <= self.window:
            raise InvalidArgumentError("need 1 <= stride <= window")


@dataclass
class RewardTrace:
    """Per-observation rewards and the raw window scores behind them.

    ``per_step[t]`` is the reward attached to observation ``o_t``;
    ``assignment[t]`` is the index into ``window_scores`` it came from.
    """

    per_step: np.ndarray
    window_scores: list = field(default_factory=list)
    assignment: np.ndarray | None = None


def _contrast(pos_logit, neg_logits, tau):
    """1 / (1 + sum_i exp((n_i - p) / tau)), evaluated as a logistic."""
    neg_logits = np.asarray(neg_logits, dtype=np.float64)
    if neg_logits.size == 0:
        return 1.0
    z = (neg_logits - pos_logit) / tau
    s = np.logaddexp.reduce(z)
    return float(np.exp(-np.logaddexp(0.0, s)))


def nce_similarity(z_v, z_pos, z_negs, tau):
    """Softmax probability of the positive text against the negatives."""
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    z_v = np.asarray(z_v, dtype=np.float64)
    negs = [float(z_v @ np.asarray(n, dtype=np.float64)) for n in z_negs]
    return _contrast(float(z_v @ np.asarray(z_pos, dtype=np.float64)), negs, tau)


def decomposed_reward(z_v, prompts: PromptSet, tau):
    """Best-matching sub-goal prompt contrasted against the failure prompts.

    With no failure prompts and two or more sub-goals, the sub-goals other
    than the best one form the contrast set instead.
    """
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    if not prompts.positives:
        raise InvalidArgumentError("no positive prompts")
    z_v = np.asarray(z_v, dtype=np.float64)
    pos = prompts.positive_matrix @ z_v
    best = int(np.argmax(pos))  # first index wins ties
    if prompts.negatives:
        contrast = prompts.negative_matrix @ z_v
    else:
        contrast = np.delete(pos, best)
    return _contrast(float(pos[best]), contrast, tau)


def window_starts(n_frames, window, stride):
    """Start indices and lengths of the scoring windows over ``n_frames`` frames."""
    if n_frames < 1:
        raise InvalidArgumentError("need at least one frame")
    if n_frames <= window:
        return [(0, n_frames)]
    spans = []
    start = 0
    while start + window <= n_frames:
        spans.append((start, window))
        start += stride
    last_end = spans[-1][0] + window
    if last_end < n_frames:
        spans.append((start, n_frames - start))
    return spans


def assign_windows(n_frames, window, stride):
    """Index of the window whose score each frame receives."""
    spans = window_starts(n_frames, window, stride)
    owner = np.full(n_frames, -1, dtype=int)
    covered = 0
    for k, (start, length) in enumerate(spans):
        end = start + length  # exclusive
        owner[covered:end] = k
        covered = end
    return owner


def window_rewards(frames, prompts: PromptSet, cfg: RewardConfig, encoder):
    """Score every window with :func:`decomposed_reward` and spread it over steps."""
    if len(frames) < 1:
        raise InvalidArgumentError("need at least one frame")
    spans = window_starts(len(frames), cfg.window, cfg.stride)
    scores = []
    for start, length in spans:
        z = encoder.encode_segment(frames[start:start + length])
        scores.append((start, decomposed_reward(z, prompts, cfg.tau)))
    owner = assign_windows(len(frames), cfg.window, cfg.stride)
    per_step = np.array([scores[k][1] for k in owner], dtype=np.float64)
    return RewardTrace(per_step, scores, owner)


def _coarse(prompts):
    if prompts.coarse is None:
        raise InvalidArgumentError("baseline reward needs a coarse prompt")
    return prompts.coarse[1]


def single_prompt_reward(frame, prompts: PromptSet, encoder):
    """Cosine between one frame's embedding and the coarse instruction."""
    return cosine(encoder.encode_segment([frame]), _coarse(prompts))


def single_prompt_trace(frames, prompts: PromptSet, encoder):
    per_step = np.array([single_prompt_reward(f, prompts, encoder) for f in frames])
    return RewardTrace(per_step, [(t, v) for t, v in enumerate(per_step)], np.arange(len(frames)))


def final_segment_reward(frames, prompts: PromptSet, encoder):
    """Sparse terminal cosine between the whole episode and the coarse instruction."""
    if len(frames) < 1:
        raise InvalidArgumentError("need at least one frame")
    coarse = _coarse(prompts)
    per_step = np.zeros(len(frames))
    per_step[-1] = cosine(encoder.encode_segment(frames), coarse)
    owner = np.full(len(frames), -1, dtype=int)
    owner[-1] = 0
    return RewardTrace(per_step, [(0, per_step[-1])], owner)


def reward_trace(frames, prompts: PromptSet, cfg: RewardConfig, encoder):
    mode = cfg.reward_mode
    if mode is RewardMode.DECOMPOSED:
        return window_rewards(frames, prompts, cfg, encoder)
    if mode is RewardMode.SINGLE_PROMPT:
        return single_prompt_trace(frames, prompts, encoder)
    return final_segment_reward(frames, prompts, encoder)
