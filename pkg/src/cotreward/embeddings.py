"""Text and video-segment encoders sharing one embedding space.

The synthetic backend gives every canonical event a fixed unit anchor
(derived from a seeded hash of the event name) and maps both prompts and
frame windows onto those anchors.  External pretrained video-text models
plug in through the :class:`Encoder` protocol and the adapter registry.
"""

from __future__ import annotations

import importlib
from collections import Counter
from importlib import resources
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import InvalidArgumentError, NotFoundError
from .toyenv import EVENT_VOCABULARY, FrameFeature, seed_from

IDLE = "<idle>"
NORM_TOL = 1e-6


@runtime_checkable
class Encoder(Protocol):
    dim: int

    def encode_text(self, prompt: str) -> np.ndarray: ...

    def encode_segment(self, frames: Sequence[FrameFeature]) -> np.ndarray: ...


def _unit(v):
    return v / np.linalg.norm(v)


def _hashed_vector(name, dim, seed):
    rng = np.random.default_rng(seed_from("anchor", seed, name))
    return rng.standard_normal(dim)


def load_prompt_table(path=None):
    """Read a ``prompt<TAB>event`` file into a dict.

    Blank lines and lines starting with ``#`` are ignored.
    """
    if path is None:
        text = resources.files("cotreward.data").joinpath("prompt_events.tsv").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            prompt, event = line.split("\t")
        except ValueError:
            raise InvalidArgumentError(f"prompt table line {lineno}: expected 'prompt<TAB>event'") from None
        table[prompt.strip()] = event.strip()
    return table


class SyntheticEncoder:
    """Deterministic event-anchor encoder.

    Anchors for the idle state and the declared vocabulary are drawn from
    per-name hashed seeds and then orthonormalised in a fixed order (idle
    first, then sorted event names), so distinct events are exactly
    orthogonal.  Prompts missing from the table get a raw hashed anchor of
    their own text.

    A window embeds as the unit-normalised sum of each event's anchor
    weighted by the fraction of frames carrying it, plus ``idle_weight``
    times the idle anchor.
    """

    def __init__(self, prompt_table=None, vocabulary=None, dim=64, seed=0, idle_weight=0.1):
        self.prompt_table = dict(load_prompt_table() if prompt_table is None else prompt_table)
        vocab = set(EVENT_VOCABULARY if vocabulary is None else vocabulary)
        vocab |= set(self.prompt_table.values())
        names = [IDLE] + sorted(vocab)
        if len(names) > dim:
            raise InvalidArgumentError(f"vocabulary of {len(names)} anchors does not fit in dim={dim}")
        self.dim = dim
        self.seed = seed
        self.idle_weight = float(idle_weight)
        raw = np.stack([_hashed_vector(n, dim, seed) for n in names], axis=1)
        q, r = np.linalg.qr(raw)
        # Fix QR's sign ambiguity so each anchor stays close to its raw draw.
        q = q * np.sign(np.diag(r))
        self._anchors = {n: q[:, i].copy() for i, n in enumerate(names)}
        for v in self._anchors.values():
            v.setflags(write=False)

    @property
    def vocabulary(self):
        return tuple(n for n in self._anchors if n != IDLE)

    def anchor(self, event):
        try:
            return self._anchors[event]
        except KeyError:
            raise NotFoundError(f"event {event!r} not in encoder vocabulary") from None

    @property
    def idle_anchor(self):
        return self._anchors[IDLE]

    def event_for_prompt(self, prompt):
        return self.prompt_table.get(prompt.strip())

    def encode_text(self, prompt):
        if not isinstance(prompt, str) or not prompt.strip():
            raise InvalidArgumentError("prompt must be a nonempty string")
        event = self.event_for_prompt(prompt)
        if event is not None:
            return self._anchors[event].copy()
        return _unit(_hashed_vector("prompt:" + prompt.strip(), self.dim, self.seed))

    def encode_segment(self, frames):
        if len(frames) == 0:
            raise InvalidArgumentError("segment needs at least one frame")
        counts = Counter()
        for fr in frames:
            counts.update(fr.event_tags)
        if not counts:
            return self._anchors[IDLE].copy()
        v = self.idle_weight * self._anchors[IDLE]
        n = len(frames)
        for event in sorted(counts):
            if event not in self._anchors:
                raise InvalidArgumentError(f"frame carries unknown event {event!r}")
            v = v + (counts[event] / n) * self._anchors[event]
        return _unit(v)


# name -> "module:attribute" factory path
ADAPTERS = {"synthetic": "cotreward.embeddings:SyntheticEncoder"}


def make_encoder(name="synthetic", **kwargs):
    """Build an encoder from a configuration key.

    Non-synthetic names may be a registered alias or a ``module:factory``
    path; the returned object must satisfy :class:`Encoder`.
    """
    target = ADAPTERS.get(name, name)
    if ":" not in target:
        raise NotFoundError(f"unknown encoder backend {name!r}")
    mod_name, attr = target.split(":", 1)
    factory = getattr(importlib.import_module(mod_name), attr)
    enc = factory(**kwargs)
    if not isinstance(enc, Encoder) or not isinstance(getattr(enc, "dim", None), int):
        raise InvalidArgumentError(f"backend {name!r} does not implement the encoder contract")
    return enc


def cosine(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
