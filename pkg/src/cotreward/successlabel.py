"""Success labels for a trajectory's final observation.

Two routes: the environment's ground truth (optionally flipped with a
fixed probability to model labeler mistakes) and a two-message query to a
vision-language model whose free-text answer is reduced to 0/1.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass

from .errors import InvalidArgumentError, ParseError, TransportError

QUERY = "What is the output of this image?"
CONTEXT_TEMPLATE = (
    "Consider the following image from a simulated robot workspace. It shows the goal state: "
    "{goal}. If an image shows this goal state, the output is 1. Otherwise, the output is 0."
)

GOAL_DESCRIPTIONS = {
    "door-open": "the door is open",
    "door-close": "the door is closed",
    "drawer-open": "the drawer is pulled open",
    "drawer-close": "the drawer is pushed shut",
    "window-open": "the window is slid open",
    "window-close": "the window is slid shut",
    "button-press": "the button is pressed in",
    "faucet-open": "the faucet handle is turned open",
    "push-ball": "the ball is inside the goal",
}


@dataclass(frozen=True)
class LabelDecision:
    success: bool
    source: str
    raw_response: str | None = None

    def __post_init__(self):
        if self.source not in ("oracle", "oracle_noised", "vlm"):
            raise InvalidArgumentError(f"unknown label source {self.source!r}")
        if (self.raw_response is not None) != (self.source == "vlm"):
            raise InvalidArgumentError("raw_response must be set exactly for vlm labels")


def context_prompt(task_id):
    return CONTEXT_TEMPLATE.format(goal=GOAL_DESCRIPTIONS[task_id])


def label_oracle(final_obs, env_truth, error_rate=0.0, rng=None):
    """Ground truth flipped with probability ``error_rate``.

    ``final_obs`` is accepted for interface symmetry with the VLM route.
    One uniform draw is consumed per call whenever ``error_rate > 0``.
    """
    if not 0.0 <= error_rate < 0.5:
        raise InvalidArgumentError("error_rate must be in [0, 0.5)")
    if error_rate == 0.0:
        return LabelDecision(bool(env_truth), "oracle")
    if rng is None:
        raise InvalidArgumentError("a noised labeler needs an rng")
    flip = bool(rng.random() < error_rate)
    return LabelDecision(bool(env_truth) != flip, "oracle_noised")


# A lone 0 or 1: not part of a longer number or a decimal.
_BIT = re.compile(r"(?<![\w.])([01])(?![\w]|\.\d)")


def parse_binary(text):
    """Last standalone ``0``/``1`` token of ``text``; ParseError otherwise."""
    matches = _BIT.findall(text or "")
    if not matches:
        raise ParseError("no standalone 0/1 in labeler response", raw=text or "")
    return matches[-1] == "1"


def label_vlm(final_image, context_prompt, query, client):
    """Ask ``client`` whether ``final_image`` shows success.

    Transport problems surface as TransportError; unparseable answers as
    ParseError (callers treat those trajectories as unlabeled).
    """
    if client is None:
        raise InvalidArgumentError("label_vlm needs a configured client")
    messages = [
        {"role": "user", "content": context_prompt},
        {"role": "user", "content": query, "image": final_image},
    ]
    try:
        raw = client.complete(messages)
    except TransportError:
        raise
    except Exception as exc:
        raise TransportError(f"labeler client failed: {exc}") from exc
    return LabelDecision(parse_binary(raw), "vlm", raw)


class AuditLog:
    """Line-delimited label records, appended under a lock to keep order."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()

    def write(self, traj_id, decision: LabelDecision | None, error=None):
        rec = {
            "trajectory_id": traj_id,
            "source": None if decision is None else decision.source,
            "decision": None if decision is None else decision.success,
            "raw_response": None if decision is None else decision.raw_response,
        }
        if error is not None:
            rec["error"] = error
        with self._lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec) + "\n")
