"""Success replay buffer, terminal reward correction and the imitation term."""

from __future__ import annotations

import threading
from collections import deque

import numpy as np

from .errors import InvalidArgumentError, NumericError

CHECKPOINT_VERSION = 1
# Field order inside a buffer checkpoint (numpy .npz archive).
CHECKPOINT_FIELDS = ("format_version", "capacity", "states", "actions", "trajectory_ids")


class SuccessBuffer:
    """Bounded FIFO of (state features, action) pairs from successful episodes."""

    def __init__(self, capacity=50_000):
        if capacity < 1:
            raise InvalidArgumentError("capacity must be positive")
        self.capacity = int(capacity)
        self._pairs = deque(maxlen=self.capacity)
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._pairs)

    @property
    def pairs(self):
        with self._lock:
            return [(s, a) for s, a, _ in self._pairs]

    @property
    def trajectory_ids(self):
        with self._lock:
            return [tid for _, _, tid in self._pairs]

    def extend(self, states, actions, traj_id):
        with self._lock:
            for s, a in zip(states, actions):
                self._pairs.append((np.asarray(s, float), np.asarray(a, float), traj_id))

    def sample(self, n, rng):
        """Uniform sample with replacement; empty list if the buffer is empty."""
        with self._lock:
            if not self._pairs or n <= 0:
                return []
            idx = rng.integers(0, len(self._pairs), size=n)
            return [(self._pairs[i][0], self._pairs[i][1]) for i in idx]

    def save(self, path):
        with self._lock:
            states = np.array([s for s, _, _ in self._pairs]).reshape(len(self._pairs), -1)
            actions = np.array([a for _, a, _ in self._pairs]).reshape(len(self._pairs), -1)
            tids = np.array([t for _, _, t in self._pairs], dtype=str)
        arrays = dict(
            format_version=np.array(CHECKPOINT_VERSION),
            capacity=np.array(self.capacity),
            states=states,
            actions=actions,
            trajectory_ids=tids,
        )
        with open(path, "wb") as f:
            np.savez(f, **{k: arrays[k] for k in CHECKPOINT_FIELDS})

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != CHECKPOINT_VERSION:
                raise InvalidArgumentError(f"unsupported buffer checkpoint version {version}")
            buf = cls(int(z["capacity"]))
            for s, a, t in zip(z["states"], z["actions"], z["trajectory_ids"]):
                buf._pairs.append((s.astype(float), a.astype(float), str(t)))
        return buf


def record_if_success(traj, label, buf: SuccessBuffer, cfg):
    """Store a labeled-successful episode and add the terminal bonus once.

    Returns ``(buf, traj)``; both are mutated in place.
    """
    if label is None or not label.success:
        return buf, traj
    if traj.reward_trace is None:
        raise InvalidArgumentError("trajectory has no reward trace")
    if not traj.bonus_applied:
        traj.reward_trace.per_step[-1] += cfg.success_bonus
        traj.bonus_applied = True
    buf.extend(traj.features[:-1], traj.actions, traj.traj_id)
    return buf, traj


def regularization_loss(policy, batch):
    """sum over (s, a) in batch of -log pi(a|s)."""
    if not batch:
        return 0.0
    states = np.array([s for s, _ in batch])
    actions = np.array([a for _, a in batch])
    lp = policy.log_prob(states, actions)
    if not np.all(np.isfinite(lp)):
        raise NumericError("non-finite log-probability in imitation batch")
    return float(-np.sum(lp))


def regularization_grad(policy, batch):
    """Gradient of :func:`regularization_loss` w.r.t. the policy parameters."""
    if not batch:
        return np.zeros_like(policy.theta)
    states = np.array([s for s, _ in batch])
    actions = np.array([a for _, a in batch])
    return -policy.grad_log_prob(states, actions)


def combined_loss(rl_loss, reg, lam=1.0):
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    return rl_loss + lam * reg
