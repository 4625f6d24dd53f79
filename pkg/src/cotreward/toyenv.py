"""Desk-scale 2D manipulation tasks with ground-truth sub-goal events.

Every task is a single articulated part (door, drawer, window, button,
faucet, ball on a rail) whose configuration is one scalar ``q``.  The
gripper is a point in the unit square that moves by at most ``MAX_STEP``
per step.  Parts are either *grasp*-driven (the gripper must close on the
handle and drag it) or *push*-driven (contact plus motion along the
part's progress direction moves it).  Opening tasks are grasp-driven and
closing tasks push-driven, which keeps opening harder than closing.

Frames carry a feature vector and the set of canonical events true at
that frame.  Events are what the synthetic encoder consumes; nothing is
rendered.
"""

from __future__ import annotations

import contextvars
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import NotFoundError

HORIZON = 200
MAX_STEP = 0.04
NEAR_RADIUS = 0.12
# Minimum per-step change in gripper-to-handle distance that counts as
# deliberately closing in on (or backing away from) the part.
APPROACH_SPEED = 0.3 * MAX_STEP
GRASP_RADIUS = 0.05
CONTACT_RADIUS = 0.05
MOTION_EPS = 1e-4

# Set while Env.step runs so tripwire tests can tell termination checks
# apart from direct reads of the success predicate.
_inside_step = contextvars.ContextVar("inside_step", default=False)


@dataclass(frozen=True)
class FrameFeature:
    values: np.ndarray
    event_tags: frozenset = frozenset()

    def to_dict(self):
        return {"values": [float(v) for v in self.values], "event_tags": sorted(self.event_tags)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["values"], dtype=float), frozenset(d["event_tags"]))


@dataclass(frozen=True)
class TaskSpec:
    """Geometry and vocabulary of one task.

    ``kind`` is ``"rotary"`` (q is an angle about ``anchor``, handle at
    ``anchor + radius * (cos(phi0 + spin*q), sin(phi0 + spin*q))``) or
    ``"linear"`` (handle at ``anchor + q * axis``).  ``direction`` is +1
    when the task drives q upward and -1 when it drives q downward.
    """

    task_id: str
    instruction: str
    part: str
    kind: str
    mode: str
    q_start: float
    q_min: float
    q_max: float
    threshold: float
    direction: int
    anchor_low: tuple
    anchor_high: tuple
    radius: float = 0.0
    phi0: float = 0.0
    spin: int = 1
    axis: tuple = (1.0, 0.0)
    subgoal_events: tuple = ()
    failure_events: tuple = ()

    @property
    def events(self):
        return self.subgoal_events + self.failure_events

    @property
    def success_event(self):
        return self.subgoal_events[-1]


def _grasp_events(part, move, done):
    return (f"approach-{part}", f"grasp-{part}", f"{move}-{part}", done), (
        f"leave-{part}",
        f"push-{part}-back",
        f"release-{part}",
    )


def _push_events(part, move, done):
    return (f"approach-{part}", f"{move}-{part}", done), (
        f"leave-{part}",
        f"slip-{part}",
    )


def _make_registry():
    tasks = []

    def add(task_id, instruction, part, kind, mode, move, done, **kw):
        if mode == "grasp":
            sub, fail = _grasp_events(part, move, done)
        else:
            sub, fail = _push_events(part, move, done)
        tasks.append(
            TaskSpec(task_id, instruction, part, kind, mode, subgoal_events=sub, failure_events=fail, **kw)
        )

    door = dict(kind="rotary", radius=0.2, phi0=0.0, spin=-1, q_min=0.0, q_max=math.pi / 2,
                anchor_low=(0.3, 0.55), anchor_high=(0.55, 0.75))
    add("door-open", "open the door", "handle", mode="grasp", move="pull", done="door-open",
        q_start=0.0, threshold=1.2, direction=1, **door)
    add("door-close", "close the door", "door", mode="push", move="push", done="door-closed",
        q_start=1.3, threshold=0.15, direction=-1, **door)

    drawer = dict(kind="linear", axis=(0.0, -1.0), q_min=0.0, q_max=0.3,
                  anchor_low=(0.3, 0.6), anchor_high=(0.7, 0.8))
    add("drawer-open", "open the drawer", "drawer-handle", mode="grasp", move="pull", done="drawer-open",
        q_start=0.0, threshold=0.2, direction=1, **drawer)
    add("drawer-close", "close the drawer", "drawer", mode="push", move="push", done="drawer-closed",
        q_start=0.25, threshold=0.02, direction=-1, **drawer)

    window = dict(kind="linear", axis=(1.0, 0.0), q_min=0.0, q_max=0.35,
                  anchor_low=(0.2, 0.5), anchor_high=(0.45, 0.8))
    add("window-open", "open the window", "window-handle", mode="grasp", move="slide", done="window-open",
        q_start=0.0, threshold=0.25, direction=1, **window)
    add("window-close", "close the window", "window", mode="push", move="push", done="window-closed",
        q_start=0.3, threshold=0.03, direction=-1, **window)

    add("button-press", "press the button", "button", kind="linear", mode="push", move="press",
        done="button-pressed", axis=(0.0, 1.0), q_min=0.0, q_max=0.08, q_start=0.0, threshold=0.06,
        direction=1, anchor_low=(0.2, 0.5), anchor_high=(0.8, 0.8))
    add("faucet-open", "open the faucet", "faucet", kind="rotary", mode="push", move="turn",
        done="faucet-open", radius=0.12, phi0=-math.pi / 2, spin=1, q_min=0.0, q_max=math.pi / 2,
        q_start=0.0, threshold=1.0, direction=1, anchor_low=(0.3, 0.5), anchor_high=(0.7, 0.7))
    add("push-ball", "push the ball into the goal", "ball", kind="linear", mode="push", move="push",
        done="ball-in-goal", axis=(0.0, 1.0), q_min=0.0, q_max=0.3, q_start=0.0, threshold=0.25,
        direction=1, anchor_low=(0.3, 0.35), anchor_high=(0.7, 0.5))
    return {t.task_id: t for t in tasks}


TASKS = _make_registry()
EVENT_VOCABULARY = tuple(sorted({e for t in TASKS.values() for e in t.events}))


def get_task(task_id):
    try:
        return TASKS[task_id]
    except KeyError:
        raise NotFoundError(f"unknown task {task_id!r}; known: {sorted(TASKS)}") from None


def task_for_instruction(instruction):
    for t in TASKS.values():
        if t.instruction == instruction:
            return t
    raise NotFoundError(f"no task with instruction {instruction!r}")


@dataclass(frozen=True, eq=False)
class EnvState:
    """Full simulator state.

    ``anchor`` is the randomized object pose (door hinge, drawer base,
    ...); ``q`` the articulation (door angle in radians, drawer/window
    extension, button depression, ball travel).
    """

    task_id: str
    gripper: np.ndarray
    velocity: np.ndarray
    closed: bool
    grasped: bool
    anchor: np.ndarray
    q: float
    t: int = 0
    had_grasped: bool = False
    dropped: bool = False

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def to_dict(self):
        return {
            "task_id": self.task_id,
            "gripper": [float(v) for v in self.gripper],
            "velocity": [float(v) for v in self.velocity],
            "closed": self.closed,
            "grasped": self.grasped,
            "anchor": [float(v) for v in self.anchor],
            "q": float(self.q),
            "t": self.t,
            "had_grasped": self.had_grasped,
            "dropped": self.dropped,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["task_id"], np.asarray(d["gripper"], float), np.asarray(d["velocity"], float),
            bool(d["closed"]), bool(d["grasped"]), np.asarray(d["anchor"], float), float(d["q"]),
            int(d["t"]), bool(d["had_grasped"]), bool(d["dropped"]),
        )


def seed_from(*parts):
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256("/".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


class Env:
    """One task instance. Single-threaded; use one instance per worker."""

    n_features = 11
    action_dim = 3

    def __init__(self, task_id, horizon=HORIZON):
        self.spec = get_task(task_id)
        self.horizon = horizon

    # -- geometry -----------------------------------------------------
    def handle(self, state):
        s = self.spec
        if s.kind == "rotary":
            phi = s.phi0 + s.spin * state.q
            return state.anchor + s.radius * np.array([math.cos(phi), math.sin(phi)])
        return state.anchor + state.q * np.asarray(s.axis)

    def tangent(self, state):
        """Unit direction in which the handle moves as q increases."""
        s = self.spec
        if s.kind == "rotary":
            phi = s.phi0 + s.spin * state.q
            return s.spin * np.array([-math.sin(phi), math.cos(phi)])
        return np.asarray(s.axis, dtype=float)

    def _dq_per_unit(self):
        return 1.0 / self.spec.radius if self.spec.kind == "rotary" else 1.0

    def progress_dir(self, state):
        return self.spec.direction * self.tangent(state)

    def distance(self, state):
        return float(np.linalg.norm(self.handle(state) - state.gripper))

    # -- MDP ----------------------------------------------------------
    def reset(self, seed):
        s = self.spec
        rng = np.random.default_rng(seed_from(s.task_id, seed))
        anchor = rng.uniform(s.anchor_low, s.anchor_high)
        gripper = np.array([0.5, 0.1])
        return EnvState(s.task_id, gripper, np.zeros(2), False, False, anchor, s.q_start)

    def success(self, state):
        s = self.spec
        if s.direction > 0:
            return state.q >= s.threshold
        return state.q <= s.threshold

    def _success_internal(self, state):
        token = _inside_step.set(True)
        try:
            return self.success(state)
        finally:
            _inside_step.reset(token)

    def step(self, state, action):
        """Advance one step. Actions are clipped to [-1, 1]^3.

        Returns ``(next_state, frame, events, done)``.
        """
        s = self.spec
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        closed = bool(a[2] > 0.0)
        old_q = state.q
        old_dist = self.distance(state)
        target = np.clip(state.gripper + MAX_STEP * a[:2], 0.0, 1.0)

        grasped = state.grasped and closed
        if not state.grasped and closed and s.mode == "grasp" and old_dist < GRASP_RADIUS:
            grasped = True

        q = old_q
        gripper = target
        contact = False
        if s.mode == "grasp" and grasped:
            ds = float(self.tangent(state) @ (target - state.gripper))
            q = float(np.clip(old_q + ds * self._dq_per_unit(), s.q_min, s.q_max))
            gripper = self.handle(replace(state, q=q))
        elif s.mode == "push" and old_dist < CONTACT_RADIUS:
            contact = True
            ds = float(self.progress_dir(state) @ (target - state.gripper))
            if ds > 0:
                q = float(np.clip(old_q + s.direction * ds * self._dq_per_unit(), s.q_min, s.q_max))

        had_grasped = state.had_grasped or grasped
        dropped = (state.dropped or (state.grasped and not grasped)) and not grasped
        nxt = EnvState(
            s.task_id, gripper, gripper - state.gripper, closed, grasped, state.anchor, q,
            state.t + 1, had_grasped, dropped,
        )
        succ = self._success_internal(nxt)
        events = self._events(state, nxt, old_dist, contact, succ)
        dropped = dropped and not succ
        if dropped != nxt.dropped:
            nxt = replace(nxt, dropped=dropped)
        done = succ or nxt.t >= self.horizon
        return nxt, self.frame(nxt, events), events, done

    def _events(self, prev, nxt, old_dist, contact, succ):
        s = self.spec
        sub, fail = s.subgoal_events, s.failure_events
        dist = self.distance(nxt)
        dq = (nxt.q - prev.q) * s.direction
        engaged = nxt.grasped if s.mode == "grasp" else contact
        ev = set()
        if succ:
            ev.add(sub[-1])
        if not engaged:
            if dist < NEAR_RADIUS or old_dist - dist > APPROACH_SPEED:
                ev.add(sub[0])
            elif dist - old_dist > APPROACH_SPEED:
                ev.add(fail[0])
        if s.mode == "grasp":
            if nxt.grasped:
                ev.add(sub[1])
                if dq > MOTION_EPS:
                    ev.add(sub[2])
                elif dq < -MOTION_EPS:
                    ev.add(fail[1])
            if nxt.dropped and not succ:
                ev.add(fail[2])
        elif contact:
            if dq > MOTION_EPS:
                ev.add(sub[1])
            elif float(np.linalg.norm(nxt.velocity)) > MOTION_EPS:
                ev.add(fail[1])
        return frozenset(ev)

    def frame(self, state, events=frozenset()):
        h = self.handle(state)
        span = self.spec.q_max - self.spec.q_min
        values = np.array([
            *state.gripper, *state.velocity, float(state.closed), *h,
            (state.q - self.spec.q_min) / span,
        ])
        return FrameFeature(values, frozenset(events))

    def features(self, state):
        """Policy/critic input: handle-relative geometry and contact flags."""
        s = self.spec
        rel = (self.handle(state) - state.gripper) / MAX_STEP
        rel = np.clip(rel, -5.0, 5.0)
        dist = self.distance(state)
        near = float(dist < NEAR_RADIUS)
        touch = float(dist < (GRASP_RADIUS if s.mode == "grasp" else CONTACT_RADIUS))
        engaged = float(state.grasped) if s.mode == "grasp" else touch
        pdir = self.progress_dir(state)
        span = s.q_max - s.q_min
        progress = (state.q - s.q_start) / span * s.direction
        return np.array([
            rel[0], rel[1], near, touch, 1.0 if state.closed else -1.0, float(state.grasped),
            engaged * pdir[0], engaged * pdir[1], progress, float(state.dropped), 1.0,
        ])


def expert_action(env, state):
    """Scripted controller that solves every registered task."""
    s = env.spec
    rel = env.handle(state) - state.gripper
    move = np.clip(rel / MAX_STEP, -1.0, 1.0)
    dist = float(np.linalg.norm(rel))
    if s.mode == "grasp":
        if state.grasped:
            return np.array([*env.progress_dir(state), 1.0])
        return np.array([*move, 1.0 if dist < GRASP_RADIUS * 1.5 else -1.0])
    if dist < CONTACT_RADIUS:
        # push along the part while re-centring on it
        return np.array([*np.clip(env.progress_dir(state) + 0.5 * move, -1.0, 1.0), -1.0])
    return np.array([*move, -1.0])


@dataclass
class Trajectory:
    """One episode. ``frames`` is aligned 1:1 with ``observations``."""

    task_id: str
    observations: list
    actions: list
    frames: list
    features: list
    reward_trace: object = None
    env_seed: int = 0
    traj_id: str = ""
    terminated: bool = False
    bonus_applied: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.actions)

    @property
    def terminal(self):
        return self.observations[-1]

    def to_record(self):
        return {
            "traj_id": self.traj_id,
            "task_id": self.task_id,
            "env_seed": self.env_seed,
            "observations": [o.to_dict() for o in self.observations],
            "actions": [[float(x) for x in a] for a in self.actions],
            "frames": [f.to_dict() for f in self.frames],
            "per_step_reward": (
                None if self.reward_trace is None else [float(x) for x in self.reward_trace.per_step]
            ),
        }


def rollout(env, act, seed, traj_id=""):
    """Run one episode with ``act(state) -> action``."""
    state = env.reset(seed)
    obs, acts, frames, feats = [state], [], [env.frame(state)], [env.features(state)]
    done = False
    while not done:
        a = np.asarray(act(state), dtype=float)
        state, frame, _, done = env.step(state, a)
        obs.append(state)
        acts.append(a)
        frames.append(frame)
        feats.append(env.features(state))
    traj = Trajectory(env.spec.task_id, obs, acts, frames, feats, env_seed=seed, traj_id=traj_id)
    # Ending before the horizon is a true terminal; at the horizon it is a
    # time-limit truncation and learners should bootstrap.
    traj.terminated = state.t < env.horizon
    return traj


def dump_trajectories(path, trajectories: Iterable[Trajectory]):
    with open(path, "w", encoding="utf-8") as f:
        for tr in trajectories:
            f.write(json.dumps(tr.to_record()) + "\n")


def load_trajectory_records(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
