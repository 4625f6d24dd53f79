"""Rollout collection, reward computation, self-imitation and actor-critic updates.

The learner is a small advantage actor-critic over the environment's
feature vector: a linear-Gaussian policy and a linear value function
trained with TD targets and generalised advantage estimates.  Rewards
reach it only through the selected rewarder; the environment's success
predicate is read by the labeler and by evaluation, never by the
learning path.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .decomposer import Decomposer, build_prompt_set
from .embeddings import SyntheticEncoder
from .errors import AbortRunError, InvalidArgumentError
from .policy import Adam, GaussianPolicy, LinearCritic
from .rewardcore import PromptSet, RewardConfig, RewardMode, reward_trace
from .selfimitate import SuccessBuffer, record_if_success, regularization_grad, regularization_loss
from .successlabel import label_oracle
from .toyenv import Env, Trajectory, get_task, seed_from

log = logging.getLogger(__name__)

ADV_STD_FLOOR = 0.1
METRIC_COLUMNS = ("env_steps", "eval_success_rate", "rl_loss", "reg_loss", "buffer_size", "labeler_positives")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "door-open"
    reward_mode: str = "decomposed"
    gamma: float = 0.99
    lambda_reg: float = 1.0
    total_env_steps: int = 200_000
    eval_episodes: int = 20
    eval_every: int = 10_000
    seeds: tuple = (0, 1, 2)
    labeler: str = "oracle"
    error_rate: float = 0.0
    no_selfimitation: bool = False
    no_failure_guidance: bool = False
    no_cot: bool = False
    tau: float = 0.1
    window: int = 16
    stride: int = 4
    success_bonus: float = 100.0
    buffer_capacity: int = 50_000
    horizon: int = 200
    episodes_per_batch: int = 4
    minibatch_size: int = 128
    epochs: int = 2
    lr_actor: float = 1e-2
    lr_critic: float = 3e-3
    gae_lambda: float = 0.9
    init_log_std: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgumentError("gamma must be in (0, 1)")
        if self.lambda_reg < 0:
            raise InvalidArgumentError("lambda_reg must be >= 0")
        if self.eval_episodes < 1:
            raise InvalidArgumentError("eval_episodes must be >= 1")
        if self.labeler not in ("oracle", "oracle_noised"):
            raise InvalidArgumentError(f"unknown labeler {self.labeler!r}")
        if self.reward_mode not in {r.value for r in RewardMode}:
            raise InvalidArgumentError(f"unknown reward_mode {self.reward_mode!r}")
        get_task(self.task)

    @property
    def self_imitation(self):
        return not self.no_selfimitation

    @property
    def effective_lambda(self):
        return 0.0 if self.no_selfimitation else self.lambda_reg

    def reward_config(self):
        return RewardConfig(self.tau, self.window, self.stride, self.success_bonus, RewardMode(self.reward_mode))


def make_prompts(cfg: TrainConfig, encoder, decomposer=None):
    """PromptSet for ``cfg.task`` with the prompt ablations applied."""
    decomposer = decomposer or Decomposer()
    instruction = get_task(cfg.task).instruction
    dec = decomposer.decompose(instruction, "fixture")
    prompts = build_prompt_set(dec, encoder, instruction)
    if cfg.no_cot:
        prompts = PromptSet((prompts.coarse,), prompts.negatives, prompts.coarse)
    if cfg.no_failure_guidance:
        prompts = PromptSet(prompts.positives, (), prompts.coarse)
    return prompts


def collect_rollout(env, policy, prompts, cfg: TrainConfig, encoder, rng, env_seed, traj_id="", deterministic=False):
    """One episode under ``policy`` with its reward trace attached."""
    state = env.reset(env_seed)
    obs, acts, frames, feats = [state], [], [env.frame(state)], [env.features(state)]
    done = False
    while not done:
        phi = feats[-1]
        a = policy.mean(phi) if deterministic else policy.sample(phi, rng)
        state, frame, _, done = env.step(state, a)
        obs.append(state)
        acts.append(a)
        frames.append(frame)
        feats.append(env.features(state))
    traj = Trajectory(env.spec.task_id, obs, acts, frames, feats, env_seed=env_seed, traj_id=traj_id)
    traj.terminated = state.t < env.horizon
    if prompts is not None:
        traj.reward_trace = reward_trace(frames, prompts, cfg.reward_config(), encoder)
    return traj


def _transitions(trajs, critic, cfg):
    """Flatten episodes into arrays with GAE advantages and TD targets."""
    S, A, R, S2, TERM, ADV = [], [], [], [], [], []
    for tr in trajs:
        phi = np.asarray(tr.features)
        rew = np.asarray(tr.reward_trace.per_step[1:], float)
        v = critic.value(phi)
        term = np.zeros(tr.T)
        if tr.terminated:
            term[-1] = 1.0
        v_next = v[1:] * (1.0 - term)
        delta = rew + cfg.gamma * v_next - v[:-1]
        adv = np.zeros(tr.T)
        acc = 0.0
        for t in range(tr.T - 1, -1, -1):
            acc = delta[t] + cfg.gamma * cfg.gae_lambda * (1.0 - term[t]) * acc
            adv[t] = acc
        S.append(phi[:-1])
        A.append(np.asarray(tr.actions))
        R.append(rew)
        S2.append(phi[1:])
        TERM.append(term)
        ADV.append(adv)
    adv = np.concatenate(ADV)
    adv = (adv - adv.mean()) / max(adv.std(), ADV_STD_FLOOR)
    return {
        "states": np.concatenate(S),
        "actions": np.concatenate(A),
        "rewards": np.concatenate(R),
        "next_states": np.concatenate(S2),
        "terminal": np.concatenate(TERM),
        "advantages": adv,
    }


@dataclass
class Learner:
    policy: GaussianPolicy
    critic: LinearCritic
    actor_opt: Adam
    critic_opt: Adam


def update(learner: Learner, batch, reg_batch, cfg: TrainConfig):
    """One gradient step on the critic (TD target) and the actor (RL + imitation).

    Returns the loss components as a dict.
    """
    pol, critic = learner.policy, learner.critic
    S, S2 = batch["states"], batch["next_states"]
    if len(S) == 0:
        raise InvalidArgumentError("empty RL batch")
    v = critic.value(S)
    target = batch["rewards"] + cfg.gamma * (1.0 - batch["terminal"]) * critic.value(S2)
    td = target - v
    critic_loss = 0.5 * float(np.mean(td * td))
    critic_grad = -(td @ S) / len(S)

    logp = pol.log_prob(S, batch["actions"])
    adv = batch["advantages"]
    rl_loss = float(-np.sum(adv * logp))
    actor_grad = -pol.grad_log_prob(S, batch["actions"], adv)
    lam = cfg.effective_lambda
    reg_loss = 0.0
    if lam > 0 and reg_batch:
        reg_loss = regularization_loss(pol, reg_batch)
        actor_grad = actor_grad + lam * regularization_grad(pol, reg_batch)
    total = rl_loss + lam * reg_loss
    if not (np.isfinite(total) and np.isfinite(critic_loss) and np.all(np.isfinite(actor_grad))):
        raise AbortRunError(
            "non-finite loss",
            {"rl_loss": rl_loss, "reg_loss": reg_loss, "critic_loss": critic_loss,
             "log_std": pol.log_std.tolist()},
        )
    learner.critic_opt.step(critic.theta, critic_grad)
    learner.actor_opt.step(pol.theta, actor_grad)
    pol.clamp()
    return {"rl_loss": rl_loss, "reg_loss": reg_loss, "critic_loss": critic_loss, "total_loss": total}


def evaluate(policy, env, episodes, seed=0, deterministic=False):
    """Fraction of evaluation episodes ending in ground-truth success."""
    if episodes < 1:
        raise InvalidArgumentError("episodes must be >= 1")
    rng = np.random.default_rng(seed_from("eval-noise", seed))
    wins = 0
    for i in range(episodes):
        state = env.reset(seed_from("eval", seed, i))
        done = False
        while not done:
            phi = env.features(state)
            a = policy.mean(phi) if deterministic else policy.sample(phi, rng)
            state, _, _, done = env.step(state, a)
        wins += bool(env.success(state))
    return wins / episodes


class Trainer:
    """One (config, seed) training run."""

    def __init__(self, cfg: TrainConfig, seed, encoder=None, decomposer=None, prompts=None):
        self.cfg = cfg
        self.seed = seed
        self.encoder = encoder or SyntheticEncoder()
        self.prompts = prompts if prompts is not None else make_prompts(cfg, self.encoder, decomposer)
        self.env = Env(cfg.task, cfg.horizon)
        self.rng = np.random.default_rng(seed_from("train", cfg.task, seed))
        self.label_rng = np.random.default_rng(seed_from("labeler", cfg.task, seed))
        pol = GaussianPolicy(Env.n_features, Env.action_dim, cfg.init_log_std)
        critic = LinearCritic(Env.n_features)
        self.learner = Learner(pol, critic, Adam(pol.theta.size, cfg.lr_actor), Adam(critic.theta.size, cfg.lr_critic))
        self.buffer = SuccessBuffer(cfg.buffer_capacity)
        self.env_steps = 0
        self.episodes = 0
        self.labeler_positives = 0
        self._losses = []

    @property
    def policy(self):
        return self.learner.policy

    def label(self, traj):
        truth = self.env.success(traj.terminal)
        if self.cfg.labeler == "oracle":
            return label_oracle(traj.terminal, truth)
        return label_oracle(traj.terminal, truth, self.cfg.error_rate, self.label_rng)

    def train_iteration(self):
        """Collect a batch of episodes, self-imitate, and run the updates."""
        cfg = self.cfg
        trajs = []
        for _ in range(cfg.episodes_per_batch):
            env_seed = seed_from("train-episode", self.seed, self.episodes)
            tr = collect_rollout(self.env, self.policy, self.prompts, cfg, self.encoder, self.rng, env_seed,
                                 traj_id=f"{cfg.task}/{self.seed}/{self.episodes}")
            self.episodes += 1
            self.env_steps += tr.T
            if cfg.self_imitation:
                decision = self.label(tr)
                if decision.success:
                    self.labeler_positives += 1
                record_if_success(tr, decision, self.buffer, cfg)
            trajs.append(tr)
        batch = _transitions(trajs, self.learner.critic, cfg)
        n = len(batch["states"])
        for _ in range(cfg.epochs):
            order = self.rng.permutation(n)
            for lo in range(0, n, cfg.minibatch_size):
                idx = order[lo:lo + cfg.minibatch_size]
                mb = {k: v[idx] for k, v in batch.items()}
                reg = self.buffer.sample(len(idx), self.rng) if cfg.effective_lambda > 0 else []
                self._losses.append(update(self.learner, mb, reg, cfg))
        return trajs

    def evaluate(self):
        return evaluate(self.policy, self.env, self.cfg.eval_episodes, seed=self.seed)

    def _row(self):
        losses = self._losses
        self._losses = []
        rl = float(np.mean([x["rl_loss"] for x in losses])) if losses else 0.0
        reg = float(np.mean([x["reg_loss"] for x in losses])) if losses else 0.0
        return {
            "env_steps": self.env_steps,
            "eval_success_rate": self.evaluate(),
            "rl_loss": rl,
            "reg_loss": reg,
            "buffer_size": len(self.buffer),
            "labeler_positives": self.labeler_positives,
        }

    def run(self):
        """Train to the step budget; returns the metric rows."""
        rows = []
        next_eval = self.cfg.eval_every
        while self.env_steps < self.cfg.total_env_steps:
            self.train_iteration()
            if self.env_steps >= next_eval or self.env_steps >= self.cfg.total_env_steps:
                rows.append(self._row())
                while next_eval <= self.env_steps:
                    next_eval += self.cfg.eval_every
        return rows


def metrics_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r["env_steps"], repr(float(r["eval_success_rate"])), repr(float(r["rl_loss"])),
                    repr(float(r["reg_loss"])), r["buffer_size"], r["labeler_positives"]])
    return buf.getvalue()


def train(cfg: TrainConfig, seed, **kwargs):
    return Trainer(cfg, seed, **kwargs).run()


def config_to_dict(cfg: TrainConfig):
    d = asdict(cfg)
    d["seeds"] = list(cfg.seeds)
    return d


def config_from_dict(d):
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - names
    if unknown:
        raise InvalidArgumentError(f"unknown TrainConfig keys: {sorted(unknown)}")
    d = dict(d)
    if "seeds" in d:
        d["seeds"] = tuple(d["seeds"])
    return TrainConfig(**d)


__all__ = [
    "METRIC_COLUMNS", "TrainConfig", "Trainer", "collect_rollout", "evaluate", "make_prompts",
    "metrics_csv", "train", "update",
]
