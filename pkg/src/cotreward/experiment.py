"""Experiment matrices: config files, run orchestration and summaries.

A run directory looks like::

    <run>/
      manifest.json        layout version, code revision, resolved config
      config.txt           the experiment config, re-serialised
      metrics/<task>__<method>__<ablation>__seed<k>.csv
      trajectories/...     optional final-policy episode dumps (JSONL)
      summary.csv          final success per (task, method, ablation)
      curves.csv           mean/std success per evaluation point
      improvement.json     ours vs. best baseline per task

Everything under ``summary.csv``, ``curves.csv`` and ``improvement.json``
is recomputed from the metric CSVs alone.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .decomposer import Decomposer
from .embeddings import SyntheticEncoder
from .errors import InvalidArgumentError, NotFoundError
from .rewardcore import RewardMode
from .toyenv import dump_trajectories, get_task, seed_from
from .trainer import TrainConfig, Trainer, collect_rollout, metrics_csv

LAYOUT_VERSION = 1
OURS = RewardMode.DECOMPOSED.value
ABLATIONS = ("none", "no_selfimitation", "no_failure_guidance", "no_cot", "baselines_with_selfimitation")
NOISE_PREFIX = "labeler_noise="


def _parse_ablation(token):
    if token in ABLATIONS:
        return token
    if token.startswith(NOISE_PREFIX):
        eps = float(token[len(NOISE_PREFIX):])
        if not 0.0 <= eps < 0.5:
            raise InvalidArgumentError(f"labeler noise {eps} outside [0, 0.5)")
        return f"{NOISE_PREFIX}{eps!r}"
    raise InvalidArgumentError(f"unknown ablation {token!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    tasks: tuple
    methods: tuple = (OURS,)
    ablations: tuple = ("none",)
    seeds: tuple = (0, 1, 2)
    budget: int = 40_000
    eval_episodes: int = 20
    eval_every: int = 10_000
    dump_trajectories: bool = False

    def __post_init__(self):
        for name in ("tasks", "methods", "ablations", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.name:
            raise InvalidArgumentError("experiment needs a name")
        if not self.tasks or not self.methods:
            raise InvalidArgumentError("tasks and methods must be nonempty")
        if not self.seeds:
            raise InvalidArgumentError("need at least one seed")
        for t in self.tasks:
            get_task(t)
        for m in self.methods:
            if m not in {r.value for r in RewardMode}:
                raise InvalidArgumentError(f"unknown method {m!r}")
        object.__setattr__(self, "ablations", tuple(_parse_ablation(a) for a in self.ablations))
        if self.budget < 1 or self.eval_episodes < 1 or self.eval_every < 1:
            raise InvalidArgumentError("budget, eval_episodes and eval_every must be positive")

    def jobs(self):
        """(task, method, ablation, seed) in a fixed order."""
        return [(t, m, a, s) for t in self.tasks for m in self.methods for a in self.ablations for s in self.seeds]

    def train_config(self, task, method, ablation):
        base = TrainConfig(
            task=task,
            reward_mode=method,
            no_selfimitation=method != OURS,
            total_env_steps=self.budget,
            eval_episodes=self.eval_episodes,
            eval_every=self.eval_every,
            seeds=self.seeds,
        )
        return replace(base, **ablation_mutation(ablation))


def ablation_mutation(ablation):
    """The single TrainConfig change an ablation stands for."""
    ablation = _parse_ablation(ablation)
    if ablation == "none":
        return {}
    if ablation in ("no_selfimitation", "no_failure_guidance", "no_cot"):
        return {ablation: True}
    if ablation == "baselines_with_selfimitation":
        return {"no_selfimitation": False}
    eps = float(ablation[len(NOISE_PREFIX):])
    return {"labeler": "oracle_noised", "error_rate": eps}


# -- config text format ------------------------------------------------------

_FIELD_TYPES = {
    "name": str,
    "tasks": "list[str]",
    "methods": "list[str]",
    "ablations": "list[str]",
    "seeds": "list[int]",
    "budget": int,
    "eval_episodes": int,
    "eval_every": int,
    "dump_trajectories": bool,
}


def _parse_value(key, raw):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "list[str]":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if kind == "list[int]":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        return kind(raw)
    except ValueError:
        raise InvalidArgumentError(f"bad value for {key}: {raw!r}") from None


def parse_config(text):
    """Parse ``key = value`` lines into an :class:`ExperimentSpec`."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"config line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise InvalidArgumentError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise InvalidArgumentError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    if "name" not in values or "tasks" not in values:
        raise InvalidArgumentError("config needs at least 'name' and 'tasks'")
    return ExperimentSpec(**values)


def serialize_config(spec: ExperimentSpec):
    lines = []
    for f in fields(ExperimentSpec):
        v = getattr(spec, f.name)
        if isinstance(v, tuple):
            v = ", ".join(map(str, v))
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path):
    return parse_config(Path(path).read_text("utf-8"))


# -- running -------------------------------------------------------------------

def job_key(task, method, ablation, seed):
    return f"{task}__{method}__{ablation.replace('=', '-')}__seed{seed}"


def code_revision():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        rev = out.stdout.strip() if out.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        rev = "unknown"
    return f"{__version__}+{rev}"


def check_fixtures(spec: ExperimentSpec, decomposer=None, encoder=None):
    """Fail before training if any task lacks a decomposition or prompt mapping."""
    decomposer = decomposer or Decomposer()
    encoder = encoder or SyntheticEncoder()
    for task in spec.tasks:
        instruction = get_task(task).instruction
        dec = decomposer.decompose(instruction, "fixture")
        for prompt in (instruction, *dec.subgoals, *dec.failures):
            if encoder.event_for_prompt(prompt) is None:
                raise NotFoundError(f"prompt {prompt!r} for {task!r} has no event in the prompt table")


def run_job(spec: ExperimentSpec, task, method, ablation, seed):
    """Train one configuration; returns (metrics csv text, final trajectories or None)."""
    cfg = spec.train_config(task, method, ablation)
    trainer = Trainer(cfg, seed)
    rows = trainer.run()
    trajs = None
    if spec.dump_trajectories:
        # same episode seeds and action-noise stream as the final evaluation
        rng = np.random.default_rng(seed_from("eval-noise", seed))
        trajs = [
            collect_rollout(trainer.env, trainer.policy, trainer.prompts, cfg, trainer.encoder, rng,
                            seed_from("eval", seed, i), traj_id=f"{job_key(task, method, ablation, seed)}/{i}")
            for i in range(cfg.eval_episodes)
        ]
    return metrics_csv(rows), trajs


def _run_job_star(args):
    return run_job(*args)


def run(spec: ExperimentSpec, out_dir, workers=1):
    """Execute every job of ``spec`` into ``out_dir`` and summarise it."""
    check_fixtures(spec)
    out = Path(out_dir)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    config_text = serialize_config(spec)
    (out / "config.txt").write_text(config_text, "utf-8")
    manifest = {"layout_version": LAYOUT_VERSION, "code_revision": code_revision(), "config": config_text}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", "utf-8")

    jobs = spec.jobs()
    args = [(spec, *j) for j in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job_star, args))
    else:
        results = [_run_job_star(a) for a in args]
    for job, (text, trajs) in zip(jobs, results):
        key = job_key(*job)
        (out / "metrics" / f"{key}.csv").write_text(text, "utf-8")
        if trajs is not None:
            (out / "trajectories").mkdir(exist_ok=True)
            dump_trajectories(out / "trajectories" / f"{key}.jsonl", trajs)
    summarize(out)
    return out


# -- summaries -----------------------------------------------------------------

def read_metrics(path):
    with open(path, newline="", encoding="utf-8") as f:
        return [
            {"env_steps": int(r["env_steps"]), "eval_success_rate": float(r["eval_success_rate"])}
            for r in csv.DictReader(f)
        ]


def _mean_std(values):
    arr = np.asarray(values, float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


@dataclass
class Summary:
    rows: list
    improvement: dict

    @property
    def incomplete(self):
        return [r for r in self.rows if r["status"] != "complete"]


def summarize(run_dir):
    """Aggregate final success rates; missing seeds are reported, not dropped."""
    run_dir = Path(run_dir)
    spec = load_config(run_dir / "config.txt")
    rows, curves = [], []
    for task in spec.tasks:
        for method in spec.methods:
            for ablation in spec.ablations:
                finals, missing, per_seed = [], [], []
                for seed in spec.seeds:
                    path = run_dir / "metrics" / f"{job_key(task, method, ablation, seed)}.csv"
                    if not path.exists():
                        missing.append(seed)
                        continue
                    m = read_metrics(path)
                    if not m:
                        missing.append(seed)
                        continue
                    finals.append(m[-1]["eval_success_rate"])
                    per_seed.append(m)
                mean, std = _mean_std(finals) if finals else (math.nan, math.nan)
                status = "complete" if not missing else "incomplete:missing_seeds=" + ";".join(map(str, missing))
                rows.append({
                    "task": task, "method": method, "ablation": ablation, "n_seeds": len(finals),
                    "mean_success": mean, "std_success": std, "status": status,
                })
                if per_seed and all(len(m) == len(per_seed[0]) for m in per_seed):
                    for i, point in enumerate(per_seed[0]):
                        vals = [m[i]["eval_success_rate"] for m in per_seed]
                        mu, sd = _mean_std(vals)
                        curves.append({"task": task, "method": method, "ablation": ablation,
                                       "env_steps": point["env_steps"], "mean_success": mu,
                                       "std_success": sd, "n_seeds": len(vals)})
    improvement = improvement_ratio(rows)

    cols = ["task", "method", "ablation", "n_seeds", "mean_success", "std_success", "status"]
    with open(run_dir / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    ccols = ["task", "method", "ablation", "env_steps", "mean_success", "std_success", "n_seeds"]
    with open(run_dir / "curves.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, ccols, lineterminator="\n")
        w.writeheader()
        w.writerows(curves)
    (run_dir / "improvement.json").write_text(json.dumps(improvement, indent=2, sort_keys=True) + "\n", "utf-8")
    return Summary(rows, improvement)


def improvement_ratio(rows):
    """Mean over tasks of ours / best baseline, using the ``none`` ablation rows.

    Tasks where the best baseline scores zero give an undefined ratio; they
    are listed but left out of the mean.
    """
    per_task = {}
    for task in dict.fromkeys(r["task"] for r in rows):
        base = {r["method"]: r["mean_success"] for r in rows
                if r["task"] == task and r["ablation"] == "none" and r["status"] == "complete"}
        if OURS not in base or len(base) < 2:
            continue
        best = max(v for m, v in base.items() if m != OURS)
        per_task[task] = {"ours": base[OURS], "best_baseline": best,
                          "ratio": base[OURS] / best if best > 0 else None}
    ratios = [v["ratio"] for v in per_task.values() if v["ratio"] is not None]
    return {
        "per_task": per_task,
        "mean_ratio": float(np.mean(ratios)) if ratios else None,
        "tasks_used": len(ratios),
    }
