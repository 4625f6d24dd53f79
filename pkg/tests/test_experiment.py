import csv
import json
import statistics

import pytest

import cotreward.experiment as exp
from cotreward.decomposer import DecompositionCache, Decomposer
from cotreward.embeddings import SyntheticEncoder
from cotreward.errors import InvalidArgumentError, NotFoundError
from cotreward.experiment import (
    ExperimentSpec,
    ablation_mutation,
    job_key,
    parse_config,
    run,
    serialize_config,
    summarize,
)
from cotreward.trainer import METRIC_COLUMNS, make_prompts

TINY = dict(budget=600, eval_every=600, eval_episodes=2)


def write_metrics(run_dir, key, finals_by_step):
    path = run_dir / "metrics" / f"{key}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for step, rate in finals_by_step:
            w.writerow([step, rate, 0.0, 0.0, 0, 0])


def make_run(tmp_path, spec):
    (tmp_path / "config.txt").write_text(serialize_config(spec))
    return tmp_path


def test_one_task_two_methods_one_seed_gives_two_csvs(tmp_path):
    spec = ExperimentSpec("t", ("door-open",), ("decomposed", "final_segment"), seeds=(0,), **TINY)
    out = run(spec, tmp_path / "run")
    assert len(list((out / "metrics").glob("*.csv"))) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["layout_version"] == 1 and manifest["code_revision"].startswith("0.1.0+")
    for name in ("summary.csv", "curves.csv", "improvement.json", "config.txt"):
        assert (out / name).exists()


def test_config_round_trip():
    text = """
    name = matrix   # comment
    tasks = door-open, drawer-open
    methods = decomposed, single_prompt
    ablations = none, no_cot, labeler_noise=0.2
    seeds = 0, 1, 2
    budget = 1000
    dump_trajectories = true
    """
    spec = parse_config(text)
    assert spec.ablations == ("none", "no_cot", "labeler_noise=0.2")
    assert parse_config(serialize_config(spec)) == spec
    assert serialize_config(parse_config(serialize_config(spec))) == serialize_config(spec)


@pytest.mark.parametrize("text", [
    "name = x\ntasks = door-open\nbudgte = 5",
    "name = x\ntasks = door-open\ntasks = drawer-open",
    "name = x\ntasks = door-open\nseeds = a",
    "name = x\ntasks = teleport",
    "name = x\ntasks = door-open\nablations = no_reward",
    "name = x\ntasks = door-open\nablations = labeler_noise=0.7",
    "tasks = door-open",
    "name = x\ntasks = door-open\nmethods = clip",
])
def test_config_errors(text):
    with pytest.raises((InvalidArgumentError, NotFoundError)):
        parse_config(text)


def test_each_ablation_is_one_mutation():
    assert ablation_mutation("none") == {}
    assert ablation_mutation("no_selfimitation") == {"no_selfimitation": True}
    assert ablation_mutation("no_failure_guidance") == {"no_failure_guidance": True}
    assert ablation_mutation("no_cot") == {"no_cot": True}
    assert ablation_mutation("baselines_with_selfimitation") == {"no_selfimitation": False}
    assert ablation_mutation("labeler_noise=0.2") == {"labeler": "oracle_noised", "error_rate": 0.2}


def test_baselines_default_without_selfimitation():
    spec = ExperimentSpec("t", ("door-open",), ("decomposed", "single_prompt"))
    assert spec.train_config("door-open", "decomposed", "none").self_imitation
    assert not spec.train_config("door-open", "single_prompt", "none").self_imitation
    assert spec.train_config("door-open", "single_prompt", "baselines_with_selfimitation").self_imitation


def test_no_cot_collapses_positives_to_coarse_prompt():
    spec = ExperimentSpec("t", ("door-open",), ablations=("no_cot",))
    prompts = make_prompts(spec.train_config("door-open", "decomposed", "no_cot"), SyntheticEncoder())
    assert [p for p, _ in prompts.positives] == ["open the door"]
    assert prompts.negatives


def test_summary_mean_and_std(tmp_path):
    spec = ExperimentSpec("t", ("door-open",), seeds=(0, 1, 2))
    run_dir = make_run(tmp_path, spec)
    for seed, rate in zip((0, 1, 2), (0.8, 0.7, 0.9)):
        write_metrics(run_dir, job_key("door-open", "decomposed", "none", seed), [(100, 0.0), (200, rate)])
    (row,) = summarize(run_dir).rows
    assert row["mean_success"] == pytest.approx(0.8, abs=1e-12)
    assert row["std_success"] == pytest.approx(0.1, abs=1e-12)
    assert row["status"] == "complete"


def test_missing_seed_is_marked_incomplete(tmp_path):
    spec = ExperimentSpec("t", ("door-open",), seeds=(0, 1, 2))
    run_dir = make_run(tmp_path, spec)
    for seed in (0, 2):
        write_metrics(run_dir, job_key("door-open", "decomposed", "none", seed), [(100, 1.0)])
    summary = summarize(run_dir)
    (row,) = summary.rows
    assert row["status"] == "incomplete:missing_seeds=1"
    assert row["n_seeds"] == 2
    assert summary.incomplete == [row]
    text = (run_dir / "summary.csv").read_text()
    assert "incomplete:missing_seeds=1" in text


def test_summarize_is_idempotent(tmp_path):
    spec = ExperimentSpec("t", ("door-open",), ("decomposed", "single_prompt"), seeds=(0, 1))
    run_dir = make_run(tmp_path, spec)
    for m, s, r in [("decomposed", 0, 0.9), ("decomposed", 1, 0.6), ("single_prompt", 0, 0.2), ("single_prompt", 1, 0.1)]:
        write_metrics(run_dir, job_key("door-open", m, "none", s), [(50, r / 2), (100, r)])
    summarize(run_dir)
    first = {n: (run_dir / n).read_bytes() for n in ("summary.csv", "curves.csv", "improvement.json")}
    summarize(run_dir)
    assert first == {n: (run_dir / n).read_bytes() for n in first}


def test_improvement_ratio_matches_independent_recheck(tmp_path):
    tasks = ("door-open", "drawer-open", "window-open")
    methods = ("decomposed", "single_prompt", "final_segment")
    spec = ExperimentSpec("t", tasks, methods, seeds=(0, 1))
    run_dir = make_run(tmp_path, spec)
    rates = {
        ("door-open", "decomposed"): (1.0, 0.9), ("door-open", "single_prompt"): (0.2, 0.3),
        ("door-open", "final_segment"): (0.1, 0.1),
        ("drawer-open", "decomposed"): (0.6, 0.8), ("drawer-open", "single_prompt"): (0.1, 0.1),
        ("drawer-open", "final_segment"): (0.4, 0.4),
        ("window-open", "decomposed"): (0.5, 0.5), ("window-open", "single_prompt"): (0.0, 0.0),
        ("window-open", "final_segment"): (0.0, 0.0),
    }
    for (t, m), pair in rates.items():
        for seed, r in zip((0, 1), pair):
            write_metrics(run_dir, job_key(t, m, "none", seed), [(10, r)])
    summarize(run_dir)

    # recheck straight from the CSV files
    finals = {}
    for path in (run_dir / "metrics").glob("*.csv"):
        task, method, _, _ = path.stem.split("__")
        with open(path) as f:
            last = list(csv.DictReader(f))[-1]
        finals.setdefault((task, method), []).append(float(last["eval_success_rate"]))
    ratios = []
    for t in tasks:
        best = max(statistics.mean(finals[(t, m)]) for m in methods[1:])
        if best > 0:
            ratios.append(statistics.mean(finals[(t, "decomposed")]) / best)
    imp = json.loads((run_dir / "improvement.json").read_text())
    assert imp["mean_ratio"] == pytest.approx(statistics.mean(ratios), rel=1e-12)
    assert imp["tasks_used"] == 2
    assert imp["per_task"]["window-open"]["ratio"] is None


def test_missing_fixture_fails_before_training(tmp_path, monkeypatch):
    monkeypatch.setattr(exp, "Decomposer", lambda: Decomposer(DecompositionCache(tmp_path / "empty.jsonl")))
    spec = ExperimentSpec("t", ("door-open",), seeds=(0,), **TINY)
    with pytest.raises(NotFoundError):
        run(spec, tmp_path / "run")
    assert not (tmp_path / "run").exists()


def test_parallel_run_matches_serial(tmp_path):
    spec = ExperimentSpec("t", ("button-press",), ("decomposed", "single_prompt"), seeds=(0, 1), **TINY)
    a = run(spec, tmp_path / "a", workers=1)
    b = run(spec, tmp_path / "b", workers=2)
    for p in (a / "metrics").glob("*.csv"):
        assert p.read_bytes() == (b / "metrics" / p.name).read_bytes()
