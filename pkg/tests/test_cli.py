import json
import subprocess
import sys

import pytest

from cotreward.cli import (
    EXIT_CONFIG,
    EXIT_INCOMPLETE,
    EXIT_NOT_FOUND,
    EXIT_OK,
    EXIT_TRANSPORT,
    main,
)

CONFIG = """name = cli-smoke
tasks = button-press
methods = decomposed
seeds = 0
budget = 600
eval_every = 600
eval_episodes = 2
dump_trajectories = true
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    (base / "exp.txt").write_text(CONFIG)
    assert main(["run", str(base / "exp.txt"), "--out", str(base / "run")]) == EXIT_OK
    return base / "run"


def test_run_layout(run_dir):
    assert (run_dir / "metrics" / "button-press__decomposed__none__seed0.csv").exists()
    assert (run_dir / "trajectories" / "button-press__decomposed__none__seed0.jsonl").exists()


def test_summarize_ok_then_incomplete(run_dir, tmp_path, capsys):
    assert main(["summarize", str(run_dir)]) == EXIT_OK
    assert "button-press" in capsys.readouterr().out
    (run_dir / "metrics" / "button-press__decomposed__none__seed0.csv").rename(tmp_path / "moved.csv")
    try:
        assert main(["summarize", str(run_dir)]) == EXIT_INCOMPLETE
    finally:
        (tmp_path / "moved.csv").rename(run_dir / "metrics" / "button-press__decomposed__none__seed0.csv")


def test_label_audit_oracle(run_dir, tmp_path):
    traj = run_dir / "trajectories" / "button-press__decomposed__none__seed0.jsonl"
    out = tmp_path / "audit.jsonl"
    assert main(["label-audit", str(traj), "--out", str(out)]) == EXIT_OK
    recs = [json.loads(x) for x in out.read_text().splitlines()]
    assert len(recs) == 2
    assert all(r["source"] == "oracle" and r["raw_response"] is None for r in recs)


def test_label_audit_vlm_without_credentials(run_dir, tmp_path, monkeypatch):
    monkeypatch.delenv("COTREWARD_LLM_API_KEY", raising=False)
    traj = run_dir / "trajectories" / "button-press__decomposed__none__seed0.jsonl"
    rc = main(["label-audit", str(traj), "--out", str(tmp_path / "a.jsonl"), "--labeler", "vlm", "--model", "m"])
    assert rc == EXIT_TRANSPORT


def test_bad_config_exit_code(tmp_path):
    (tmp_path / "bad.txt").write_text("name = x\ntasks = door-open\nwat = 1\n")
    assert main(["run", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_files_exit_code(tmp_path):
    assert main(["summarize", str(tmp_path / "nope")]) == EXIT_NOT_FOUND
    assert main(["decompose-cache", "--task", "juggle"]) == EXIT_NOT_FOUND


def test_decompose_cache_listing(capsys):
    assert main(["decompose-cache", "--list"]) == EXIT_OK
    assert "open the door" in capsys.readouterr().out.splitlines()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cotreward", "decompose-cache", "--task", "open the door"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["subgoals"][0] == "the robot hand approaches the door's handle"
