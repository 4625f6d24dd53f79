import json
import logging
import socket

import pytest

from cotreward.clients import OpenAICompatibleClient, ScriptedClient
from cotreward.decomposer import (
    DecompositionCache,
    Decomposer,
    SubgoalDecomposition,
    build_prompt_set,
    load_failures,
    parse_numbered_list,
)
from cotreward.errors import InvalidArgumentError, NotFoundError, ParseError
from cotreward.toyenv import TASKS

DOOR_SUBGOALS = (
    "the robot hand approaches the door's handle",
    "the robot hand grasps the door's handle",
    "the robot hand pulls the door's handle back",
    "the robot hand opens the door",
)


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*a, **k):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket, "create_connection", refuse)
    monkeypatch.setattr(socket.socket, "connect", refuse)


def test_packaged_door_decomposition(no_network):
    dec = Decomposer().decompose("open the door")
    assert dec.subgoals == DOOR_SUBGOALS
    assert dec.source == "fixture"
    assert len(dec.failures) >= 1


def test_every_task_has_cached_decomposition_and_failures():
    dec = Decomposer()
    failures = load_failures()
    for spec in TASKS.values():
        d = dec.decompose(spec.instruction)
        assert d.subgoals and d.failures
        assert set(d.failures) <= set(failures[spec.instruction])


def test_fixture_miss_is_not_found():
    with pytest.raises(NotFoundError):
        Decomposer().decompose("juggle three balls")


def test_live_without_credentials_falls_back_without_network(no_network, monkeypatch):
    monkeypatch.delenv("COTREWARD_LLM_API_KEY", raising=False)
    client = OpenAICompatibleClient("some-model")
    assert not client.configured
    dec = Decomposer(client=client).decompose("open the door", mode="live")
    assert dec.subgoals == DOOR_SUBGOALS


def test_live_mode_parses_and_caches(tmp_path):
    cache = DecompositionCache(tmp_path / "cache.jsonl")
    client = ScriptedClient(["1. reach the cup 2. grasp the cup 3. lift the cup"])
    d = Decomposer(cache, {"lift the cup": ["drop the cup"]}, client)
    dec = d.decompose("lift the cup", mode="live")
    assert dec.subgoals == ("reach the cup", "grasp the cup", "lift the cup")
    assert dec.failures == ("drop the cup",)
    assert dec.source == "live"
    assert "lift the cup" in client.requests[0][0]["content"]
    # second call is served from the cache, without touching the client
    again = Decomposer(DecompositionCache(tmp_path / "cache.jsonl"), client=ScriptedClient([])).decompose(
        "lift the cup", mode="live")
    assert again == dec
    rec = json.loads((tmp_path / "cache.jsonl").read_text().splitlines()[0])
    assert rec["template"] == "v1" and rec["source"] == "live"


def test_record_round_trip():
    dec = SubgoalDecomposition("t", ("a", "b"), ("c",))
    assert SubgoalDecomposition.from_record(json.loads(json.dumps(dec.to_record()))) == dec


@pytest.mark.parametrize("text,items", [
    ("1. reach 2. grasp", ["reach", "grasp"]),
    ("1) reach\n2) grasp\n3) pull", ["reach", "grasp", "pull"]),
    ("Plan:\n1. move to 0.5 m\n2. stop", ["move to 0.5 m", "stop"]),
])
def test_parse_numbered_list(text, items):
    assert parse_numbered_list(text) == items


@pytest.mark.parametrize("text", ["", "reach then grasp", "2. reach 3. grasp", "1. reach 3. grasp"])
def test_parse_numbered_list_rejects(text):
    with pytest.raises(ParseError) as exc:
        parse_numbered_list(text)
    assert exc.value.raw == text


def test_malformed_live_response_raises(tmp_path):
    d = Decomposer(DecompositionCache(tmp_path / "c.jsonl"), {}, ScriptedClient(["sure, here you go"]))
    with pytest.raises(ParseError):
        d.decompose("lift the cup", mode="live")
    assert not (tmp_path / "c.jsonl").exists()


def test_build_prompt_set_dedupes_with_warning(encoder, caplog):
    dec = SubgoalDecomposition("open the door", DOOR_SUBGOALS + (DOOR_SUBGOALS[0],), ("x", "x"))
    with caplog.at_level(logging.WARNING):
        ps = build_prompt_set(dec, encoder)
    assert [p for p, _ in ps.positives] == list(DOOR_SUBGOALS)
    assert [p for p, _ in ps.negatives] == ["x"]
    assert sum("duplicate" in r.message for r in caplog.records) == 2
    assert ps.coarse[0] == "open the door"


def test_empty_subgoals_rejected():
    with pytest.raises(InvalidArgumentError):
        SubgoalDecomposition("t", ())
    with pytest.raises(InvalidArgumentError):
        SubgoalDecomposition("t", ("ok", "  "))
