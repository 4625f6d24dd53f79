"""Chain-of-thought task decomposition with a line-delimited cache.

Sub-goals come either from the cache (``fixture`` mode) or from an
external language model (``live`` mode) prompted with a frozen, versioned
template.  Failure prompts are always read from a hand-edited file; the
model never writes them.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

from .errors import InvalidArgumentError, NotFoundError, ParseError
from .rewardcore import PromptSet

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"
INSTRUCTION_TEMPLATE = (
    "You are planning for a single robot arm with a parallel gripper.\n"
    "Break the task below into the short sequence of physical sub-goals the robot hand "
    "must achieve, in order. Write each sub-goal as one sentence starting with "
    "\"the robot hand\". Answer only with a numbered list (1. 2. 3. ...).\n"
    "Task: {task}"
)


@dataclass(frozen=True)
class SubgoalDecomposition:
    task: str
    subgoals: tuple
    failures: tuple = ()
    source: str = "fixture"

    def __post_init__(self):
        object.__setattr__(self, "subgoals", tuple(self.subgoals))
        object.__setattr__(self, "failures", tuple(self.failures))
        if not self.subgoals:
            raise InvalidArgumentError(f"decomposition of {self.task!r} has no sub-goals")
        if any(not s.strip() for s in self.subgoals + self.failures):
            raise InvalidArgumentError("empty prompt string in decomposition")
        if self.source not in ("fixture", "live"):
            raise InvalidArgumentError(f"unknown source {self.source!r}")

    def to_record(self):
        d = asdict(self)
        d["subgoals"] = list(self.subgoals)
        d["failures"] = list(self.failures)
        d["template"] = TEMPLATE_VERSION
        return d

    @classmethod
    def from_record(cls, d):
        return cls(d["task"], tuple(d["subgoals"]), tuple(d.get("failures", ())), d.get("source", "fixture"))


def _packaged(name):
    return resources.files("cotreward.data").joinpath(name)


def load_failures(path=None):
    """``task<TAB>failure prompt`` lines -> {task: [prompts]} in file order."""
    text = _packaged("failures.tsv").read_text("utf-8") if path is None else Path(path).read_text("utf-8")
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InvalidArgumentError(f"failure file line {lineno}: expected 'task<TAB>prompt'")
        out.setdefault(parts[0].strip(), []).append(parts[1].strip())
    return out


class DecompositionCache:
    """JSONL store keyed by the exact task string.

    Reads are lock-free snapshots; writes go through one lock and rewrite
    the whole file atomically.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records = {}
        if self.path is None:
            self._load_text(_packaged("decompositions.jsonl").read_text("utf-8"))
        elif self.path.exists():
            self._load_text(self.path.read_text("utf-8"))

    def _load_text(self, text):
        for line in text.splitlines():
            if line.strip():
                dec = SubgoalDecomposition.from_record(json.loads(line))
                self._records[dec.task] = dec

    def get(self, task):
        return self._records.get(task)

    def tasks(self):
        return list(self._records)

    def put(self, dec: SubgoalDecomposition):
        with self._lock:
            self._records[dec.task] = dec
            if self.path is None:
                return
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                for rec in self._records.values():
                    f.write(json.dumps(rec.to_record(), ensure_ascii=False) + "\n")
            os.replace(tmp, self.path)


_ITEM = re.compile(r"(?:^|\s)(\d+)[.)]\s+")


def parse_numbered_list(text):
    """Parse ``"1. reach 2. grasp"`` (inline or one per line) into items.

    Numbering must start at 1 and increase by one.
    """
    marks = list(_ITEM.finditer(text))
    numbers = [int(m.group(1)) for m in marks]
    if not marks or numbers != list(range(1, len(marks) + 1)):
        raise ParseError("response is not a numbered list starting at 1", raw=text)
    items = []
    for m, nxt in zip(marks, marks[1:] + [None]):
        item = text[m.end(): nxt.start() if nxt else len(text)].strip()
        if not item:
            raise ParseError(f"empty item {m.group(1)}", raw=text)
        items.append(item)
    return items


class Decomposer:
    """Front end over the cache, the failure file and an optional LLM client.

    ``client`` must provide ``complete(messages) -> str`` (see
    :mod:`cotreward.clients`).
    """

    def __init__(self, cache=None, failures=None, client=None):
        self.cache = cache if cache is not None else DecompositionCache()
        self.failures = load_failures() if failures is None else failures
        self.client = client

    def decompose(self, task, mode="fixture"):
        if not task or not task.strip():
            raise InvalidArgumentError("task must be nonempty")
        if mode not in ("fixture", "live"):
            raise InvalidArgumentError(f"unknown mode {mode!r}")
        if mode == "live" and (self.client is None or not getattr(self.client, "configured", True)):
            log.info("no LLM client configured; using fixture mode for %r", task)
            mode = "fixture"
        cached = self.cache.get(task)
        if cached is not None:
            return cached
        if mode == "fixture":
            raise NotFoundError(f"no cached decomposition for {task!r}")
        prompt = INSTRUCTION_TEMPLATE.format(task=task)
        raw = self.client.complete([{"role": "user", "content": prompt}])
        subgoals = parse_numbered_list(raw)
        dec = SubgoalDecomposition(task, tuple(subgoals), tuple(self.failures.get(task, ())), "live")
        self.cache.put(dec)
        return dec


def _dedupe(items, what):
    seen, out = set(), []
    for s in items:
        if s in seen:
            log.warning("dropping duplicate %s prompt %r", what, s)
            continue
        seen.add(s)
        out.append(s)
    return out


def build_prompt_set(dec: SubgoalDecomposition, encoder, coarse=None):
    """Embed sub-goals as positives, failures as negatives and the coarse task."""
    coarse = dec.task if coarse is None else coarse
    pos = [(s, encoder.encode_text(s)) for s in _dedupe(dec.subgoals, "sub-goal")]
    neg = [(s, encoder.encode_text(s)) for s in _dedupe(dec.failures, "failure")]
    return PromptSet(tuple(pos), tuple(neg), (coarse, encoder.encode_text(coarse)))
