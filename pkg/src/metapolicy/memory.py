"""Meta-policy memory: confidence-weighted rule store with retrieval and persistence.

File format (``.mpm``), UTF-8 JSON lines, keys sorted:

    {"format": "mpm", "version": 1}
    {"confidence": 0.5, "hash": "...", "provenance": {"round": 1, "source": "scripted",
     "task_id": "t01"}, "rule": "WHEN ... THEN ...", "stats": {"failures": 0,
     "followed": 0, "retrieved": 0, "successes": 0}}

The header comes first; one record per entry follows, in hash order.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .rulelang import (
    Binding,
    Fact,
    GroundDirective,
    RuleAst,
    RuleLangError,
    binding_key,
    canonical_text,
    condition_variables,
    ground_directive,
    match_condition,
    parse_rule,
    print_rule,
    validate_rule,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

INITIAL_CONFIDENCE = 0.5
MERGE_BONUS = 0.05
SUCCESS_REWARD = 0.1
FAILURE_PENALTY = 0.2
DEFAULT_PRUNE_FLOOR = 0.1
DEFAULT_K = 8
DEFAULT_MIN_CONF = 0.2

SOURCES = ("scripted", "remote", "manual")


class UnknownRule(KeyError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def _clamp(x: float) -> float:
    # Rounded so repeated +0.1 steps land exactly on thresholds like 0.9.
    return round(min(1.0, max(0.0, x)), 6)


def canonical_hash(rule: RuleAst) -> str:
    """128-bit hex digest of the canonical rule text (alpha-equivalence safe)."""
    return hashlib.blake2b(canonical_text(rule).encode("utf-8"), digest_size=16).hexdigest()


@dataclass
class Provenance:
    source: str = "manual"
    task_id: str = ""
    round: int = 1

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown provenance source {self.source!r}")
        if self.round < 1:
            raise ValueError("provenance round must be >= 1")


@dataclass
class RuleStats:
    retrieved: int = 0
    followed: int = 0
    successes: int = 0
    failures: int = 0


@dataclass
class RuleEntry:
    rule: RuleAst
    confidence: float
    provenance: Provenance
    stats: RuleStats = field(default_factory=RuleStats)

    @property
    def text(self) -> str:
        return print_rule(self.rule)

    def predicates(self) -> set[str]:
        return {lit.predicate for lit in self.rule.condition} | {
            self.rule.directive.pattern.predicate
        }


@dataclass(frozen=True)
class RetrievedRule:
    hash: str
    entry: RuleEntry
    binding: Binding
    directive: GroundDirective

    @property
    def confidence(self) -> float:
        return self.entry.confidence


class InsertOutcome(enum.Enum):
    ADDED = "added"
    MERGED = "merged"


@dataclass(frozen=True)
class Feedback:
    hash: str
    followed: bool


class MetaPolicyMemory:
    """The rule store.  Entries are keyed and iterated by canonical hash."""

    def __init__(self) -> None:
        self.entries: dict[str, RuleEntry] = {}
        self.version = FORMAT_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, RuleEntry]]:
        for h in sorted(self.entries):
            yield h, self.entries[h]

    def __contains__(self, h: object) -> bool:
        return h in self.entries

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetaPolicyMemory):
            return NotImplemented
        return self.version == other.version and self.to_records() == other.to_records()

    def get(self, h: str) -> RuleEntry:
        try:
            return self.entries[h]
        except KeyError:
            raise UnknownRule(h) from None

    def insert(self, rule: RuleAst, provenance: Provenance) -> tuple[InsertOutcome, str]:
        errors = validate_rule(rule)
        if errors:
            raise errors[0]
        h = canonical_hash(rule)
        entry = self.entries.get(h)
        if entry is None:
            self.entries[h] = RuleEntry(rule, INITIAL_CONFIDENCE, provenance)
            return InsertOutcome.ADDED, h
        entry.confidence = _clamp(entry.confidence + MERGE_BONUS)
        return InsertOutcome.MERGED, h

    def retrieve(
        self,
        facts: Iterable[Fact],
        k: int = DEFAULT_K,
        min_conf: float = DEFAULT_MIN_CONF,
        *,
        count: bool = True,
    ) -> list[RetrievedRule]:
        """Rules whose condition holds in ``facts``, one result per binding.

        Ordered by confidence (descending), hash, then binding; truncated to
        ``k``.  With ``count`` the ``retrieved`` counter of each returned
        entry is bumped once; frozen-memory runs pass ``count=False``.
        """
        if k < 0 or not 0.0 <= min_conf <= 1.0:
            raise ValueError("need k >= 0 and 0 <= min_conf <= 1")
        if k == 0:
            return []
        out = self._hits(facts, min_conf)[:k]
        if count:
            for h in dict.fromkeys(rr.hash for rr in out):
                self.entries[h].stats.retrieved += 1
        return out

    def matching(self, facts: Iterable[Fact], min_conf: float) -> list[RetrievedRule]:
        """Like :meth:`retrieve` but untruncated and without touching stats."""
        return self._hits(facts, min_conf)

    def _hits(self, facts: Iterable[Fact], min_conf: float) -> list[RetrievedRule]:
        fact_set = frozenset(facts)
        hits: list[tuple[tuple, RetrievedRule]] = []
        for h, entry in self:
            if entry.confidence < min_conf:
                continue
            order = condition_variables(entry.rule.condition, positive_only=True)
            for b in match_condition(entry.rule.condition, fact_set):
                rr = RetrievedRule(h, entry, b, ground_directive(entry.rule.directive, b))
                hits.append(((-entry.confidence, h, binding_key(b, order)), rr))
        hits.sort(key=lambda pair: pair[0])
        return [rr for _, rr in hits]

    def reinforce(self, feedback: Sequence[Feedback], episode_success: bool) -> None:
        for fb in feedback:
            if fb.hash not in self.entries:
                raise UnknownRule(fb.hash)
        for fb in feedback:
            if not fb.followed:
                continue
            entry = self.entries[fb.hash]
            entry.stats.followed += 1
            if episode_success:
                entry.stats.successes += 1
                entry.confidence = _clamp(entry.confidence + SUCCESS_REWARD)
            else:
                entry.stats.failures += 1
                entry.confidence = _clamp(entry.confidence - FAILURE_PENALTY)

    def prune(self, floor: float = DEFAULT_PRUNE_FLOOR) -> int:
        if not 0.0 <= floor <= 1.0:
            raise ValueError("floor must be in [0, 1]")
        doomed = [h for h, e in self.entries.items() if e.confidence < floor]
        for h in doomed:
            del self.entries[h]
        return len(doomed)

    def copy(self) -> MetaPolicyMemory:
        return MetaPolicyMemory.from_records(self.to_records())

    # -- persistence ------------------------------------------------------

    def to_records(self) -> list[dict]:
        return [
            {
                "hash": h,
                "rule": e.text,
                "confidence": e.confidence,
                "provenance": {
                    "source": e.provenance.source,
                    "task_id": e.provenance.task_id,
                    "round": e.provenance.round,
                },
                "stats": {
                    "retrieved": e.stats.retrieved,
                    "followed": e.stats.followed,
                    "successes": e.stats.successes,
                    "failures": e.stats.failures,
                },
            }
            for h, e in self
        ]

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> MetaPolicyMemory:
        mem = cls()
        for rec in records:
            entry, h = _entry_from_record(rec)
            mem.entries[h] = entry
        return mem

    def dumps(self) -> str:
        lines = [json.dumps({"format": "mpm", "version": self.version}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.to_records()]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> MetaPolicyMemory:
        mem = cls()
        header_seen = False
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(rec, dict):
                raise FormatError("record is not an object", lineno)
            if not header_seen:
                if rec.get("format") != "mpm":
                    raise FormatError("missing mpm header record", lineno)
                if rec.get("version") != FORMAT_VERSION:
                    raise FormatError(f"unsupported version {rec.get('version')!r}", lineno)
                header_seen = True
                continue
            try:
                entry, h = _entry_from_record(rec)
            except (KeyError, TypeError, ValueError, RuleLangError) as exc:
                raise FormatError(f"bad record: {exc}", lineno) from None
            if h in mem.entries:
                raise FormatError("duplicate rule", lineno)
            mem.entries[h] = entry
        return mem

    @classmethod
    def load(cls, path: str | Path) -> MetaPolicyMemory:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _entry_from_record(rec: dict) -> tuple[RuleEntry, str]:
    rule = parse_rule(rec["rule"])
    h = canonical_hash(rule)
    if "hash" in rec and rec["hash"] != h:
        raise ValueError(f"hash {rec['hash']} does not match rule text")
    conf = rec["confidence"]
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
        raise ValueError(f"confidence {conf!r} outside [0, 1]")
    prov = rec["provenance"]
    stats = rec["stats"]
    counters = {name: stats[name] for name in ("retrieved", "followed", "successes", "failures")}
    for name, value in counters.items():
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ValueError(f"stat {name}={value!r} must be a non-negative integer")
    entry = RuleEntry(
        rule,
        float(conf),
        Provenance(str(prov["source"]), str(prov["task_id"]), int(prov["round"])),
        RuleStats(**counters),
    )
    return entry, h


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
