"""Reflection f(tau): turn a failed trajectory into corrective rules.

The scripted reflector runs four diagnoses in a fixed order and maps the
first match of each onto a rule template:

1. blocked_by_closed_container: the goal object never showed up.
2. missing_precondition: an action failed for lack of a precondition, or an
   object was placed before a goal attribute (clean/hot/cold) was produced.
3. action_loop: the same action under the same facts three or more times.
4. avoid_repeat_invalid: an action that the world rejected.

A fifth kind, ``wasted_steps``, only feeds the plain-text notes used by the
Reflexion-style baseline.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .memory import Feedback, InsertOutcome, MetaPolicyMemory, Provenance, canonical_hash
from .policy import advice_note
from .remote import RemoteClient
from .rulelang import (
    Fact,
    RuleAst,
    RuleLangError,
    parse_rule,
    validate_rule,
)
from .textworld import LAST_ACTION_INVALID, LOOK, Action

log = logging.getLogger(__name__)

DIAGNOSIS_KINDS = (
    "blocked_by_closed_container",
    "missing_precondition",
    "action_loop",
    "avoid_repeat_invalid",
    "wasted_steps",
)
LOOP_THRESHOLD = 3
_ATTRS = {"clean": ("clean", "can_clean"), "hot": ("heat", "can_heat"), "cold": ("cool", "can_cool")}
_APPLIANCE_VERBS = {"clean": "can_clean", "heat": "can_heat", "cool": "can_cool"}
# Facts that change as the agent acts; loop rules keep only these.
_DYNAMIC = frozenset(
    {"holding", "hand_empty", "open", "closed", "clean", "dirty", "hot", "cold", "room_temp"}
)


@dataclass(frozen=True)
class Step:
    facts: frozenset[Fact]
    retrieved: tuple[str, ...]
    action: Action
    verdict: str | None
    reward: int
    done: bool
    invalid: bool = False
    attempts: int = 0
    followed: tuple[str, ...] = ()

    def to_record(self, step_index: int) -> dict:
        return {
            "step_index": step_index,
            "facts": sorted(str(f) for f in self.facts),
            "retrieved": list(self.retrieved),
            "action": str(self.action),
            "verdict": self.verdict,
            "attempts": self.attempts,
            "invalid": self.invalid,
            "followed": list(self.followed),
            "reward": self.reward,
            "done": self.done,
        }


@dataclass
class Trajectory:
    task_id: str
    goal: tuple[Fact, ...]
    steps: list[Step] = field(default_factory=list)
    success: bool = False
    round: int = 1

    def feedback(self) -> list[Feedback]:
        """One entry per retrieved rule; followed if any step followed it."""
        followed = {h for s in self.steps for h in s.followed}
        seen = dict.fromkeys(h for s in self.steps for h in s.retrieved)
        return [Feedback(h, h in followed) for h in seen]

    @property
    def invalid_steps(self) -> int:
        return sum(s.invalid for s in self.steps)


@dataclass(frozen=True)
class Diagnosis:
    kind: str
    evidence: tuple[int, ...]
    template_args: tuple[str, ...] = ()
    rule: RuleAst | None = None
    note: str = ""

    def __post_init__(self) -> None:
        if self.kind not in DIAGNOSIS_KINDS:
            raise ValueError(f"unknown diagnosis kind {self.kind!r}")


def _rule(text: str) -> RuleAst:
    return parse_rule(text)


def _ground_note(rule: RuleAst, binding: dict[str, str]) -> str:
    """Plain-text advice: the rule's directive grounded under ``binding``."""
    when = [lit.substitute(binding).to_fact() for lit in rule.condition if not lit.negated]
    target = rule.directive.pattern.substitute(binding).to_fact()
    return advice_note(rule.directive.kind.lower(), _fact_action(target), when)


def _fact_action(f: Fact) -> Action | Fact:
    try:
        return Action(f.predicate, f.args)
    except ValueError:
        return f


# --------------------------------------------------------------------------
# Diagnoses
# --------------------------------------------------------------------------


def _args_of(facts: Iterable[Fact], pred: str) -> list[tuple[str, ...]]:
    return sorted(f.args for f in facts if f.predicate == pred)


def _here(facts: frozenset[Fact]) -> str | None:
    at = _args_of(facts, "at")
    return at[0][0] if at else None


def _goal_objects(goal: Sequence[Fact]) -> list[str]:
    return sorted({g.args[0] for g in goal if g.predicate in ("in", "holding", "clean", "hot", "cold")})


def _diagnose_blocked(traj: Trajectory) -> Diagnosis | None:
    objs = _goal_objects(traj.goal)
    if not objs or not traj.steps:
        return None
    seen = {
        o
        for s in traj.steps
        for o in objs
        if Fact("visible", (o,)) in s.facts or Fact("holding", (o,)) in s.facts
    }
    missing = [o for o in objs if o not in seen]
    if not missing:
        return None
    # Latest first: a container still closed at the end is the likely blocker.
    for i in reversed(range(len(traj.steps))):
        s = traj.steps[i]
        here = _here(s.facts)
        for (c,) in _args_of(s.facts, "closed"):
            if Fact("in", (c, here)) in s.facts:
                rule = _rule("WHEN at(?r) AND in(?c, ?r) AND closed(?c) THEN PREFER open(?c)")
                return Diagnosis(
                    "blocked_by_closed_container", (i,), (missing[0], c, here), rule,
                    _ground_note(rule, {"?r": here, "?c": c}),
                )
    # Never stood next to a closed container: head for one.
    first = traj.steps[0].facts
    for c, loc in _args_of(first, "in"):
        if Fact("closed", (c,)) in first:
            rule = _rule("WHEN in(?c, ?r) AND closed(?c) THEN PREFER go(?r)")
            return Diagnosis(
                "blocked_by_closed_container", (0,), (missing[0], c, loc), rule,
                _ground_note(rule, {"?r": loc, "?c": c}),
            )
    return None


def _diagnose_precondition(traj: Trajectory) -> Diagnosis | None:
    goal = set(traj.goal)
    for i, s in enumerate(traj.steps):
        a = s.action
        if s.invalid and a.verb in _APPLIANCE_VERBS and Fact("hand_empty", ()) in s.facts:
            obj = a.args[0]
            attr = {"clean": "dirty(?x)", "heat": "NOT hot(?x)", "cool": "NOT cold(?x)"}[a.verb]
            rule = _rule(f"WHEN hand_empty() AND visible(?x) AND {attr} THEN PREFER take(?x)")
            return Diagnosis(
                "missing_precondition", (i,), (a.verb, obj), rule, _ground_note(rule, {"?x": obj})
            )
        if s.invalid and a.verb == "put" and Fact("closed", (a.args[1],)) in s.facts:
            obj, dest = a.args
            here = _here(s.facts)
            rule = _rule(
                "WHEN holding(?x) AND at(?r) AND in(?c, ?r) AND closed(?c) THEN REQUIRE open(?c)"
            )
            return Diagnosis(
                "missing_precondition", (i,), ("open", dest), rule,
                _ground_note(rule, {"?x": obj, "?r": here, "?c": dest}),
            )
        if not s.invalid and a.verb == "put":
            obj = a.args[0]
            for attr, (verb, cap) in _ATTRS.items():
                if Fact(attr, (obj,)) not in goal or Fact(attr, (obj,)) in s.facts:
                    continue
                stood = [
                    j for j, t in enumerate(traj.steps)
                    if Fact("holding", (obj,)) in t.facts
                    and Fact(cap, (_here(t.facts),)) in t.facts
                ]
                cond = "dirty(?x)" if attr == "clean" else f"NOT {attr}(?x)"
                if stood:
                    here = _here(traj.steps[stood[0]].facts)
                    rule = _rule(
                        f"WHEN holding(?x) AND at(?r) AND {cap}(?r) AND {cond} THEN PREFER {verb}(?x)"
                    )
                    return Diagnosis(
                        "missing_precondition", (stood[0], i), (verb, obj), rule,
                        _ground_note(rule, {"?x": obj, "?r": here}),
                    )
                appliances = _args_of(s.facts, cap)
                if appliances:
                    rule = _rule(f"WHEN holding(?x) AND {cap}(?r) AND {cond} THEN PREFER go(?r)")
                    return Diagnosis(
                        "missing_precondition", (i,), ("go", appliances[0][0]), rule,
                        _ground_note(rule, {"?x": obj, "?r": appliances[0][0]}),
                    )
    return None


def _loop_condition(facts: frozenset[Fact], action: Action) -> list[Fact]:
    here = _here(facts)
    cond = [Fact("at", (here,))] if here else []
    cond += sorted(f for f in facts if not f.args and f != LAST_ACTION_INVALID)
    visible = {f.args[0] for f in facts if f.predicate == "visible"}
    for f in sorted(facts):
        if f in cond or not set(f.args) & set(action.args):
            continue
        if f.predicate in _DYNAMIC or (f.predicate == "in" and f.args[0] in visible):
            cond.append(f)
    return cond[:6]


def _diagnose_loop(traj: Trajectory) -> Diagnosis | None:
    keys = [(s.facts, s.action) for s in traj.steps]
    counts = Counter(k for k in keys if k[1] != LOOK)
    for i, key in enumerate(keys):
        if key[1] == LOOK or counts[key] < LOOP_THRESHOLD:
            continue
        facts, action = key
        cond = _loop_condition(facts, action)
        text = "WHEN " + " AND ".join(map(str, cond)) + f" THEN AVOID {action}"
        rule = _rule(text)
        evidence = tuple(j for j, k in enumerate(keys) if k == key)
        return Diagnosis(
            "action_loop", evidence, (str(action),), rule, advice_note("avoid", action, cond)
        )
    return None


def _invalid_template(facts: frozenset[Fact], action: Action) -> tuple[str, dict[str, str]] | None:
    """AVOID template covering why ``action`` was rejected under ``facts``."""
    v, args = action.verb, action.args
    holding = _args_of(facts, "holding")
    here = _here(facts)
    if v in _APPLIANCE_VERBS:
        if not holding:
            return f"WHEN hand_empty() AND visible(?x) THEN AVOID {v}(?x)", {"?x": args[0]}
        if holding[0][0] == args[0] and Fact(_APPLIANCE_VERBS[v], (here,)) not in facts:
            cap = _APPLIANCE_VERBS[v]
            return (
                f"WHEN holding(?x) AND at(?r) AND NOT {cap}(?r) THEN AVOID {v}(?x)",
                {"?x": args[0], "?r": here},
            )
        return None
    if v == "put":
        if holding and holding[0][0] == args[0] and Fact("closed", (args[1],)) in facts:
            return "WHEN holding(?x) AND closed(?c) THEN AVOID put(?x, ?c)", {"?x": args[0], "?c": args[1]}
        return None
    if v == "take" and holding and Fact("visible", (args[0],)) in facts:
        return "WHEN holding(?y) AND visible(?x) THEN AVOID take(?x)", {"?y": holding[0][0], "?x": args[0]}
    if v == "open" and Fact("open", args) in facts:
        return "WHEN open(?c) THEN AVOID open(?c)", {"?c": args[0]}
    if v == "close" and Fact("closed", args) in facts:
        return "WHEN closed(?c) THEN AVOID close(?c)", {"?c": args[0]}
    if v == "go" and here == args[0]:
        return "WHEN at(?l) THEN AVOID go(?l)", {"?l": here}
    return None


def _diagnose_invalid(traj: Trajectory) -> Diagnosis | None:
    for i, s in enumerate(traj.steps):
        if not s.invalid:
            continue
        found = _invalid_template(s.facts, s.action)
        if found is None:
            continue
        text, binding = found
        rule = _rule(text)
        return Diagnosis(
            "avoid_repeat_invalid", (i,), (str(s.action),), rule, _ground_note(rule, binding)
        )
    return None


def _diagnose_waste(traj: Trajectory) -> Diagnosis | None:
    idle = [i for i, s in enumerate(traj.steps) if s.action == LOOK or s.invalid]
    if len(idle) < LOOP_THRESHOLD:
        return None
    return Diagnosis(
        "wasted_steps",
        tuple(idle),
        (str(len(idle)),),
        None,
        "Too many steps changed nothing in the world.",
    )


_DIAGNOSES = (_diagnose_blocked, _diagnose_precondition, _diagnose_loop, _diagnose_invalid)


def diagnose(traj: Trajectory, *, include_waste: bool = False) -> list[Diagnosis]:
    if traj.success:
        return []
    fns = _DIAGNOSES + ((_diagnose_waste,) if include_waste else ())
    return [d for d in (fn(traj) for fn in fns) if d is not None]


def reflect(traj: Trajectory) -> list[RuleAst]:
    """Scripted f(tau): at most one rule per diagnosis kind, deduplicated."""
    out: dict[str, RuleAst] = {}
    for d in diagnose(traj):
        errors = validate_rule(d.rule)
        if errors:  # templates are statically valid; this is a bug
            raise AssertionError(f"template produced an invalid rule: {errors[0]}")
        out.setdefault(canonical_hash(d.rule), d.rule)
    return list(out.values())


def baseline_notes(traj: Trajectory) -> list[str]:
    """Reflexion-style text for one task's retry buffer."""
    return [d.note for d in diagnose(traj, include_waste=True)]


# --------------------------------------------------------------------------
# Reflectors
# --------------------------------------------------------------------------


class Reflector(Protocol):
    source: str

    def reflect(self, traj: Trajectory) -> list[RuleAst]: ...


@dataclass(frozen=True)
class ScriptedReflector:
    source: str = "scripted"

    def reflect(self, traj: Trajectory) -> list[RuleAst]:
        return reflect(traj)


_FENCE_RE = re.compile(r"^\s*```")
_BULLET_RE = re.compile(r"^\s*(?:[-*]|\d+[.)])\s+")


def parse_reflection_reply(text: str) -> tuple[list[RuleAst], int]:
    """Rules from a model reply, one per line; bad lines are dropped and counted."""
    rules: list[RuleAst] = []
    dropped = 0
    for line in text.splitlines():
        if not line.strip() or _FENCE_RE.match(line):
            continue
        try:
            rules.append(parse_rule(_BULLET_RE.sub("", line).strip()))
        except RuleLangError:
            dropped += 1
    if dropped:
        log.warning("dropped %d unparseable reflection line(s)", dropped)
    return rules, dropped


GRAMMAR = """\
rule      := WHEN literal {AND literal} THEN directive
literal   := [NOT] pred(args)
directive := (AVOID | PREFER | REQUIRE) verb(args)
args      := term {, term}   term := ?var | constant
verbs     := go/1 open/1 close/1 take/1 put/2 clean/1 heat/1 cool/1 examine/1 look/0"""

EXAMPLE_RULES = (
    "WHEN at(?r) AND in(?c, ?r) AND closed(?c) THEN PREFER open(?c)",
    "WHEN hand_empty() AND visible(?x) THEN AVOID clean(?x)",
)


def render_reflection_prompt(traj: Trajectory) -> str:
    lines = [
        "The episode below failed. Write corrective rules, one per line, in this grammar:",
        GRAMMAR,
        "",
        "Examples:",
        *EXAMPLE_RULES,
        "",
        f"TASK: {traj.task_id}",
        "GOAL: " + ", ".join(map(str, traj.goal)),
        "TRAJECTORY:",
    ]
    for i, s in enumerate(traj.steps):
        flag = "  (rejected by the world)" if s.invalid else ""
        lines.append(f"  {i}: {s.action}{flag}")
        lines.append("     facts: " + ", ".join(sorted(map(str, s.facts))))
    lines += ["", "Reply with rules only."]
    return "\n".join(lines) + "\n"


@dataclass
class RemoteReflector:
    client: RemoteClient
    source: str = "remote"

    def reflect(self, traj: Trajectory) -> list[RuleAst]:
        if traj.success:
            return []
        rules, _ = parse_reflection_reply(self.client.complete(render_reflection_prompt(traj)))
        return rules


def meta_policy_update(
    traj: Trajectory,
    memory: MetaPolicyMemory,
    reflector: Reflector | None = None,
) -> list[tuple[InsertOutcome, str]]:
    """Failure penalty for followed rules, then insert the reflection's rules."""
    if traj.success:
        raise ValueError("meta_policy_update is for failed episodes")
    reflector = reflector or ScriptedReflector()
    memory.reinforce(traj.feedback(), episode_success=False)
    prov = Provenance(reflector.source, traj.task_id, traj.round)
    return [memory.insert(rule, prov) for rule in reflector.reflect(traj)]
