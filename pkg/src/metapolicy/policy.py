"""Frozen base policy, conditioned on retrieved rules and feedback notes.

The scripted policy is a greedy goal-regression planner.  It proposes an
ordered candidate list; a :class:`DefectProfile` reorders that list so the
correct move is no longer first (the flaws reflection has to correct).
Retrieved rules then act as soft guidance: AVOID drops matching candidates,
PREFER/REQUIRE move matching candidates to the front.  The first survivor is
returned, ``look()`` if none survive.  Nothing here checks admissibility.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .memory import RetrievedRule
from .remote import RemoteClient
from .rulelang import ACTION_ARITY, Fact, print_rule
from .textworld import LOOK, Action, Observation, act

DEFECTS = (
    "never_opens_closed",
    "cleans_before_taking",
    "ignores_temperature_goals",
    "wanders_on_missing_object",
)

_ATTR_VERBS = {"clean": ("clean", "can_clean"), "hot": ("heat", "can_heat"), "cold": ("cool", "can_cool")}


class ActionParseError(ValueError):
    pass


@dataclass(frozen=True)
class DefectProfile:
    never_opens_closed: bool = False
    cleans_before_taking: bool = False
    ignores_temperature_goals: bool = False
    wanders_on_missing_object: bool = False

    @classmethod
    def all(cls) -> DefectProfile:
        return cls(True, True, True, True)

    @classmethod
    def none(cls) -> DefectProfile:
        return cls()

    @classmethod
    def parse(cls, text: str) -> DefectProfile:
        """``all``, ``none`` or a comma-separated list of defect names."""
        text = text.strip()
        if text == "all":
            return cls.all()
        if text in ("none", ""):
            return cls.none()
        names = [n.strip() for n in text.split(",") if n.strip()]
        unknown = [n for n in names if n not in DEFECTS]
        if unknown:
            raise ValueError(f"unknown defect(s) {unknown}; known: {', '.join(DEFECTS)}")
        return cls(**{n: True for n in names})

    def __str__(self) -> str:
        on = [n for n in DEFECTS if getattr(self, n)]
        if len(on) == len(DEFECTS):
            return "all"
        return ",".join(on) or "none"


@dataclass(frozen=True)
class PolicyContext:
    task_goal: tuple[Fact, ...]
    observation: Observation
    retrieved: tuple[RetrievedRule, ...] = ()
    feedback_notes: tuple[str, ...] = ()
    resample_index: int = 0

    def with_note(self, note: str) -> PolicyContext:
        return dataclasses.replace(
            self,
            feedback_notes=(*self.feedback_notes, note),
            resample_index=self.resample_index + 1,
        )


class Policy(Protocol):
    def decide(self, ctx: PolicyContext) -> Action: ...


# --------------------------------------------------------------------------
# Feedback notes
# --------------------------------------------------------------------------

_ACTION_TEXT = r"[a-z_]+\([^()]*\)"
_ADVICE_RE = re.compile(rf"\b(Prefer|Avoid|Require) ({_ACTION_TEXT})((?: when [^.]*)?)")
_FACT_IN_TEXT_RE = re.compile(_ACTION_TEXT)


def advice_note(kind: str, action: Action | Fact, when: Iterable[Fact] = ()) -> str:
    """Render advice the scripted policy can act on, e.g.
    ``Prefer open(fridge) when at(kitchen), closed(fridge).``"""
    text = f"{kind.capitalize()} {action}"
    cond = [str(f) for f in when]
    if cond:
        text += " when " + ", ".join(cond)
    return text + "."


@dataclass(frozen=True)
class Advice:
    kind: str  # prefer | avoid | require
    action: Action
    when: frozenset[Fact]


def parse_advice(notes: Iterable[str]) -> list[Advice]:
    from .rulelang import parse_fact

    out = []
    for note in notes:
        for kind, action_text, when_text in _ADVICE_RE.findall(note):
            try:
                action = Action.parse(action_text)
                cond = frozenset(parse_fact(t) for t in _FACT_IN_TEXT_RE.findall(when_text))
            except ValueError:
                continue
            out.append(Advice(kind.lower(), action, cond))
    return out


# --------------------------------------------------------------------------
# Scripted planner
# --------------------------------------------------------------------------


class _View:
    """Lookup helpers over an observation's fact set."""

    def __init__(self, facts: Iterable[Fact]):
        self.facts = frozenset(facts)
        self.by_pred: dict[str, list[tuple[str, ...]]] = {}
        for f in sorted(self.facts):
            self.by_pred.setdefault(f.predicate, []).append(f.args)
        self.here = next((a[0] for a in self.by_pred.get("at", ())), None)
        self.held = next((a[0] for a in self.by_pred.get("holding", ())), None)
        self.container = {a[0]: a[1] for a in self.by_pred.get("in", ())}

    def has(self, pred: str, *args: str) -> bool:
        return Fact(pred, args) in self.facts

    def location_of(self, name: str) -> str:
        seen = set()
        while name in self.container and name not in seen:
            seen.add(name)
            name = self.container[name]
        return name

    def locations(self) -> list[str]:
        locs = set()
        if self.here:
            locs.add(self.here)
        for pred in ("can_clean", "can_heat", "can_cool"):
            locs.update(a[0] for a in self.by_pred.get(pred, ()))
        for child in self.container:
            locs.add(self.location_of(child))
        return sorted(locs)

    def closed_at(self, loc: str) -> list[str]:
        return [a[0] for a in self.by_pred.get("closed", ()) if self.location_of(a[0]) == loc]

    def receptacles_at(self, loc: str) -> list[str]:
        recs = {r for r, parent in self.container.items() if parent == loc and not self.has("visible", r)}
        return sorted(recs)


def _pending(goal: Sequence[Fact], view: _View) -> list[Fact]:
    return [g for g in goal if g not in view.facts]


def _next_target(goal: Sequence[Fact], view: _View) -> tuple[str | None, list[Fact]]:
    pending = _pending(goal, view)
    objects = sorted(
        {g.args[0] for g in goal if g.predicate in ("in", "clean", "hot", "cold", "holding")}
    )
    for obj in objects:
        mine = [g for g in pending if g.args and g.args[0] == obj]
        if mine:
            return obj, mine
    return None, pending


def _plan(obj: str, pending: Sequence[Fact], view: _View, defects: DefectProfile) -> list[Action]:
    here = view.here
    if view.held == obj:
        for pred in ("clean", "hot", "cold"):
            if Fact(pred, (obj,)) in pending:
                verb, cap = _ATTR_VERBS[pred]
                locs = [a[0] for a in view.by_pred.get(cap, ())]
                if here in locs:
                    return [act(verb, obj)]
                return [act("go", locs[0])] if locs else [LOOK]
        place = next((g for g in pending if g.predicate == "in"), None)
        if place is not None:
            dest = place.args[1]
            loc = view.location_of(dest)
            if loc != here:
                return [act("go", loc)]
            if view.has("closed", dest):
                return [act("open", dest), act("put", obj, dest)]
            return [act("put", obj, dest)]
        return [LOOK]

    if view.held is not None:
        spots = [r for r in view.receptacles_at(here) if not view.has("closed", r)]
        return [act("put", view.held, spots[0])] if spots else [LOOK]

    if view.has("visible", obj):
        loc = view.location_of(obj)
        if loc != here:
            return [act("go", loc)]
        if defects.cleans_before_taking and Fact("clean", (obj,)) in pending:
            return [act("clean", obj), act("take", obj)]
        return [act("take", obj)]

    # Target not in view: open what is closed here, else go where something is.
    opens = [act("open", c) for c in view.closed_at(here)]
    gos = [act("go", l) for l in view.locations() if l != here and view.closed_at(l)]
    cands = (opens or gos) + [LOOK]
    if defects.wanders_on_missing_object and not opens:
        others = [l for l in view.locations() if l != here]
        if others:
            cands = [act("go", others[0])] + [a for a in cands if a != act("go", others[0])]
    return cands


def plan_candidates(goal: Sequence[Fact], facts: Iterable[Fact], defects: DefectProfile) -> list[Action]:
    """Ordered candidate actions before any memory or note guidance."""
    view = _View(facts)
    obj, pending = _next_target(goal, view)
    if obj is None:
        at_goal = next((g for g in pending if g.predicate == "at"), None)
        return [act("go", at_goal.args[0])] if at_goal else [LOOK]

    correct = _plan(obj, pending, view, defects)
    cands = correct
    if defects.ignores_temperature_goals:
        kept = [g for g in pending if g.predicate not in ("hot", "cold")]
        skipping = _plan(obj, kept, view, defects) if kept else [LOOK]
        cands = skipping + [a for a in correct if a not in skipping]
    if defects.never_opens_closed:
        cands = [a for a in cands if a.verb != "open"] + [a for a in cands if a.verb == "open"]
    return _dedupe(cands)


def _dedupe(actions: Iterable[Action]) -> list[Action]:
    return list(dict.fromkeys(actions))


def apply_guidance(
    candidates: Sequence[Action],
    retrieved: Sequence[RetrievedRule],
    notes: Sequence[str],
    facts: Iterable[Fact],
) -> list[Action]:
    cands = list(candidates)
    avoid = {rr.directive.atom for rr in retrieved if rr.directive.kind == "AVOID"}
    promote = {rr.directive.atom for rr in retrieved if rr.directive.kind in ("PREFER", "REQUIRE")}
    cands = [a for a in cands if a.to_fact() not in avoid]
    cands = [a for a in cands if a.to_fact() in promote] + [
        a for a in cands if a.to_fact() not in promote
    ]
    if notes:
        fact_set = frozenset(facts)
        advice = [adv for adv in parse_advice(notes) if adv.when <= fact_set]
        preferred = {adv.action for adv in advice if adv.kind == "prefer"}
        required = [adv.action for adv in advice if adv.kind == "require"]
        blocked = {adv.action for adv in advice if adv.kind == "avoid"}
        # Prefer reorders what the planner proposed; Require may add a move.
        cands = [a for a in cands if a in preferred] + [a for a in cands if a not in preferred]
        cands = _dedupe(required + cands)
        cands = [a for a in cands if a not in blocked]
    return cands


@dataclass(frozen=True)
class ScriptedPolicy:
    defects: DefectProfile = field(default_factory=DefectProfile)

    def candidates(self, ctx: PolicyContext) -> list[Action]:
        base = plan_candidates(ctx.task_goal, ctx.observation.facts, self.defects)
        return apply_guidance(base, ctx.retrieved, ctx.feedback_notes, ctx.observation.facts)

    def decide(self, ctx: PolicyContext) -> Action:
        cands = self.candidates(ctx)
        return cands[0] if cands else LOOK


# --------------------------------------------------------------------------
# Prompting (remote policy)
# --------------------------------------------------------------------------


def render_prompt(ctx: PolicyContext) -> str:
    obs = ctx.observation
    lines = ["You are a household agent acting in a text world.", ""]
    lines.append("GOAL: " + ", ".join(str(g) for g in ctx.task_goal))
    lines.append(f"STEP: {obs.step_index}")
    lines.append("FACTS:")
    lines += [f"  {f}" for f in sorted(obs.facts)]
    lines.append("ADMISSIBLE ACTIONS:")
    lines += [f"  {a}" for a in sorted(obs.admissible)]
    if ctx.retrieved:
        lines.append("RULES:")
        for rr in ctx.retrieved:
            lines.append(f"  [{rr.confidence:.2f}] {print_rule(rr.entry.rule)}  => {rr.directive}")
    else:
        lines.append("RULES: (none)")
    if ctx.feedback_notes:
        lines.append("NOTES:")
        lines += [f"  - {n}" for n in ctx.feedback_notes]
    else:
        lines.append("NOTES: (none)")
    lines.append("")
    lines.append(
        "Follow PREFER and REQUIRE rules where they apply and never take an AVOID action. "
        "Answer with exactly one action from the admissible list, written verb(arg, ...)."
    )
    return "\n".join(lines) + "\n"


_ACTION_SPAN_RE = re.compile(r"\b([a-z_]+)\(\s*([a-z0-9_]*(?:\s*,\s*[a-z0-9_]+)*)\s*\)")
_BARE_LOOK_RE = re.compile(r"^\s*look\s*$")


def parse_action(text: str) -> Action:
    """First well-formed ``verb(args)`` span in a model reply."""
    for line in text.splitlines():
        if line.strip().startswith("```"):
            continue
        for m in _ACTION_SPAN_RE.finditer(line):
            verb, raw = m.group(1), m.group(2)
            args = tuple(a.strip() for a in raw.split(",")) if raw.strip() else ()
            if ACTION_ARITY.get(verb) == len(args):
                return Action(verb, args)
        if _BARE_LOOK_RE.match(line):
            return LOOK
    raise ActionParseError(f"no action found in reply: {text[:80]!r}")


@dataclass
class RemotePolicy:
    client: RemoteClient

    def decide(self, ctx: PolicyContext) -> Action:
        return parse_action(self.client.complete(render_prompt(ctx)))
