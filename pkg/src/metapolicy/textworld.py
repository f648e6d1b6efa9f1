"""Deterministic household world: states, actions, transitions and goal checks.

Objects sit in receptacles, directly in a location, or in the agent's single
hand slot.  An object inside a closed receptacle is hidden: it emits no facts
and cannot be taken.  Observations list every other fact in the house, so the
agent knows the map but not the contents of closed containers.

Task files are line based ``key: value`` text::

    task_id: t01_hidden_apple
    start: kitchen
    location: kitchen
    location: diningroom
    appliance: kitchen heating cooling
    receptacle: fridge kitchen openable closed
    receptacle: table diningroom
    object: apple fridge dirty
    pool: apple fridge cabinet
    goal: in(apple, table)
    step_budget: 30
    gamma: 1.0

``object`` takes a place (receptacle, location or ``inventory``) followed by
optional ``clean``/``dirty`` and ``hot``/``cold`` flags (default clean, room
temperature).  ``pool`` lists receptacles an object may be reseated among on
reset, chosen by the seed.
"""

from __future__ import annotations

import copy
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .rulelang import ACTION_ARITY, Fact, fact, parse_fact

INVENTORY = "inventory"
CAPABILITIES = {"cleaning": "can_clean", "heating": "can_heat", "cooling": "can_cool"}
DEFAULT_STEP_BUDGET = 30

OBSERVATION_PREDICATES = frozenset(
    {
        "at", "holding", "hand_empty", "in", "open", "closed", "openable", "clean",
        "dirty", "hot", "cold", "room_temp", "can_clean", "can_heat", "can_cool",
        "visible", "last_action_invalid",
    }
)
GOAL_PREDICATES = frozenset({"at", "holding", "in", "clean", "hot", "cold", "open", "closed"})
LAST_ACTION_INVALID = fact("last_action_invalid")
_NAME_RE = re.compile(r"[a-z][a-z0-9_]*\Z")


class InvalidTask(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Action:
    verb: str
    args: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        arity = ACTION_ARITY.get(self.verb)
        if arity is None:
            raise ValueError(f"unknown verb {self.verb!r}")
        if arity != len(self.args):
            raise ValueError(f"{self.verb} takes {arity} argument(s), got {len(self.args)}")

    def __str__(self) -> str:
        return f"{self.verb}({', '.join(self.args)})"

    def to_fact(self) -> Fact:
        return Fact(self.verb, self.args)

    @classmethod
    def parse(cls, text: str) -> Action:
        f = parse_fact(text)
        return cls(f.predicate, f.args)


def act(verb: str, *args: str) -> Action:
    return Action(verb, tuple(args))


LOOK = Action("look")


@dataclass
class Receptacle:
    at: str
    openable: bool = False
    open: bool = False


@dataclass
class Item:
    place: str
    clean: bool = True
    hot: bool = False
    cold: bool = False


@dataclass
class WorldState:
    agent_at: str
    locations: tuple[str, ...]
    receptacles: dict[str, Receptacle] = field(default_factory=dict)
    objects: dict[str, Item] = field(default_factory=dict)
    appliances: dict[str, frozenset[str]] = field(default_factory=dict)

    @property
    def inventory(self) -> str | None:
        for name in sorted(self.objects):
            if self.objects[name].place == INVENTORY:
                return name
        return None

    def location_of(self, place: str) -> str:
        if place == INVENTORY:
            return self.agent_at
        if place in self.receptacles:
            return self.receptacles[place].at
        return place

    def is_visible(self, obj: str) -> bool:
        place = self.objects[obj].place
        rec = self.receptacles.get(place)
        return rec is None or not rec.openable or rec.open

    def copy(self) -> WorldState:
        return copy.deepcopy(self)

    def snapshot(self) -> dict:
        """Plain-data view, for equality checks and logs."""
        return {
            "agent_at": self.agent_at,
            "locations": list(self.locations),
            "receptacles": {
                r: [v.at, v.openable, v.open] for r, v in sorted(self.receptacles.items())
            },
            "objects": {
                o: [v.place, v.clean, v.hot, v.cold] for o, v in sorted(self.objects.items())
            },
            "appliances": {l: sorted(c) for l, c in sorted(self.appliances.items())},
        }


def check_state(state: WorldState) -> list[str]:
    """Invariant violations of a state (empty list when consistent)."""
    problems = []
    names = [*state.locations, *state.receptacles, *state.objects]
    if len(set(names)) != len(names):
        problems.append("location, receptacle and object names must be distinct")
    for n in names:
        if not _NAME_RE.match(n) or n == INVENTORY:
            problems.append(f"bad name {n!r}")
    if state.agent_at not in state.locations:
        problems.append(f"agent at unknown location {state.agent_at!r}")
    for r, rec in state.receptacles.items():
        if rec.at not in state.locations:
            problems.append(f"receptacle {r} at unknown location {rec.at!r}")
        if rec.open and not rec.openable:
            problems.append(f"receptacle {r} is open but not openable")
    held = [o for o, it in state.objects.items() if it.place == INVENTORY]
    if len(held) > 1:
        problems.append(f"holding more than one object: {held}")
    for o, it in state.objects.items():
        if it.place != INVENTORY and it.place not in state.receptacles and it.place not in state.locations:
            problems.append(f"object {o} in unknown place {it.place!r}")
        if it.hot and it.cold:
            problems.append(f"object {o} is both hot and cold")
    for loc, caps in state.appliances.items():
        if loc not in state.locations:
            problems.append(f"appliance at unknown location {loc!r}")
        for c in caps:
            if c not in CAPABILITIES:
                problems.append(f"unknown capability {c!r}")
    return problems


def _object_facts(name: str, item: Item) -> list[Fact]:
    out = [fact("visible", name), fact("clean" if item.clean else "dirty", name)]
    if item.hot:
        out.append(fact("hot", name))
    elif item.cold:
        out.append(fact("cold", name))
    else:
        out.append(fact("room_temp", name))
    if item.place != INVENTORY:
        out.append(fact("in", name, item.place))
    return out


def state_facts(state: WorldState, *, full: bool = False) -> frozenset[Fact]:
    """Facts describing ``state``.

    By default objects hidden in closed receptacles are left out; ``full``
    includes them (used for goal checks).
    """
    out = [fact("at", state.agent_at)]
    held = state.inventory
    out.append(fact("holding", held) if held else fact("hand_empty"))
    for loc, caps in state.appliances.items():
        out.extend(fact(CAPABILITIES[c], loc) for c in caps)
    for r, rec in state.receptacles.items():
        out.append(fact("in", r, rec.at))
        if rec.openable:
            out.append(fact("openable", r))
            out.append(fact("open" if rec.open else "closed", r))
    for o, item in state.objects.items():
        if full or state.is_visible(o):
            facts = _object_facts(o, item)
            if full and not state.is_visible(o):
                facts = [f for f in facts if f.predicate != "visible"]
            out.extend(facts)
    return frozenset(out)


def goal_satisfied(state: WorldState, goal: Iterable[Fact]) -> bool:
    full = state_facts(state, full=True)
    return all(g in full for g in goal)


def admissible_actions(state: WorldState) -> frozenset[Action]:
    here = state.agent_at
    held = state.inventory
    out = {LOOK}
    out.update(act("go", l) for l in state.locations if l != here)
    for o in state.objects:
        if state.objects[o].place == INVENTORY:
            out.add(act("examine", o))
            continue
        if state.is_visible(o) and state.location_of(state.objects[o].place) == here:
            out.add(act("examine", o))
            if held is None:
                out.add(act("take", o))
    for r, rec in state.receptacles.items():
        if rec.at != here:
            continue
        if rec.openable:
            out.add(act("close", r) if rec.open else act("open", r))
        if held is not None and (rec.open or not rec.openable):
            out.add(act("put", held, r))
    if held is not None:
        caps = state.appliances.get(here, frozenset())
        for cap, verb in (("cleaning", "clean"), ("heating", "heat"), ("cooling", "cool")):
            if cap in caps:
                out.add(act(verb, held))
    return frozenset(out)


def apply_action(state: WorldState, action: Action) -> None:
    """Apply an admissible action in place."""
    v, a = action.verb, action.args
    if v == "go":
        state.agent_at = a[0]
    elif v == "open":
        state.receptacles[a[0]].open = True
    elif v == "close":
        state.receptacles[a[0]].open = False
    elif v == "take":
        state.objects[a[0]].place = INVENTORY
    elif v == "put":
        state.objects[a[0]].place = a[1]
    elif v == "clean":
        state.objects[a[0]].clean = True
    elif v == "heat":
        state.objects[a[0]].hot, state.objects[a[0]].cold = True, False
    elif v == "cool":
        state.objects[a[0]].cold, state.objects[a[0]].hot = True, False
    # examine and look change nothing


@dataclass(frozen=True)
class Observation:
    facts: frozenset[Fact]
    admissible: frozenset[Action]
    step_index: int
    done: bool
    reward: int

    def to_record(self) -> dict:
        return {
            "step_index": self.step_index,
            "facts": sorted(str(f) for f in self.facts),
            "admissible": sorted(str(a) for a in self.admissible),
            "done": self.done,
            "reward": self.reward,
        }

    def serialize(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


@dataclass
class TaskSpec:
    task_id: str
    initial: WorldState
    goal: tuple[Fact, ...]
    step_budget: int = DEFAULT_STEP_BUDGET
    gamma: float = 1.0
    pools: dict[str, tuple[str, ...]] = field(default_factory=dict)
    archetype: str = ""

    def goal_objects(self) -> list[str]:
        objs = {g.args[0] for g in self.goal if g.args and g.args[0] in self.initial.objects}
        return sorted(objs)


def validate_task(task: TaskSpec) -> None:
    problems = check_state(task.initial)
    if not _NAME_RE.match(task.task_id.replace("-", "_")):
        problems.append(f"bad task id {task.task_id!r}")
    if task.step_budget < 1:
        problems.append("step_budget must be >= 1")
    if not 0.0 < task.gamma <= 1.0:
        problems.append("gamma must be in (0, 1]")
    st = task.initial
    known = set(st.locations) | set(st.receptacles) | set(st.objects)
    for g in task.goal:
        if g.predicate not in GOAL_PREDICATES:
            problems.append(f"goal predicate {g.predicate!r} not in the observation vocabulary")
        for arg in g.args:
            if arg not in known:
                problems.append(f"goal {g} references unknown name {arg!r}")
    for obj, pool in task.pools.items():
        if obj not in st.objects:
            problems.append(f"pool for unknown object {obj!r}")
        for r in pool:
            if r not in st.receptacles:
                problems.append(f"pool receptacle {r!r} unknown")
    if problems:
        raise InvalidTask(f"task {task.task_id}: " + "; ".join(problems))


class TextWorld:
    """One episode at a time; create a fresh instance per concurrent episode."""

    def __init__(self) -> None:
        self.task: TaskSpec | None = None
        self.state: WorldState | None = None
        self.step_index = 0
        self.done = True
        self.reward = 0

    def reset(self, task: TaskSpec, seed: int = 0) -> Observation:
        validate_task(task)
        state = task.initial.copy()
        if task.pools:
            rng = random.Random(seed)
            for obj in sorted(task.pools):
                state.objects[obj].place = rng.choice(sorted(task.pools[obj]))
        self.task = task
        self.state = state
        self.step_index = 0
        self.reward = 1 if goal_satisfied(state, task.goal) else 0
        self.done = bool(self.reward)
        return self._observe(invalid=False)

    def _observe(self, invalid: bool) -> Observation:
        facts = state_facts(self.state)
        if invalid:
            facts = facts | {LAST_ACTION_INVALID}
        return Observation(facts, admissible_actions(self.state), self.step_index, self.done, self.reward)

    def step(self, action: Action) -> Observation:
        if self.task is None or self.done:
            raise EpisodeFinished("episode is over; call reset()")
        valid = action in admissible_actions(self.state)
        if valid:
            apply_action(self.state, action)
        self.step_index += 1
        if goal_satisfied(self.state, self.task.goal):
            self.reward, self.done = 1, True
        elif self.step_index >= self.task.step_budget:
            self.done = True
        return self._observe(invalid=not valid)


# --------------------------------------------------------------------------
# Task files
# --------------------------------------------------------------------------


def dump_task(task: TaskSpec) -> str:
    st = task.initial
    lines = [f"task_id: {task.task_id}"]
    if task.archetype:
        lines.append(f"archetype: {task.archetype}")
    lines += [f"step_budget: {task.step_budget}", f"gamma: {task.gamma}", f"start: {st.agent_at}"]
    lines += [f"location: {l}" for l in st.locations]
    for loc, caps in sorted(st.appliances.items()):
        lines.append(f"appliance: {loc} {' '.join(sorted(caps))}")
    for r, rec in sorted(st.receptacles.items()):
        flags = " openable open" if rec.open else " openable closed" if rec.openable else ""
        lines.append(f"receptacle: {r} {rec.at}{flags}")
    for o, it in sorted(st.objects.items()):
        flags = ["clean" if it.clean else "dirty"]
        if it.hot:
            flags.append("hot")
        if it.cold:
            flags.append("cold")
        lines.append(f"object: {o} {it.place} {' '.join(flags)}")
    for o, pool in sorted(task.pools.items()):
        lines.append(f"pool: {o} {' '.join(pool)}")
    lines += [f"goal: {g}" for g in task.goal]
    return "\n".join(lines) + "\n"


def parse_task(text: str, source: str = "<task>") -> TaskSpec:
    fields: dict[str, str] = {}
    locations: list[str] = []
    receptacles: dict[str, Receptacle] = {}
    objects: dict[str, Item] = {}
    appliances: dict[str, frozenset[str]] = {}
    pools: dict[str, tuple[str, ...]] = {}
    goal: list[Fact] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise InvalidTask(f"{source}:{lineno}: expected 'key: value'")
        key, value = key.strip(), value.strip()
        words = value.split()
        try:
            if key in ("task_id", "start", "step_budget", "gamma", "archetype"):
                fields[key] = value
            elif key == "location":
                locations.append(value)
            elif key == "appliance":
                appliances[words[0]] = frozenset(words[1:])
            elif key == "receptacle":
                flags = set(words[2:])
                unknown = flags - {"openable", "open", "closed"}
                if unknown:
                    raise InvalidTask(f"unknown receptacle flags {sorted(unknown)}")
                receptacles[words[0]] = Receptacle(
                    words[1], openable="openable" in flags, open="open" in flags
                )
            elif key == "object":
                flags = set(words[2:])
                unknown = flags - {"clean", "dirty", "hot", "cold"}
                if unknown:
                    raise InvalidTask(f"unknown object flags {sorted(unknown)}")
                objects[words[0]] = Item(
                    words[1], clean="dirty" not in flags, hot="hot" in flags, cold="cold" in flags
                )
            elif key == "pool":
                pools[words[0]] = tuple(words[1:])
            elif key == "goal":
                goal.append(parse_fact(value))
            else:
                raise InvalidTask(f"unknown key {key!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InvalidTask):
                raise InvalidTask(f"{source}:{lineno}: {exc}") from None
            raise InvalidTask(f"{source}:{lineno}: malformed {key!r} line") from None
    for required in ("task_id", "start"):
        if required not in fields:
            raise InvalidTask(f"{source}: missing {required!r}")
    task = TaskSpec(
        task_id=fields["task_id"],
        initial=WorldState(fields["start"], tuple(locations), receptacles, objects, appliances),
        goal=tuple(goal),
        step_budget=int(fields.get("step_budget", DEFAULT_STEP_BUDGET)),
        gamma=float(fields.get("gamma", 1.0)),
        pools=pools,
        archetype=fields.get("archetype", ""),
    )
    validate_task(task)
    return task


def load_task(path: str | Path) -> TaskSpec:
    path = Path(path)
    return parse_task(path.read_text(encoding="utf-8"), str(path))


def load_task_dir(path: str | Path) -> list[TaskSpec]:
    """All ``*.task`` files in a directory, sorted by task id."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"task directory not found: {path}")
    tasks = [load_task(p) for p in sorted(path.glob("*.task"))]
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise InvalidTask(f"duplicate task ids in {path}")
    return sorted(tasks, key=lambda t: t.task_id)


def gen_tasks(suite: str, out_dir: str | Path) -> int:
    """Write a bundled suite (``train_small`` or ``test_small``) as task files."""
    from .suites import SUITES

    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; valid suites: {', '.join(sorted(SUITES))}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = SUITES[suite]()
    for task in tasks:
        (out / f"{task.task_id}.task").write_text(dump_task(task), encoding="utf-8")
    return len(tasks)


def make_state(
    start: str,
    locations: Iterable[str],
    receptacles: Mapping[str, tuple] = (),
    objects: Mapping[str, tuple] = (),
    appliances: Mapping[str, Iterable[str]] = (),
) -> WorldState:
    """Compact constructor used by suites and tests.

    ``receptacles`` maps name -> (location, openable, open);
    ``objects`` maps name -> (place, clean, hot, cold) with trailing fields optional.
    """
    return WorldState(
        agent_at=start,
        locations=tuple(locations),
        receptacles={r: Receptacle(*spec) for r, spec in dict(receptacles).items()},
        objects={o: Item(*spec) for o, spec in dict(objects).items()},
        appliances={l: frozenset(c) for l, c in dict(appliances).items()},
    )
