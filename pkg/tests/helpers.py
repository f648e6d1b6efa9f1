"""Shared test helpers and reference oracles."""

from __future__ import annotations

import itertools
from pathlib import Path

from metapolicy.rulelang import Fact, Literal, parse_fact
from metapolicy.textworld import TaskSpec, make_state

GOLDEN = Path(__file__).parent / "golden"
REPO = Path(__file__).resolve().parent.parent


def facts(*texts: str) -> frozenset[Fact]:
    return frozenset(parse_fact(t) for t in texts)


def brute_force_match(condition: list[Literal], fact_set: frozenset[Fact]) -> list[dict]:
    """Reference matcher: try every assignment of positive literals to facts."""
    positives = [lit for lit in condition if not lit.negated]
    negatives = [lit for lit in condition if lit.negated]
    found = {}
    for combo in itertools.product(sorted(fact_set), repeat=len(positives)):
        binding: dict[str, str] = {}
        ok = True
        for lit, f in zip(positives, combo):
            if lit.predicate != f.predicate or lit.arity != len(f.args):
                ok = False
                break
            for term, value in zip(lit.args, f.args):
                name = getattr(term, "name", None)
                if name is None:
                    if term.symbol != value:
                        ok = False
                elif binding.setdefault(name, value) != value:
                    ok = False
            if not ok:
                break
        if not ok:
            continue
        if any(lit.substitute(binding).to_fact() in fact_set for lit in negatives):
            continue
        found[tuple(sorted(binding.items()))] = binding
    return list(found.values())


def kitchen_task(goal=("in(apple, table)",), apple=("fridge",), budget=30) -> TaskSpec:
    """Two rooms; the apple starts in a closed fridge in the kitchen."""
    state = make_state(
        "kitchen",
        ["kitchen", "garage"],
        {"fridge": ("kitchen", True, False), "table": ("kitchen", False, False),
         "shelf": ("garage", False, False)},
        {"apple": apple},
        {"kitchen": ["cleaning", "heating"]},
    )
    return TaskSpec("k01", state, tuple(parse_fact(g) for g in goal), step_budget=budget)


# --------------------------------------------------------------------------
# Rule generators
# --------------------------------------------------------------------------

# Predicate names carry their arity so generated rules never clash.
COND_PREDICATES = ("flag0", "p1", "q1", "r2", "s2", "t3")
VARIABLES = ("?x", "?y", "?z", "?long_name1")
CONSTANTS = ("apple", "fridge", "k9", "a_b")


def _arity(pred: str) -> int:
    return int(pred[-1])


def rule_texts():
    """Hypothesis strategy producing valid rule source text."""
    from hypothesis import strategies as st

    from metapolicy.rulelang import ACTION_ARITY

    @st.composite
    def build(draw):
        n_pos = draw(st.integers(1, 4))
        n_neg = draw(st.integers(0, 6 - n_pos))
        pos, bound = [], []
        for _ in range(n_pos):
            pred = draw(st.sampled_from(COND_PREDICATES))
            args = [draw(st.sampled_from(VARIABLES + CONSTANTS)) for _ in range(_arity(pred))]
            bound += [a for a in args if a.startswith("?")]
            pos.append(f"{pred}({', '.join(args)})")
        pool = tuple(dict.fromkeys(bound)) + CONSTANTS
        neg = []
        for _ in range(n_neg):
            pred = draw(st.sampled_from(COND_PREDICATES))
            args = [draw(st.sampled_from(pool)) for _ in range(_arity(pred))]
            neg.append(f"NOT {pred}({', '.join(args)})")
        lits = draw(st.permutations(pos + neg))
        kind = draw(st.sampled_from(("AVOID", "PREFER", "REQUIRE")))
        verb = draw(st.sampled_from(sorted(ACTION_ARITY)))
        vargs = [draw(st.sampled_from(pool)) for _ in range(ACTION_ARITY[verb])]
        return f"WHEN {' AND '.join(lits)} THEN {kind} {verb}({', '.join(vargs)})"

    return build()


def exhaustive_instances():
    """Every (condition, facts) pair over a small vocabulary.

    Conditions have 1..3 literals drawn from a fixed pool (negated literals
    only over variables some positive literal binds); fact sets are all
    subsets of six ground atoms, so every set has at most 6 facts.
    """
    from metapolicy.rulelang import parse_rule

    atoms = ["p(a)", "p(b)", "q(a, a)", "q(a, b)", "q(b, a)", "q(b, b)"]
    fact_sets = [
        frozenset(parse_fact(atoms[i]) for i in range(6) if mask >> i & 1) for mask in range(64)
    ]
    pool = ["p(?x)", "p(?y)", "p(a)", "q(?x, ?y)", "q(?y, ?x)", "q(?x, ?x)", "q(?x, a)"]
    pool += [f"NOT {lit}" for lit in pool]
    conditions = []
    for n in (1, 2, 3):
        for combo in itertools.combinations_with_replacement(pool, n):
            # Literal order cannot change the binding set, so one order suffices.
            text = f"WHEN {' AND '.join(combo)} THEN AVOID look()"
            try:
                conditions.append(parse_rule(text).condition)
            except Exception:  # unsafe or all-negated: not a valid condition
                continue
    return conditions, fact_sets


def random_rule_texts(n: int, seed: int = 0) -> list[str]:
    """Plain seeded counterpart of :func:`rule_texts`, for fixed-count runs."""
    import random

    from metapolicy.rulelang import ACTION_ARITY

    rng = random.Random(seed)
    verbs = sorted(ACTION_ARITY)
    out = []
    for _ in range(n):
        n_pos = rng.randint(1, 4)
        n_neg = rng.randint(0, 6 - n_pos)
        pos, bound = [], []
        for _ in range(n_pos):
            pred = rng.choice(COND_PREDICATES)
            args = [rng.choice(VARIABLES + CONSTANTS) for _ in range(_arity(pred))]
            bound += [a for a in args if a.startswith("?")]
            pos.append(f"{pred}({', '.join(args)})")
        pool = tuple(dict.fromkeys(bound)) + CONSTANTS
        neg = []
        for _ in range(n_neg):
            pred = rng.choice(COND_PREDICATES)
            neg.append(f"NOT {pred}({', '.join(rng.choice(pool) for _ in range(_arity(pred)))})")
        lits = pos + neg
        rng.shuffle(lits)
        kind = rng.choice(("AVOID", "PREFER", "REQUIRE"))
        verb = rng.choice(verbs)
        vargs = ", ".join(rng.choice(pool) for _ in range(ACTION_ARITY[verb]))
        out.append(f"WHEN {' AND '.join(lits)} THEN {kind} {verb}({vargs})")
    return out
