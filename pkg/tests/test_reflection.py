import logging

import pytest

from helpers import facts
from metapolicy.harness import EpisodeOptions, run_episode
from metapolicy.memory import InsertOutcome, MetaPolicyMemory, Provenance
from metapolicy.policy import DefectProfile, ScriptedPolicy
from metapolicy.reflection import (
    EXAMPLE_RULES,
    GRAMMAR,
    Diagnosis,
    RemoteReflector,
    ScriptedReflector,
    Step,
    Trajectory,
    baseline_notes,
    diagnose,
    meta_policy_update,
    parse_reflection_reply,
    reflect,
    render_reflection_prompt,
)
from metapolicy.rulelang import parse_rule, print_rule, validate_rule
from metapolicy.suites import SUITES, defect_fixtures
from metapolicy.textworld import LOOK, act

TRAIN = EpisodeOptions(guard=None)


def _fail(task, profile, memory=None):
    return run_episode(task, ScriptedPolicy(profile), memory or MetaPolicyMemory(), TRAIN)


class FakeClient:
    def __init__(self, reply):
        self.reply = reply
        self.prompts = []

    def complete(self, prompt, max_reply_tokens=None):
        self.prompts.append(prompt)
        return self.reply


def test_never_opens_fixture_yields_prefer_open(kitchen):
    traj = _fail(kitchen, DefectProfile(never_opens_closed=True))
    assert not traj.success
    rules = reflect(traj)
    opens = [r for r in rules if r.directive.kind == "PREFER" and r.directive.pattern.predicate == "open"]
    assert opens
    assert any(lit.predicate == "closed" for lit in opens[0].condition)
    assert print_rule(opens[0]) == "WHEN at(?r) AND in(?c, ?r) AND closed(?c) THEN PREFER open(?c)"


def test_successful_trajectory_reflects_nothing(kitchen):
    traj = _fail(kitchen, DefectProfile())
    assert traj.success
    assert reflect(traj) == [] and diagnose(traj) == []
    assert ScriptedReflector().reflect(traj) == []


def _loop_traj(n=5):
    f = facts("at(kitchen)", "hand_empty()", "in(fridge, kitchen)", "open(fridge)")
    steps = [Step(f, (), act("go", "garage"), None, 0, False) for _ in range(n)]
    return Trajectory("loop", tuple(facts("at(garage)")), steps)


def test_repeated_go_yields_avoid_go():
    rules = reflect(_loop_traj())
    avoid = [print_rule(r) for r in rules if r.directive.kind == "AVOID"]
    # open(fridge) does not mention garage, so it stays out of the condition
    assert avoid == ["WHEN at(kitchen) AND hand_empty() THEN AVOID go(garage)"]


def test_loop_needs_three_repeats():
    kinds = lambda traj: [d.kind for d in diagnose(traj)]  # noqa: E731
    assert "action_loop" not in kinds(_loop_traj(2))
    assert "action_loop" in kinds(_loop_traj(3))


def test_look_never_counts_as_a_loop():
    f = facts("at(kitchen)", "hand_empty()")
    traj = Trajectory("x", (), [Step(f, (), LOOK, None, 0, False)] * 6)
    assert all(d.kind != "action_loop" for d in diagnose(traj))


def test_invalid_action_yields_avoid_template():
    f = facts("at(kitchen)", "holding(cup)", "in(mug, kitchen)", "visible(mug)")
    steps = [Step(f, (), act("take", "mug"), None, 0, False, invalid=True)]
    ds = diagnose(Trajectory("x", tuple(facts("in(mug, kitchen)")), steps))
    assert [d.kind for d in ds] == ["avoid_repeat_invalid"]
    assert print_rule(ds[0].rule) == "WHEN holding(?y) AND visible(?x) THEN AVOID take(?x)"
    assert ds[0].note == "Avoid take(mug) when holding(cup), visible(mug)."
    assert ds[0].evidence == (0,)


def test_clean_before_take_yields_prefer_take():
    task = defect_fixtures()["cleans_before_taking"]
    traj = _fail(task, DefectProfile(cleans_before_taking=True))
    texts = [print_rule(r) for r in reflect(traj)]
    assert "WHEN hand_empty() AND visible(?x) AND dirty(?x) THEN PREFER take(?x)" in texts


def test_every_emitted_rule_is_valid_and_unique():
    for task in SUITES["train_small"]():
        traj = _fail(task, DefectProfile.all())
        rules = reflect(traj)
        assert len(rules) <= 4
        assert all(validate_rule(r) == [] for r in rules)
        assert len({print_rule(r) for r in rules}) == len(rules)
        assert reflect(traj) == rules  # pure


def test_diagnosis_rejects_unknown_kind():
    with pytest.raises(ValueError):
        Diagnosis("confused", ())


def test_baseline_notes_are_plain_advice():
    traj = _loop_traj()
    notes = baseline_notes(traj)
    assert "Avoid go(garage) when at(kitchen), hand_empty()." in notes
    assert "Too many steps changed nothing in the world." not in notes
    idle = Trajectory("x", (), [Step(facts("at(k)"), (), LOOK, None, 0, False)] * 10)
    assert baseline_notes(idle) == ["Too many steps changed nothing in the world."]


# -- meta_policy_update ----------------------------------------------------


def test_update_inserts_at_initial_confidence(kitchen):
    traj = _fail(kitchen, DefectProfile(never_opens_closed=True))
    mem = MetaPolicyMemory()
    out = meta_policy_update(traj, mem)
    assert out and all(o is InsertOutcome.ADDED for o, _ in out)
    assert all(mem.get(h).confidence == 0.5 for _, h in out)
    assert all(mem.get(h).provenance.source == "scripted" for _, h in out)


def test_update_twice_only_merges(kitchen):
    traj = _fail(kitchen, DefectProfile(never_opens_closed=True))
    mem = MetaPolicyMemory()
    meta_policy_update(traj, mem)
    size = len(mem)
    out = meta_policy_update(traj, mem)
    assert len(mem) == size
    assert all(o is InsertOutcome.MERGED for o, _ in out)
    assert all(mem.get(h).confidence == pytest.approx(0.55) for _, h in out)


def test_update_penalises_followed_rules(kitchen):
    mem = MetaPolicyMemory()
    # Promotes look(), which keeps the defective policy away from the fridge.
    _, h = mem.insert(parse_rule("WHEN at(kitchen) THEN PREFER look()"), Provenance())
    traj = _fail(kitchen, DefectProfile(never_opens_closed=True), mem)
    assert not traj.success
    meta_policy_update(traj, mem)
    assert mem.get(h).confidence == pytest.approx(0.3)
    assert mem.get(h).stats.failures == 1


def test_update_refuses_successful_episodes(kitchen):
    traj = _fail(kitchen, DefectProfile())
    with pytest.raises(ValueError):
        meta_policy_update(traj, MetaPolicyMemory())


def test_remote_reflector_keeps_good_lines_and_warns(kitchen, caplog):
    traj = _fail(kitchen, DefectProfile(never_opens_closed=True))
    client = FakeClient("WHEN at(?r) AND closed(?c) THEN PREFER open(?c)\nopen the fridge, you fool\n")
    mem = MetaPolicyMemory()
    with caplog.at_level(logging.WARNING, logger="metapolicy.reflection"):
        out = meta_policy_update(traj, mem, RemoteReflector(client))
    assert len(out) == 1 and len(mem) == 1
    assert mem.get(out[0][1]).provenance.source == "remote"
    warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
    assert len(warnings) == 1 and "dropped 1" in warnings[0].getMessage()
    prompt = client.prompts[0]
    assert GRAMMAR in prompt and all(r in prompt for r in EXAMPLE_RULES)
    assert prompt == render_reflection_prompt(traj)


def test_remote_reflector_skips_successes(kitchen):
    client = FakeClient("WHEN at(?r) THEN AVOID go(?r)")
    assert RemoteReflector(client).reflect(_fail(kitchen, DefectProfile())) == []
    assert client.prompts == []


# -- reply parsing ---------------------------------------------------------


def test_parse_two_valid_lines():
    rules, dropped = parse_reflection_reply(
        "WHEN at(?r) THEN AVOID go(?r)\nWHEN dirty(?x) THEN PREFER clean(?x)\n"
    )
    assert (len(rules), dropped) == (2, 0)


def test_parse_prose_drops_every_line():
    rules, dropped = parse_reflection_reply("The agent should open things.\nIt did not.\nSad.")
    assert (rules, dropped) == ([], 3)


def test_parse_fenced_and_bulleted_rules():
    text = "```\n- WHEN at(?r) THEN AVOID go(?r)\n```\n"
    rules, dropped = parse_reflection_reply(text)
    assert [print_rule(r) for r in rules] == ["WHEN at(?r) THEN AVOID go(?r)"] and dropped == 0


def test_parse_drops_semantically_invalid_rules():
    rules, dropped = parse_reflection_reply("WHEN closed(?c) THEN AVOID take(?x)")
    assert (rules, dropped) == ([], 1)


# -- convergence -----------------------------------------------------------


@pytest.mark.parametrize("defect", sorted(defect_fixtures()))
def test_one_round_fixes_each_defect(defect):
    task = defect_fixtures()[defect]
    profile = DefectProfile(**{defect: True})
    mem = MetaPolicyMemory()
    first = _fail(task, profile, mem)
    assert not first.success
    assert meta_policy_update(first, mem)
    assert _fail(task, profile, mem).success


def test_reflecting_successes_leaves_memory_alone():
    mem = MetaPolicyMemory()
    for task in SUITES["train_small"]():
        traj = _fail(task, DefectProfile())
        assert traj.success and reflect(traj) == []
    assert len(mem) == 0
