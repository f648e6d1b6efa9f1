import json

import pytest

from helpers import REPO
from metapolicy.cli import main, rules_inspect
from metapolicy.memory import MetaPolicyMemory, Provenance, file_digest
from metapolicy.rulelang import parse_rule

TRAIN = str(REPO / "suites" / "train_small")
TEST = str(REPO / "suites" / "test_small")


def _mem_file(path, rules):
    mem = MetaPolicyMemory()
    for text, conf in rules:
        _, h = mem.insert(parse_rule(text), Provenance("manual", "demo", 1))
        mem.get(h).confidence = conf
    mem.save(path)
    return path


def test_train_then_infer(tmp_path, capsys):
    mem = tmp_path / "m.mpm"
    rc = main(["train", "--tasks", TRAIN, "--rounds", "2", "--seed", "7",
               "--memory-out", str(mem), "--report", str(tmp_path / "train.csv")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "mpr round 2: 12/12 solved (100.0%)" in out
    assert mem.is_file() and (tmp_path / "train.csv").read_text().count("\n") == 3
    digest = file_digest(mem)
    rc = main(["infer", "--tasks", TEST, "--memory-in", str(mem), "--report", str(tmp_path / "i.json")])
    assert rc == 0
    assert file_digest(mem) == digest
    doc = json.loads((tmp_path / "i.json").read_text())
    assert doc["reports"][0]["method"] == "mpr+hac"


def test_infer_without_memory_file_exits_1(tmp_path, capsys):
    rc = main(["infer", "--tasks", TEST, "--memory-in", str(tmp_path / "nope.mpm")])
    assert rc == 1
    assert "not found" in capsys.readouterr().err


def test_missing_tasks_flag_exits_1(capsys):
    assert main(["baseline"]) == 1
    assert "--tasks" in capsys.readouterr().err


def test_bad_flag_value_exits_1(capsys):
    assert main(["train", "--tasks", TRAIN, "--rounds", "many"]) == 1
    assert main(["train", "--tasks", TRAIN, "--defects", "lazy"]) == 1
    assert main(["infer", "--tasks", TEST, "--guard", "sometimes"]) == 1


def test_guard_config_errors_exit_1(tmp_path, capsys):
    mem = _mem_file(tmp_path / "m.mpm", [])
    assert main(["infer", "--tasks", TEST, "--memory-in", str(mem), "--resample-budget", "-1"]) == 1


def test_remote_policy_without_endpoint_exits_2(monkeypatch, capsys):
    monkeypatch.delenv("MPR_ENDPOINT_URL", raising=False)
    assert main(["baseline", "--tasks", TEST, "--rounds", "1", "--policy", "remote"]) == 2
    assert "MPR_ENDPOINT_URL" in capsys.readouterr().err


def test_rules_lint_reports_bad_confidence(tmp_path, capsys):
    path = _mem_file(tmp_path / "m.mpm", [("WHEN at(?r) THEN AVOID go(?r)", 0.5)])
    lines = path.read_text().splitlines()
    lines[-1] = lines[-1].replace('"confidence": 0.5', '"confidence": 1.7')
    path.write_text("\n".join(lines) + "\n")
    assert main(["rules", "lint", str(path)]) == 1
    err = capsys.readouterr().err
    assert f"line {len(lines)}" in err and "confidence" in err


def test_rules_lint_ok(tmp_path, capsys):
    path = _mem_file(tmp_path / "m.mpm", [("WHEN at(?r) THEN AVOID go(?r)", 0.5)])
    assert main(["rules", "lint", str(path)]) == 0
    assert "ok, 1 rule(s)" in capsys.readouterr().out


def test_rules_inspect_sorts_and_filters(tmp_path, capsys):
    path = _mem_file(
        tmp_path / "m.mpm",
        [("WHEN at(?r) THEN AVOID go(?r)", 0.4), ("WHEN dirty(?x) THEN PREFER clean(?x)", 0.9)],
    )
    assert main(["rules", "inspect", str(path)]) == 0
    body = capsys.readouterr().out.splitlines()[1:]
    assert "PREFER clean" in body[0] and "AVOID go" in body[1]
    only = rules_inspect(path, "dirty").splitlines()[1:]
    assert len(only) == 1 and "dirty" in only[0]
    assert rules_inspect(path, "heat").splitlines()[1:] == ["(empty)"]


def test_rules_inspect_empty_memory(tmp_path):
    path = _mem_file(tmp_path / "m.mpm", [])
    assert rules_inspect(path).splitlines()[1:] == ["(empty)"]


def test_config_file_matches_flags(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    flags = ["--tasks", TRAIN, "--rounds", "2", "--seed", "3", "--k", "6"]
    assert main(["train", *flags, "--memory-out", str(a / "m.mpm"), "--report", str(a / "r.json")]) == 0
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# same run\ntasks = {TRAIN}\nrounds = 2\nseed = 3\nk = 6\nmemory_out = {b / 'm.mpm'}\n")
    assert main(["train", "--config", str(cfg), "--report", str(b / "r.json")]) == 0
    assert (a / "m.mpm").read_bytes() == (b / "m.mpm").read_bytes()
    assert (a / "r.json").read_bytes() == (b / "r.json").read_bytes()


def test_command_line_wins_over_config(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"tasks = {TEST}\nrounds = 4\n")
    assert main(["baseline", "--config", str(cfg), "--rounds", "1"]) == 0
    out = capsys.readouterr().out
    assert "round 1" in out and "round 2" not in out


@pytest.mark.parametrize(
    "text, message",
    [("colour = red\n", "unknown key"), ("rounds\n", "key = value"), ("memory_out = x\n", "unknown key")],
)
def test_bad_config_files_exit_1(tmp_path, capsys, text, message):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    assert main(["baseline", "--config", str(cfg), "--tasks", TEST]) == 1
    assert message in capsys.readouterr().err


def test_missing_config_file_exits_1(tmp_path, capsys):
    assert main(["baseline", "--config", str(tmp_path / "none.cfg")]) == 1


def test_gen_tasks(tmp_path, capsys):
    assert main(["gen-tasks", "test_small", str(tmp_path / "t")]) == 0
    assert len(list((tmp_path / "t").glob("*.task"))) == 8
    assert main(["gen-tasks", "huge", str(tmp_path / "x")]) == 1


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "train" in capsys.readouterr().out
    assert main(["infer", "--help"]) == 0
    assert "--hard-conf-threshold" in capsys.readouterr().out


def test_log_dir_and_verbose(tmp_path, capsys):
    rc = main(["baseline", "--tasks", TEST, "--rounds", "2", "--log-dir", str(tmp_path / "logs"), "-v"])
    assert rc == 0
    assert sorted(p.name for p in (tmp_path / "logs").iterdir()) == [
        "baseline_round01.jsonl",
        "baseline_round02.jsonl",
    ]
