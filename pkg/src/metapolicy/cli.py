"""Command line: ``mpr train|infer|baseline|gen-tasks|rules``.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime failure.
Every run flag can also be given in a ``--config`` file of ``key = value``
lines (keys are flag names, dashes or underscores); flags on the command line
win over the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .admissibility import GuardConfig
from .harness import ConfigError, RoundReport, RunConfig, run_baseline, run_inference, run_training, write_reports
from .memory import FormatError, MetaPolicyMemory
from .policy import DefectProfile
from .remote import RemoteError
from .rulelang import RuleLangError
from .suites import SUITES
from .textworld import InvalidTask, gen_tasks

log = logging.getLogger("metapolicy")


class UsageError(Exception):
    """Bad flags or config; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _defects(text: str) -> DefectProfile:
    try:
        return DefectProfile.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser, *, rounds: bool, memory: bool) -> None:
    p.add_argument("--config", type=Path, default=None, help="key = value file with flag defaults")
    p.add_argument("--tasks", type=Path, default=None, help="directory of *.task files (required)")
    p.add_argument("--seed", type=int, default=0, help="placement-pool seed")
    if rounds:
        p.add_argument("--rounds", type=int, default=5, help="number of rounds")
    p.add_argument("--policy", choices=("scripted", "remote"), default="scripted", help="base policy")
    p.add_argument(
        "--defects", type=_defects, default=DefectProfile.all(),
        help="scripted-policy defects: all, none, or a comma list",
    )
    if memory:
        p.add_argument("--k", type=int, default=8, help="rules retrieved per step")
        p.add_argument("--min-conf", type=float, default=0.2, help="retrieval confidence floor")
    p.add_argument("--report", type=Path, default=None, help="report file (.csv or .json)")
    p.add_argument(
        "--report-format", choices=("csv", "json"), default=None,
        help="report format; when unset, taken from the report file extension",
    )
    p.add_argument("--log-dir", type=Path, default=None, help="directory for per-step trajectory logs")
    p.add_argument("-v", "--verbose", action="store_true", default=False, help="log progress to stderr")


def build_parser() -> _Parser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="mpr", description="Meta-policy reflexion runs on a desk-scale text world.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="training rounds with reflection", formatter_class=fmt)
    _add_common(p, rounds=True, memory=True)
    p.add_argument("--reflector", choices=("scripted", "remote"), default="scripted", help="rule source")
    p.add_argument("--memory-in", type=Path, default=None, help="resume from this memory file")
    p.add_argument("--memory-out", type=Path, default=None, help="final memory file (required)")
    p.add_argument("--prune-floor", type=float, default=0.1, help="drop rules below this confidence")

    p = sub.add_parser("infer", help="one pass with frozen memory", formatter_class=fmt)
    _add_common(p, rounds=False, memory=True)
    p.add_argument("--memory-in", type=Path, default=None, help="memory file (required)")
    p.add_argument("--guard", type=_bool, default=True, help="hard admissibility check on/off")
    p.add_argument("--hard-conf-threshold", type=float, default=0.9, help="rules at or above are hard")
    p.add_argument("--resample-budget", type=int, default=3, help="resamples before falling back to look()")

    p = sub.add_parser("baseline", help="Reflexion-style per-task retries", formatter_class=fmt)
    _add_common(p, rounds=True, memory=False)

    p = sub.add_parser("gen-tasks", help="write a bundled task suite", formatter_class=fmt)
    p.add_argument("suite", help=f"one of: {', '.join(sorted(SUITES))}")
    p.add_argument("out_dir", type=Path, help="output directory")

    p = sub.add_parser("rules", help="inspect or lint a memory file", formatter_class=fmt)
    rsub = p.add_subparsers(dest="rules_command", required=True, parser_class=_Parser)
    q = rsub.add_parser("inspect", help="print rules by confidence", formatter_class=fmt)
    q.add_argument("path", type=Path)
    q.add_argument("--filter", default=None, help="only rules mentioning this predicate or verb")
    q = rsub.add_parser("lint", help="validate a memory file", formatter_class=fmt)
    q.add_argument("path", type=Path)
    return parser


# --------------------------------------------------------------------------
# Config files
# --------------------------------------------------------------------------


def read_config(path: Path) -> list[tuple[str, str]]:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    out = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out.append((key.strip().replace("_", "-"), value.strip()))
    return out


def _config_argv(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Config entries as flags, placed before the real flags so those win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    command, rest = argv[0], argv[1:]
    pre = _Parser(add_help=False)
    pre.add_argument("--config", type=Path)
    ns, _ = pre.parse_known_args(rest)
    sub = parser._subparsers._group_actions[0].choices[command]  # type: ignore[union-attr]
    known = {opt for a in sub._actions for opt in a.option_strings}
    extra = []
    for key, value in read_config(ns.config):
        flag = f"--{key}"
        if flag not in known or flag == "--config":
            raise UsageError(f"{ns.config}: unknown key {key!r} for {command}")
        if flag in ("--verbose",):
            if _bool(value):
                extra.append(flag)
            continue
        extra += [flag, value]
    return [command, *extra, *rest]


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _run_config(ns: argparse.Namespace, mode: str) -> RunConfig:
    if ns.tasks is None:
        raise UsageError("--tasks is required")
    guard = GuardConfig()
    if mode == "infer":
        try:
            guard = GuardConfig(ns.guard, ns.hard_conf_threshold, ns.resample_budget)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return RunConfig(
        mode=mode,
        task_dir=ns.tasks,
        rounds=getattr(ns, "rounds", 1),
        seed=ns.seed,
        guard=guard,
        k=getattr(ns, "k", 8),
        min_conf=getattr(ns, "min_conf", 0.2),
        prune_floor=getattr(ns, "prune_floor", 0.1),
        policy=ns.policy,
        defects=ns.defects,
        reflector=getattr(ns, "reflector", "scripted"),
        memory_in=getattr(ns, "memory_in", None),
        memory_out=getattr(ns, "memory_out", None),
        log_dir=ns.log_dir,
    )


def _emit(reports: list[RoundReport], ns: argparse.Namespace) -> None:
    for rep in reports:
        print(
            f"{rep.method} round {rep.round}: {rep.solved}/{rep.total} solved "
            f"({rep.accuracy:.1f}%), invalid steps {rep.invalid_steps}"
        )
    if ns.report is not None:
        fmt = ns.report_format or ("json" if ns.report.suffix == ".json" else "csv")
        write_reports(reports, fmt, ns.report)
        print(f"report written to {ns.report}")


def rules_inspect(path: Path, pred: str | None = None) -> str:
    mem = MetaPolicyMemory.load(path)
    rows = [
        (h, e) for h, e in mem if pred is None or pred in e.predicates()
    ]
    rows.sort(key=lambda he: (-he[1].confidence, he[0]))
    lines = [f"{'conf':>5}  {'source':<8} {'task':<22} {'rnd':>3}  {'ret':>4} {'fol':>4} {'ok':>4} {'bad':>4}  rule"]
    if not rows:
        lines.append("(empty)")
    for _, e in rows:
        p, s = e.provenance, e.stats
        lines.append(
            f"{e.confidence:>5.2f}  {p.source:<8} {p.task_id:<22} {p.round:>3}  "
            f"{s.retrieved:>4} {s.followed:>4} {s.successes:>4} {s.failures:>4}  {e.text}"
        )
    return "\n".join(lines)


def _dispatch(ns: argparse.Namespace) -> int:
    if ns.command == "gen-tasks":
        n = gen_tasks(ns.suite, ns.out_dir)
        print(f"wrote {n} tasks to {ns.out_dir}")
        return 0
    if ns.command == "rules":
        if ns.rules_command == "inspect":
            print(rules_inspect(ns.path, ns.filter))
        else:
            mem = MetaPolicyMemory.load(ns.path)
            print(f"{ns.path}: ok, {len(mem)} rule(s)")
        return 0
    cfg = _run_config(ns, ns.command)
    cfg.validate()
    if ns.command == "train":
        reports, memory = run_training(cfg)
        _emit(reports, ns)
        print(f"memory: {len(memory)} rule(s) written to {cfg.memory_out}")
    elif ns.command == "infer":
        _emit([run_inference(cfg)], ns)
    else:
        _emit(run_baseline(cfg), ns)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] in ("train", "infer", "baseline"):
            argv = _config_argv(parser, argv)
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(ns, "verbose", False):
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return _dispatch(ns)
    except FormatError as exc:
        print(f"error: {getattr(ns, 'path', '')}: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ConfigError, InvalidTask, RuleLangError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RemoteError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        log.exception("unexpected failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
