"""Run loops: training with reflection, frozen-memory inference, and the
Reflexion-style baseline, plus report writing.

Training never consults the admissibility guard; inference always routes
decisions through it (a disabled guard passes the first decision through).
Step logs record which path was taken so the split can be audited.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .admissibility import GuardConfig, guard_step
from .memory import DEFAULT_K, DEFAULT_MIN_CONF, DEFAULT_PRUNE_FLOOR, MetaPolicyMemory, RetrievedRule
from .policy import (
    ActionParseError,
    DefectProfile,
    Policy,
    PolicyContext,
    RemotePolicy,
    ScriptedPolicy,
)
from .reflection import (
    Reflector,
    RemoteReflector,
    ScriptedReflector,
    Step,
    Trajectory,
    baseline_notes,
    meta_policy_update,
)
from .remote import RemoteClient
from .textworld import LAST_ACTION_INVALID, LOOK, Action, Observation, TaskSpec, TextWorld, load_task_dir

log = logging.getLogger(__name__)

MODES = ("train", "infer", "baseline")
REPORT_SCHEMA_ID = "mpr-report/1"
CSV_COLUMNS = (
    "method", "round", "solved", "total", "accuracy",
    "steps_total", "attempts_total", "invalid_steps", "memory_size",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "train"
    task_dir: Path | None = None
    rounds: int = 5
    seed: int = 0
    guard: GuardConfig = field(default_factory=GuardConfig)
    k: int = DEFAULT_K
    min_conf: float = DEFAULT_MIN_CONF
    prune_floor: float = DEFAULT_PRUNE_FLOOR
    policy: str = "scripted"
    defects: DefectProfile = field(default_factory=DefectProfile.all)
    reflector: str = "scripted"
    memory_in: Path | None = None
    memory_out: Path | None = None
    log_dir: Path | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.k < 0 or not 0.0 <= self.min_conf <= 1.0:
            raise ConfigError("need k >= 0 and min_conf in [0, 1]")
        if self.policy not in ("scripted", "remote") or self.reflector not in ("scripted", "remote"):
            raise ConfigError("policy and reflector must be 'scripted' or 'remote'")
        if self.mode == "infer":
            if self.memory_in is None:
                raise ConfigError("infer mode needs --memory-in")
            if not Path(self.memory_in).is_file():
                raise ConfigError(f"memory file not found: {self.memory_in}")
        if self.mode == "train" and self.memory_out is None:
            raise ConfigError("train mode needs --memory-out")
        if self.memory_in is not None and self.mode != "infer" and not Path(self.memory_in).is_file():
            raise ConfigError(f"memory file not found: {self.memory_in}")


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    success: bool
    steps: int
    attempts_total: int
    invalid_steps: int


@dataclass
class RoundReport:
    method: str
    round: int
    per_task: list[TaskResult]
    memory_size: int = 0

    @property
    def total(self) -> int:
        return len(self.per_task)

    @property
    def solved(self) -> int:
        return sum(r.success for r in self.per_task)

    @property
    def accuracy(self) -> float:
        return 100.0 * self.solved / self.total if self.total else 0.0

    @property
    def invalid_steps(self) -> int:
        return sum(r.invalid_steps for r in self.per_task)

    def row(self) -> dict:
        return {
            "method": self.method,
            "round": self.round,
            "solved": self.solved,
            "total": self.total,
            "accuracy": round(self.accuracy, 2),
            "steps_total": sum(r.steps for r in self.per_task),
            "attempts_total": sum(r.attempts_total for r in self.per_task),
            "invalid_steps": self.invalid_steps,
            "memory_size": self.memory_size,
        }

    def to_json(self) -> dict:
        return {**self.row(), "per_task": [dataclasses.asdict(r) for r in self.per_task]}


def rounds_to_full(reports: Sequence[RoundReport]) -> int | None:
    """First round from which accuracy stays at 100 (None if never)."""
    first = None
    for rep in reports:
        if rep.solved == rep.total:
            first = rep.round if first is None else first
        else:
            first = None
    return first


# --------------------------------------------------------------------------
# Episodes
# --------------------------------------------------------------------------


def episode_seed(seed: int, task_id: str) -> int:
    # Stable across rounds and processes (unlike hash()).
    return zlib.crc32(f"{seed}:{task_id}".encode())


def _followed(
    retrieved: Sequence[RetrievedRule],
    action: Action,
    ctx: PolicyContext,
    policy: Policy,
) -> tuple[str, ...]:
    """Hashes of retrieved rules the executed action complied with.

    PREFER/REQUIRE: the action is the grounded directive.  AVOID: the policy
    would have taken the avoided action without memory and did not.
    """
    executed = action.to_fact()
    unguided: Action | None = None
    out: dict[str, None] = {}
    for rr in retrieved:
        atom = rr.directive.atom
        if rr.directive.kind in ("PREFER", "REQUIRE"):
            if executed == atom:
                out[rr.hash] = None
            continue
        if executed == atom:
            continue
        if isinstance(policy, ScriptedPolicy):
            if unguided is None:
                unguided = policy.decide(dataclasses.replace(ctx, retrieved=()))
            if unguided.to_fact() == atom:
                out[rr.hash] = None
        elif any(a.to_fact() == atom for a in ctx.observation.admissible):
            out[rr.hash] = None
    return tuple(out)


@dataclass
class EpisodeOptions:
    guard: GuardConfig | None  # None: the guard is not part of this run mode
    k: int = DEFAULT_K
    min_conf: float = DEFAULT_MIN_CONF
    count_retrievals: bool = True
    notes: tuple[str, ...] = ()


def run_episode(
    task: TaskSpec,
    policy: Policy,
    memory: MetaPolicyMemory | None,
    opts: EpisodeOptions,
    *,
    seed: int = 0,
    round_no: int = 1,
) -> Trajectory:
    env = TextWorld()
    obs: Observation = env.reset(task, episode_seed(seed, task.task_id))
    traj = Trajectory(task.task_id, task.goal, round=round_no, success=bool(obs.reward))
    while not obs.done:
        retrieved = (
            memory.retrieve(obs.facts, opts.k, opts.min_conf, count=opts.count_retrievals)
            if memory is not None
            else []
        )
        ctx = PolicyContext(task.goal, obs, tuple(retrieved), opts.notes)
        if opts.guard is None:
            try:
                action = policy.decide(ctx)
            except ActionParseError:
                action = LOOK
            attempts, verdict = 0, None
        else:
            action, attempts, v = guard_step(ctx, memory, opts.guard, policy)
            verdict = v.label()
        followed = _followed(retrieved, action, ctx, policy)
        nxt = env.step(action)
        traj.steps.append(
            Step(
                facts=obs.facts,
                retrieved=tuple(dict.fromkeys(rr.hash for rr in retrieved)),
                action=action,
                verdict=verdict,
                reward=nxt.reward,
                done=nxt.done,
                invalid=LAST_ACTION_INVALID in nxt.facts,
                attempts=attempts,
                followed=followed,
            )
        )
        obs = nxt
    traj.success = obs.reward == 1
    return traj


def _result(traj: Trajectory) -> TaskResult:
    return TaskResult(
        traj.task_id,
        traj.success,
        len(traj.steps),
        sum(s.attempts for s in traj.steps),
        traj.invalid_steps,
    )


# --------------------------------------------------------------------------
# Logs and snapshots
# --------------------------------------------------------------------------


def trajectory_lines(traj: Trajectory, guard: str) -> list[str]:
    lines = []
    for i, s in enumerate(traj.steps):
        rec = {"task_id": traj.task_id, "round": traj.round, "guard": guard, **s.to_record(i)}
        lines.append(json.dumps(rec, sort_keys=True))
    return lines


class _LogSink:
    def __init__(self, log_dir: Path | None, method: str):
        self.dir = Path(log_dir) if log_dir else None
        self.method = method
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write_round(self, round_no: int, lines: list[str]) -> None:
        if self.dir:
            path = self.dir / f"{self.method}_round{round_no:02d}.jsonl"
            path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def snapshot_path(memory_out: Path, round_no: int) -> Path:
    memory_out = Path(memory_out)
    return memory_out.with_name(f"{memory_out.stem}.round{round_no:02d}{memory_out.suffix or '.mpm'}")


# --------------------------------------------------------------------------
# Run modes
# --------------------------------------------------------------------------


def make_policy(cfg: RunConfig) -> Policy:
    if cfg.policy == "remote":
        return RemotePolicy(RemoteClient.from_env())
    return ScriptedPolicy(cfg.defects)


def make_reflector(cfg: RunConfig) -> Reflector:
    if cfg.reflector == "remote":
        return RemoteReflector(RemoteClient.from_env())
    return ScriptedReflector()


def _tasks(cfg: RunConfig, tasks: Sequence[TaskSpec] | None) -> list[TaskSpec]:
    if tasks is None:
        if cfg.task_dir is None:
            raise ConfigError("no tasks: set task_dir")
        tasks = load_task_dir(cfg.task_dir)
    if not tasks:
        raise ConfigError("task set is empty")
    return sorted(tasks, key=lambda t: t.task_id)


def run_training(
    cfg: RunConfig,
    tasks: Sequence[TaskSpec] | None = None,
    *,
    policy: Policy | None = None,
    reflector: Reflector | None = None,
) -> tuple[list[RoundReport], MetaPolicyMemory]:
    """Rounds of episodes; failures are reflected into memory, successes
    reinforce the rules they followed.  The guard is not used."""
    cfg.validate()
    tasks = _tasks(cfg, tasks)
    policy = policy or make_policy(cfg)
    reflector = reflector or make_reflector(cfg)
    memory = MetaPolicyMemory.load(cfg.memory_in) if cfg.memory_in else MetaPolicyMemory()
    opts = EpisodeOptions(guard=None, k=cfg.k, min_conf=cfg.min_conf)
    sink = _LogSink(cfg.log_dir, "train")
    reports = []
    for r in range(1, cfg.rounds + 1):
        results, lines = [], []
        for task in tasks:
            traj = run_episode(task, policy, memory, opts, seed=cfg.seed, round_no=r)
            if traj.success:
                memory.reinforce(traj.feedback(), episode_success=True)
            else:
                meta_policy_update(traj, memory, reflector)
            results.append(_result(traj))
            lines += trajectory_lines(traj, "not_invoked")
        pruned = memory.prune(cfg.prune_floor)
        if pruned:
            log.info("round %d: pruned %d rule(s)", r, pruned)
        rep = RoundReport("mpr", r, results, len(memory))
        log.info("train round %d: %d/%d (%.1f%%)", r, rep.solved, rep.total, rep.accuracy)
        reports.append(rep)
        sink.write_round(r, lines)
        if cfg.memory_out:
            memory.save(snapshot_path(cfg.memory_out, r))
    if cfg.memory_out:
        memory.save(cfg.memory_out)
    return reports, memory


def run_inference(
    cfg: RunConfig,
    tasks: Sequence[TaskSpec] | None = None,
    *,
    policy: Policy | None = None,
) -> RoundReport:
    """One pass with frozen memory; every decision goes through the guard."""
    cfg.validate()
    tasks = _tasks(cfg, tasks)
    policy = policy or make_policy(cfg)
    memory = MetaPolicyMemory.load(cfg.memory_in)
    before = memory.dumps()
    opts = EpisodeOptions(guard=cfg.guard, k=cfg.k, min_conf=cfg.min_conf, count_retrievals=False)
    status = "enabled" if cfg.guard.enabled else "disabled"
    results, lines = [], []
    for task in tasks:
        traj = run_episode(task, policy, memory, opts, seed=cfg.seed)
        results.append(_result(traj))
        lines += trajectory_lines(traj, status)
    if memory.dumps() != before:  # frozen-memory contract
        raise AssertionError("memory changed during inference")
    method = "mpr+hac" if cfg.guard.enabled else "mpr"
    rep = RoundReport(method, 1, results, len(memory))
    _LogSink(cfg.log_dir, "infer").write_round(1, lines)
    log.info("inference: %d/%d (%.1f%%)", rep.solved, rep.total, rep.accuracy)
    return rep


def run_baseline(
    cfg: RunConfig,
    tasks: Sequence[TaskSpec] | None = None,
    *,
    policy: Policy | None = None,
) -> list[RoundReport]:
    """Per-task retry with text reflections; no rule memory, no guard, no sharing."""
    cfg.validate()
    tasks = _tasks(cfg, tasks)
    policy = policy or make_policy(cfg)
    buffers: dict[str, list[str]] = {t.task_id: [] for t in tasks}
    sink = _LogSink(cfg.log_dir, "baseline")
    reports = []
    for r in range(1, cfg.rounds + 1):
        results, lines = [], []
        for task in tasks:
            opts = EpisodeOptions(guard=None, notes=tuple(buffers[task.task_id]))
            traj = run_episode(task, policy, None, opts, seed=cfg.seed, round_no=r)
            if not traj.success:
                buf = buffers[task.task_id]
                buf += [n for n in baseline_notes(traj) if n not in buf]
            results.append(_result(traj))
            lines += trajectory_lines(traj, "not_invoked")
        rep = RoundReport("reflexion", r, results)
        log.info("baseline round %d: %d/%d (%.1f%%)", r, rep.solved, rep.total, rep.accuracy)
        reports.append(rep)
        sink.write_round(r, lines)
    return reports


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "reports"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "reports": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [*CSV_COLUMNS, "per_task"],
                "properties": {
                    "method": {"type": "string"},
                    "round": {"type": "integer", "minimum": 1},
                    "solved": {"type": "integer", "minimum": 0},
                    "total": {"type": "integer", "minimum": 0},
                    "accuracy": {"type": "number", "minimum": 0, "maximum": 100},
                    "per_task": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["task_id", "success", "steps", "attempts_total", "invalid_steps"],
                            "properties": {
                                "task_id": {"type": "string"},
                                "success": {"type": "boolean"},
                                "steps": {"type": "integer", "minimum": 0},
                                "attempts_total": {"type": "integer", "minimum": 0},
                                "invalid_steps": {"type": "integer", "minimum": 0},
                            },
                        },
                    },
                },
            },
        },
    },
}


def render_reports(reports: Sequence[RoundReport], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            row = rep.row()
            row["accuracy"] = f"{rep.accuracy:.2f}"
            w.writerow(row)
        return buf.getvalue()
    if fmt == "json":
        doc = {"schema": REPORT_SCHEMA_ID, "reports": [rep.to_json() for rep in reports]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown report format {fmt!r} (csv or json)")


def write_reports(reports: Sequence[RoundReport], fmt: str, path: str | Path) -> None:
    Path(path).write_text(render_reports(reports, fmt), encoding="utf-8")
