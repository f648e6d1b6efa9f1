"""Meta-policy reflexion: rule memory distilled from failed episodes, applied
as soft guidance and as a hard admissibility check over a frozen policy."""

from .admissibility import GuardConfig, Verdict, check, guard_step
from .harness import RoundReport, RunConfig, run_baseline, run_inference, run_training, write_reports
from .memory import MetaPolicyMemory, Provenance, canonical_hash
from .policy import DefectProfile, PolicyContext, ScriptedPolicy
from .reflection import Trajectory, meta_policy_update, parse_reflection_reply, reflect
from .rulelang import parse_rule, print_rule, validate_rule
from .textworld import Action, TaskSpec, TextWorld

__version__ = "0.1.0"

__all__ = [
    "Action", "DefectProfile", "GuardConfig", "MetaPolicyMemory", "PolicyContext",
    "Provenance", "RoundReport", "RunConfig", "ScriptedPolicy", "TaskSpec", "TextWorld",
    "Trajectory", "Verdict", "canonical_hash", "check", "guard_step", "meta_policy_update",
    "parse_reflection_reply", "parse_rule", "print_rule", "reflect", "run_baseline",
    "run_inference", "run_training", "validate_rule", "write_reports",
]
