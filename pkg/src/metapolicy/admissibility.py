"""Hard admissibility check: validate a proposed action against C(s).

C(s) is the environment's admissible set narrowed by high-confidence rules:
AVOID rules at or above ``hard_conf_threshold`` forbid their grounded action,
REQUIRE rules at or above it restrict the choice to their grounded actions
(only when at least one of those is admissible).  Lower-confidence rules stay
soft and never block anything.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .memory import MetaPolicyMemory
from .policy import ActionParseError, Policy, PolicyContext, advice_note
from .textworld import LOOK, Action, Observation

log = logging.getLogger(__name__)

REASONS = ("env_inadmissible", "avoid_rule", "require_rule", "unparseable")


@dataclass(frozen=True)
class Verdict:
    """``Admissible`` when ``reason_kind`` is None, otherwise a violation."""

    reason_kind: str | None = None
    detail: str = ""
    rule_hash: str | None = None

    def __post_init__(self) -> None:
        if self.reason_kind is not None:
            if self.reason_kind not in REASONS:
                raise ValueError(f"unknown violation kind {self.reason_kind!r}")
            if not self.detail:
                raise ValueError("violations need a human-readable detail")

    @property
    def admissible(self) -> bool:
        return self.reason_kind is None

    def label(self) -> str:
        return "admissible" if self.admissible else self.reason_kind

    def to_record(self) -> dict:
        return {"verdict": self.label(), "detail": self.detail, "rule_hash": self.rule_hash}


ADMISSIBLE = Verdict()


@dataclass(frozen=True)
class GuardConfig:
    enabled: bool = True
    hard_conf_threshold: float = 0.9
    resample_budget: int = 3
    fallback: Action = field(default=LOOK)

    def __post_init__(self) -> None:
        if self.resample_budget < 0:
            raise ValueError("resample_budget must be >= 0")
        if self.fallback != LOOK:
            raise ValueError("fallback must be look(), the one always-admissible action")
        if not 0.0 <= self.hard_conf_threshold <= 1.0:
            raise ValueError("hard_conf_threshold must be in [0, 1]")


def check(action: Action, obs: Observation, memory: MetaPolicyMemory | None, cfg: GuardConfig) -> Verdict:
    if action not in obs.admissible:
        return Verdict(
            "env_inadmissible",
            f"Rejected {action}: not admissible in the current state. {advice_note('avoid', action)}",
        )
    if memory is None or not len(memory):
        return ADMISSIBLE
    hard = memory.matching(obs.facts, cfg.hard_conf_threshold)
    target = action.to_fact()
    for rr in hard:
        if rr.directive.kind == "AVOID" and rr.directive.atom == target:
            return Verdict(
                "avoid_rule",
                f"Rejected {action}: forbidden by rule {rr.hash[:8]} "
                f"({rr.confidence:.2f}). {advice_note('avoid', action)}",
                rr.hash,
            )
    admissible_facts = {a.to_fact(): a for a in obs.admissible}
    for rr in hard:
        if rr.directive.kind != "REQUIRE":
            continue
        required = admissible_facts.get(rr.directive.atom)
        if required is not None and required != action:
            return Verdict(
                "require_rule",
                f"Rejected {action}: rule {rr.hash[:8]} ({rr.confidence:.2f}) requires {required}. "
                f"{advice_note('require', required)}",
                rr.hash,
            )
    return ADMISSIBLE


def guard_step(
    ctx: PolicyContext, memory: MetaPolicyMemory | None, cfg: GuardConfig, policy: Policy
) -> tuple[Action, int, Verdict]:
    """Decide, validate, and resample on violation; fall back after the budget.

    Returns (action, number of policy decisions made, verdict of the last one).
    """
    if not cfg.enabled:
        try:
            return policy.decide(ctx), 1, ADMISSIBLE
        except ActionParseError:
            return cfg.fallback, 1, ADMISSIBLE
    verdict = ADMISSIBLE
    attempts = 0
    for _ in range(cfg.resample_budget + 1):
        attempts += 1
        try:
            action = policy.decide(ctx)
        except ActionParseError as exc:
            verdict = Verdict("unparseable", f"Reply was not a single action ({exc}).")
        else:
            verdict = check(action, ctx.observation, memory, cfg)
            if verdict.admissible:
                return action, attempts, verdict
        log.debug("violation on attempt %d: %s", attempts, verdict.detail)
        ctx = ctx.with_note(verdict.detail)
    return cfg.fallback, attempts, verdict
