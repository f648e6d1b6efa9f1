"""Predicate rule language: terms, literals, rules, parser, printer and matcher.

Concrete syntax, one rule per line::

    WHEN holding(?x) AND dirty(?x) THEN PREFER clean(?x)

A condition is a conjunction of (possibly negated) literals; a directive is
one of AVOID, PREFER or REQUIRE applied to an action pattern.  Negation is
closed-world over the fact set being matched.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

__all__ = [
    "ACTION_ARITY",
    "DIRECTIVE_KINDS",
    "MAX_ARITY",
    "MAX_CONDITION_LITERALS",
    "Binding",
    "Constant",
    "Directive",
    "Fact",
    "GroundDirective",
    "Literal",
    "ParseError",
    "RuleAst",
    "RuleLangError",
    "Term",
    "ValidationError",
    "Variable",
    "binding_key",
    "condition_variables",
    "fact",
    "ground_directive",
    "load_rule_file",
    "match_condition",
    "parse_fact",
    "parse_rule",
    "print_rule",
    "validate_rule",
]

# Action vocabulary of the household world; directive patterns are checked
# against it.
ACTION_ARITY: Mapping[str, int] = {
    "go": 1,
    "open": 1,
    "close": 1,
    "take": 1,
    "put": 2,
    "clean": 1,
    "heat": 1,
    "cool": 1,
    "examine": 1,
    "look": 0,
}

DIRECTIVE_KINDS = ("AVOID", "PREFER", "REQUIRE")
KEYWORDS = frozenset({"WHEN", "THEN", "AND", "NOT", *DIRECTIVE_KINDS})
MAX_ARITY = 3
MAX_CONDITION_LITERALS = 6

_IDENT_RE = re.compile(r"[a-z][a-z0-9_]*\Z")
_VAR_RE = re.compile(r"\?[a-z][a-z0-9_]*\Z")


class RuleLangError(Exception):
    """Base class for rule language errors."""


class ParseError(RuleLangError):
    """Syntax error at a byte offset, with the set of tokens that would have fit."""

    def __init__(self, offset: int, expected: Iterable[str], found: str = ""):
        self.offset = offset
        self.expected = frozenset(expected)
        self.found = found
        exp = ", ".join(sorted(self.expected))
        msg = f"at offset {offset}: expected {exp}"
        if found:
            msg += f", found {found!r}"
        super().__init__(msg)


class ValidationError(RuleLangError):
    """A well-formed rule that breaks a semantic constraint."""

    def __init__(self, message: str, code: str = "invalid"):
        self.code = code
        super().__init__(message)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ValidationError)
            and self.code == other.code
            and str(self) == str(other)
        )

    def __hash__(self) -> int:
        return hash((self.code, str(self)))


@dataclass(frozen=True, order=True)
class Variable:
    name: str  # includes the leading '?'

    def __post_init__(self) -> None:
        if not _VAR_RE.match(self.name):
            raise ValueError(f"bad variable name {self.name!r}")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class Constant:
    symbol: str

    def __post_init__(self) -> None:
        if not _IDENT_RE.match(self.symbol):
            raise ValueError(f"bad constant {self.symbol!r}")

    def __str__(self) -> str:
        return self.symbol


Term = Union[Variable, Constant]

# Variable name (with '?') -> constant symbol.
Binding = dict


@dataclass(frozen=True, order=True)
class Fact:
    """A ground atom such as ``in(apple, fridge)``."""

    predicate: str
    args: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(self.args)})"


def fact(predicate: str, *args: str) -> Fact:
    return Fact(predicate, tuple(args))


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple[Term, ...] = ()
    negated: bool = False

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> list[str]:
        return [t.name for t in self.args if isinstance(t, Variable)]

    def is_ground(self) -> bool:
        return all(isinstance(t, Constant) for t in self.args)

    def substitute(self, binding: Mapping[str, str]) -> Literal:
        args = tuple(
            Constant(binding[t.name]) if isinstance(t, Variable) and t.name in binding else t
            for t in self.args
        )
        return Literal(self.predicate, args, self.negated)

    def to_fact(self) -> Fact:
        if not self.is_ground():
            raise ValueError(f"literal {self} is not ground")
        return Fact(self.predicate, tuple(t.symbol for t in self.args))  # type: ignore[union-attr]

    def __str__(self) -> str:
        body = f"{self.predicate}({', '.join(str(t) for t in self.args)})"
        return f"NOT {body}" if self.negated else body


@dataclass(frozen=True)
class Directive:
    kind: str
    pattern: Literal

    def __str__(self) -> str:
        return f"{self.kind} {self.pattern}"


@dataclass(frozen=True)
class RuleAst:
    condition: tuple[Literal, ...]
    directive: Directive

    def __str__(self) -> str:
        return print_rule(self)


@dataclass(frozen=True, order=True)
class GroundDirective:
    """A directive after substitution: ``kind`` plus a ground action atom."""

    kind: str
    atom: Fact

    def __str__(self) -> str:
        return f"{self.kind} {self.atom}"


# --------------------------------------------------------------------------
# Lexer / parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<var>\?[a-z][a-z0-9_]*)
  | (?P<ident>[a-z][a-z0-9_]*)
  | (?P<kw>[A-Z]+)
  | (?P<lpar>\()
  | (?P<rpar>\))
  | (?P<comma>,)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # var | ident | kw | lpar | rpar | comma | eof
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_off = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(byte_off, {"token"}, text[pos])
        kind = m.lastgroup
        chunk = m.group()
        if kind == "kw" and chunk not in KEYWORDS:
            raise ParseError(byte_off, {"keyword"}, chunk)
        if kind != "ws":
            tokens.append(_Token(kind, chunk, byte_off))
        byte_off += len(chunk.encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("eof", "", byte_off))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def fail(self, expected: Iterable[str]):
        t = self.tok
        raise ParseError(t.offset, expected, t.text or "end of input")

    def keyword(self, *words: str) -> str:
        t = self.tok
        if t.kind == "kw" and t.text in words:
            self.i += 1
            return t.text
        self.fail(words)

    def expect(self, kind: str, label: str) -> _Token:
        t = self.tok
        if t.kind != kind:
            self.fail({label})
        self.i += 1
        return t

    def rule(self) -> RuleAst:
        self.keyword("WHEN")
        condition = [self.predicate()]
        while self.tok.kind == "kw" and self.tok.text == "AND":
            self.i += 1
            condition.append(self.predicate())
        self.keyword("THEN")
        kind = self.keyword(*DIRECTIVE_KINDS)
        pattern = self.atom(negated=False, expected={"action"})
        self.expect("eof", "end of input")
        return RuleAst(tuple(condition), Directive(kind, pattern))

    def predicate(self) -> Literal:
        negated = False
        if self.tok.kind == "kw" and self.tok.text == "NOT":
            self.i += 1
            negated = True
            return self.atom(negated, expected={"predicate"})
        return self.atom(negated, expected={"NOT", "predicate"})

    def atom(self, negated: bool, expected: set[str]) -> Literal:
        if self.tok.kind != "ident":
            self.fail(expected)
        name = self.tok.text
        self.i += 1
        self.expect("lpar", "(")
        args: list[Term] = []
        if self.tok.kind != "rpar":
            args.append(self.term())
            while self.tok.kind == "comma":
                self.i += 1
                args.append(self.term())
        self.expect("rpar", ")")
        return Literal(name, tuple(args), negated)

    def term(self) -> Term:
        t = self.tok
        if t.kind == "var":
            self.i += 1
            return Variable(t.text)
        if t.kind == "ident":
            self.i += 1
            return Constant(t.text)
        self.fail({"variable", "constant"})


def parse_rule(text: str, *, validate: bool = True) -> RuleAst:
    """Parse one rule line.

    Raises ParseError on syntax errors and, unless ``validate`` is false, the
    first ValidationError reported by :func:`validate_rule`.
    """
    if "\n" in text.strip("\n"):
        raise ParseError(text.index("\n"), {"end of line"}, "\n")
    ast = _Parser(text.strip("\n")).rule()
    if validate:
        errors = validate_rule(ast)
        if errors:
            raise errors[0]
    return ast


_FACT_RE = re.compile(r"\s*([a-z][a-z0-9_]*)\s*\(([^()]*)\)\s*\Z")


def parse_fact(text: str) -> Fact:
    """Parse a ground atom like ``in(apple, fridge)`` or ``hand_empty()``."""
    m = _FACT_RE.match(text)
    if m is None:
        raise ValueError(f"not a ground atom: {text!r}")
    raw = m.group(2).strip()
    args = tuple(a.strip() for a in raw.split(",")) if raw else ()
    for a in args:
        if not _IDENT_RE.match(a):
            raise ValueError(f"bad constant {a!r} in {text!r}")
    return Fact(m.group(1), args)


def print_rule(ast: RuleAst) -> str:
    cond = " AND ".join(str(lit) for lit in ast.condition)
    return f"WHEN {cond} THEN {ast.directive}"


def load_rule_file(path: str | Path) -> list[RuleAst]:
    """Read a rule file: one rule per line, ``#`` comments and blank lines skipped."""
    rules = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            rules.append(parse_rule(stripped))
        except RuleLangError as exc:
            exc.lineno = lineno  # type: ignore[attr-defined]
            exc.args = (f"line {lineno}: {exc}",)
            raise
    return rules


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def condition_variables(condition: Sequence[Literal], *, positive_only: bool = False) -> list[str]:
    """Variables in first-occurrence order."""
    seen: dict[str, None] = {}
    for lit in condition:
        if positive_only and lit.negated:
            continue
        for v in lit.variables():
            seen.setdefault(v, None)
    return list(seen)


def validate_rule(ast: RuleAst) -> list[ValidationError]:
    errors: list[ValidationError] = []
    bound = set(condition_variables(ast.condition, positive_only=True))
    for lit in ast.condition:
        if lit.negated:
            for v in lit.variables():
                if v not in bound:
                    errors.append(
                        ValidationError(
                            f"no non-negated literal binds {v} (in {lit})", "unsafe_negation"
                        )
                    )
    for v in ast.directive.pattern.variables():
        if v not in bound:
            errors.append(
                ValidationError(f"{v} in directive is not bound by the condition", "range")
            )
    positives = [lit for lit in ast.condition if not lit.negated]
    if not ast.condition:
        errors.append(ValidationError("condition is empty", "empty_condition"))
    elif not positives:
        errors.append(ValidationError("condition has no non-negated literal", "all_negated"))
    if len(ast.condition) > MAX_CONDITION_LITERALS:
        errors.append(
            ValidationError(
                f"condition has {len(ast.condition)} literals, max {MAX_CONDITION_LITERALS}",
                "too_many_literals",
            )
        )
    if ast.directive.kind not in DIRECTIVE_KINDS:
        errors.append(ValidationError(f"unknown directive {ast.directive.kind}", "directive"))

    arities: dict[str, int] = {}
    for lit in (*ast.condition, ast.directive.pattern):
        if lit.arity > MAX_ARITY:
            errors.append(
                ValidationError(f"{lit.predicate} has arity {lit.arity}, max {MAX_ARITY}", "arity")
            )
        known = arities.setdefault(lit.predicate, lit.arity)
        if known != lit.arity:
            errors.append(
                ValidationError(
                    f"arity clash for {lit.predicate}: {known} vs {lit.arity}", "arity_clash"
                )
            )

    pattern = ast.directive.pattern
    verb_arity = ACTION_ARITY.get(pattern.predicate)
    if verb_arity is None and ast.directive.kind != "REQUIRE":
        errors.append(
            ValidationError(
                f"{ast.directive.kind} needs an action verb, got {pattern.predicate}", "not_action"
            )
        )
    elif verb_arity is not None and verb_arity != pattern.arity:
        errors.append(
            ValidationError(
                f"action {pattern.predicate} takes {verb_arity} argument(s), got {pattern.arity}",
                "action_arity",
            )
        )

    return errors


# --------------------------------------------------------------------------
# Matching
# --------------------------------------------------------------------------


def binding_key(binding: Mapping[str, str], order: Sequence[str]) -> tuple[str, ...]:
    return tuple(binding[v] for v in order)


def _unify(lit: Literal, f: Fact, binding: dict[str, str]) -> dict[str, str] | None:
    if lit.predicate != f.predicate or lit.arity != len(f.args):
        return None
    out = binding
    for term, value in zip(lit.args, f.args):
        if isinstance(term, Constant):
            if term.symbol != value:
                return None
        else:
            have = out.get(term.name)
            if have is None:
                if out is binding:
                    out = dict(binding)
                out[term.name] = value
            elif have != value:
                return None
    return out


def match_condition(condition: Sequence[Literal], facts: Iterable[Fact]) -> list[Binding]:
    """All bindings under which the condition holds against ``facts``.

    Results are sorted by the bound constants, taken in first-occurrence order
    of the variables.
    """
    positives = [lit for lit in condition if not lit.negated]
    negatives = [lit for lit in condition if lit.negated]
    bound = set(condition_variables(positives))
    for lit in negatives:
        for v in lit.variables():
            if v not in bound:
                raise ValidationError(f"no non-negated literal binds {v} (in {lit})", "unsafe_negation")

    fact_set = facts if isinstance(facts, (set, frozenset)) else frozenset(facts)
    by_pred: dict[str, list[Fact]] = {}
    for f in fact_set:
        by_pred.setdefault(f.predicate, []).append(f)

    results: list[dict[str, str]] = []

    def extend(i: int, binding: dict[str, str]) -> None:
        if i == len(positives):
            for lit in negatives:
                if lit.substitute(binding).to_fact() in fact_set:
                    return
            results.append(binding)
            return
        for f in by_pred.get(positives[i].predicate, ()):
            nxt = _unify(positives[i], f, binding)
            if nxt is not None:
                extend(i + 1, nxt)

    extend(0, {})
    order = condition_variables(positives)
    unique = {binding_key(b, order): b for b in results}
    return [unique[k] for k in sorted(unique)]


def ground_directive(directive: Directive, binding: Mapping[str, str]) -> GroundDirective:
    lit = directive.pattern.substitute(binding)
    if not lit.is_ground():
        raise AssertionError(f"unbound variable left in {lit}; validator let an unsafe rule through")
    return GroundDirective(directive.kind, lit.to_fact())


def all_variables(ast: RuleAst) -> list[str]:
    return condition_variables([*ast.condition, ast.directive.pattern])


def rename_variables(ast: RuleAst, mapping: Mapping[str, str]) -> RuleAst:
    def ren(lit: Literal) -> Literal:
        return Literal(
            lit.predicate,
            tuple(Variable(mapping[t.name]) if isinstance(t, Variable) else t for t in lit.args),
            lit.negated,
        )

    return RuleAst(
        tuple(ren(lit) for lit in ast.condition),
        Directive(ast.directive.kind, ren(ast.directive.pattern)),
    )


def _skeleton_key(lit: Literal) -> tuple:
    shape = ", ".join("?" if isinstance(t, Variable) else t.symbol for t in lit.args)
    return (lit.predicate, lit.arity, lit.negated, shape)


def canonical_text(ast: RuleAst) -> str:
    """Canonical print form, identical for alpha-equivalent rules.

    Condition literals are sorted by (predicate, arity, negation, args) and
    variables renamed ?v0, ?v1, ... by first occurrence.  Literals whose sort
    key ties before renaming are tried in every order and the smallest
    resulting string wins, so the result does not depend on input order.
    """
    groups: dict[tuple, list[Literal]] = {}
    for lit in ast.condition:
        groups.setdefault(_skeleton_key(lit), []).append(lit)
    keys = sorted(groups)
    best: str | None = None
    for combo in itertools.product(*(itertools.permutations(groups[k]) for k in keys)):
        ordered = [lit for group in combo for lit in group]
        names = condition_variables([*ordered, ast.directive.pattern])
        mapping = {old: f"?v{i}" for i, old in enumerate(names)}
        text = print_rule(
            rename_variables(RuleAst(tuple(ordered), ast.directive), mapping)
        )
        if best is None or text < best:
            best = text
    assert best is not None
    return best
