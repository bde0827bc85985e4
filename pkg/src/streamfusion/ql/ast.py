"""Immutable AST for construct rules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..terms import Iri, Literal, Term


@dataclass(frozen=True, order=True)
class Var:
    name: str

    def __str__(self):
        return "?" + self.name


@dataclass(frozen=True)
class QuotedPattern:
    subject: "PatternTerm"
    predicate: Union[Iri, Var]
    object: "PatternTerm"


PatternTerm = Union[Term, Var, QuotedPattern]


@dataclass(frozen=True)
class TriplePattern:
    """``s p o`` or, when ``quoted`` is set, the occurrence ``<<s p o>>``.

    ``timestamp`` is the variable of a ``@ ?T`` annotation: it binds the
    timestamp of the matched fact.
    """
    subject: PatternTerm
    predicate: Union[Iri, Var]
    object: PatternTerm
    timestamp: Optional[Var] = None
    quoted: bool = False


@dataclass(frozen=True)
class Now:
    def __str__(self):
        return "Now"


@dataclass(frozen=True)
class Range:
    ticks: int

    def __post_init__(self):
        if self.ticks < 1:
            raise ValueError("window range must be at least one tick")

    def __str__(self):
        return f"Range({self.ticks})"


WindowSpec = Union[Now, Range]
NOW = Now()


# filter expressions

@dataclass(frozen=True)
class Const:
    value: Literal


@dataclass(frozen=True)
class TermConst:
    value: Term


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class BinOp:
    op: str  # && < > <= >= = != + -
    left: "Expr"
    right: "Expr"


Expr = Union[Var, Const, TermConst, Call, BinOp]

COMPARISONS = ("<", ">", "<=", ">=", "=", "!=")
ARITHMETIC = ("+", "-")
BUILTINS = {"iou": 2}


@dataclass(frozen=True)
class StreamBlock:
    stream: Iri
    window: WindowSpec = NOW
    timestamp: Optional[Var] = None
    patterns: tuple = ()
    filters: tuple = ()


@dataclass(frozen=True)
class BodySpec:
    positive_blocks: tuple = ()
    naf_blocks: tuple = ()
    filters: tuple = ()
    static_patterns: tuple = ()

    @property
    def blocks(self):
        return self.positive_blocks + self.naf_blocks


HARD = "hard"
SOFT = "soft"


@dataclass(frozen=True)
class Rule:
    id: Iri
    kind: str
    head: tuple
    body: BodySpec
    prefixes: tuple = field(default=(), compare=False)

    @property
    def is_soft(self):
        return self.kind == SOFT


def expr_vars(expr) -> set:
    if isinstance(expr, Var):
        return {expr}
    if isinstance(expr, BinOp):
        return expr_vars(expr.left) | expr_vars(expr.right)
    if isinstance(expr, Call):
        out = set()
        for a in expr.args:
            out |= expr_vars(a)
        return out
    return set()


def conjuncts(expr) -> list:
    if isinstance(expr, BinOp) and expr.op == "&&":
        return conjuncts(expr.left) + conjuncts(expr.right)
    return [expr]


def conjoin(exprs):
    exprs = list(exprs)
    if not exprs:
        return None
    out = exprs[0]
    for e in exprs[1:]:
        out = BinOp("&&", out, e)
    return out


def term_vars(t) -> set:
    if isinstance(t, Var):
        return {t}
    if isinstance(t, QuotedPattern):
        return term_vars(t.subject) | term_vars(t.predicate) | term_vars(t.object)
    return set()


def pattern_vars(p: TriplePattern) -> set:
    out = term_vars(p.subject) | term_vars(p.predicate) | term_vars(p.object)
    if p.timestamp is not None:
        out.add(p.timestamp)
    return out


def block_vars(block: StreamBlock) -> set:
    """Variables bound by the block's patterns (filters excluded)."""
    out = set()
    for p in block.patterns:
        out |= pattern_vars(p)
    if block.timestamp is not None:
        out.add(block.timestamp)
    return out


def pattern_constant_count(p: TriplePattern) -> int:
    def count(t):
        if isinstance(t, Var):
            return 0
        if isinstance(t, QuotedPattern):
            return count(t.subject) + count(t.predicate) + count(t.object)
        return 1
    return count(p.subject) + count(p.predicate) + count(p.object)
