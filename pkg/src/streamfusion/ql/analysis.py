from __future__ import annotations

from dataclasses import dataclass, field

from ..terms import Iri
from .ast import (
    QuotedPattern, Rule, TriplePattern, block_vars, expr_vars, pattern_vars, term_vars,
)


@dataclass
class RuleReport:
    rule_id: Iri
    variables: dict = field(default_factory=dict)  # Var -> sorted list of occurrence sites
    streams: frozenset = frozenset()
    predicates: frozenset = frozenset()
    unsafe: tuple = ()

    @property
    def safe(self) -> bool:
        return not self.unsafe

    @property
    def verdict(self) -> str:
        if self.safe:
            return "safe"
        return "unsafe(" + ", ".join(str(v) for v in self.unsafe) + ")"


def _predicates(t, out):
    if isinstance(t, QuotedPattern):
        if isinstance(t.predicate, Iri):
            out.add(t.predicate)
        _predicates(t.subject, out)
        _predicates(t.object, out)
    elif hasattr(t, "predicate") and hasattr(t, "subject"):
        # constant QuotedTriple
        out.add(t.predicate)
        _predicates(t.subject, out)
        _predicates(t.object, out)


def pattern_predicates(p: TriplePattern) -> set:
    out = set()
    if isinstance(p.predicate, Iri):
        out.add(p.predicate)
    _predicates(p.subject, out)
    _predicates(p.object, out)
    return out


def positive_vars(rule: Rule) -> set:
    out = set()
    for b in rule.body.positive_blocks:
        out |= block_vars(b)
    for p in rule.body.static_patterns:
        out |= pattern_vars(p)
    return out


def head_vars(rule: Rule) -> set:
    out = set()
    for p in rule.head:
        out |= pattern_vars(p)
    return out


def analyze_rule(rule: Rule) -> RuleReport:
    """Variable table, stream dependencies, constant predicates and safety."""
    sites: dict = {}

    def note(vars_, site):
        for v in vars_:
            sites.setdefault(v, set()).add(site)

    for p in rule.head:
        note(pattern_vars(p), "head")
    streams = set()
    preds = set()
    for p in rule.head:
        preds |= pattern_predicates(p)
    body = rule.body
    for label, blocks in (("block", body.positive_blocks), ("naf", body.naf_blocks)):
        for i, b in enumerate(blocks):
            streams.add(b.stream)
            note(block_vars(b), f"{label}{i}")
            for p in b.patterns:
                preds |= pattern_predicates(p)
            for f in b.filters:
                note(expr_vars(f), f"{label}{i}-filter")
    for p in body.static_patterns:
        note(pattern_vars(p), "static")
        preds |= pattern_predicates(p)
    for f in body.filters:
        note(expr_vars(f), "filter")
    unsafe = sorted(head_vars(rule) - positive_vars(rule))
    return RuleReport(
        rule.id,
        {v: sorted(s) for v, s in sorted(sites.items())},
        frozenset(streams),
        frozenset(preds),
        tuple(unsafe),
    )


__all__ = ["RuleReport", "analyze_rule", "pattern_predicates", "positive_vars", "head_vars", "term_vars"]
