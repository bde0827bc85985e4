"""Selection of a maximum-utility consistent set of association hypotheses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .assignment import max_weight_matching
from .terms import Iri, TimestampedFact, compact, format_decimal, term_key
from .turtle import serialize_fact

CHOSEN, REJECTED = "chosen", "rejected"
CONFLICT, DOMINATED = "conflict", "dominated"
TIE_TOL = 1e-9


@dataclass(frozen=True)
class Hypothesis:
    """A soft-rule head fact together with the evidence that produced it.

    ``detection`` and ``target`` are set for association hypotheses; when
    either is None the hypothesis is not subject to the one-to-one
    constraints.
    """
    rule_id: Iri
    head_fact: TimestampedFact
    detection: object
    target: object
    confidence: float
    tick: int
    evidence: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0) or math.isnan(self.confidence):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.head_fact.timestamp != self.tick:
            raise ValueError("head fact timestamp differs from hypothesis tick")

    @property
    def is_association(self) -> bool:
        return self.detection is not None and self.target is not None

    def sort_key(self):
        return (
            term_key(self.target) if self.target is not None else (),
            term_key(self.detection) if self.detection is not None else (),
            self.rule_id.value,
            term_key(self.head_fact.subject), term_key(self.head_fact.predicate), term_key(self.head_fact.object),
            -self.confidence,
        )


class RuleWeights:
    """Non-negative weight per soft rule; unknown rules weigh ``default``."""

    def __init__(self, weights: Optional[dict] = None, default: float = 1.0):
        self.default = default
        self.weights: dict = {}
        for rule, w in (weights or {}).items():
            self[rule] = w

    def __getitem__(self, rule: Iri) -> float:
        return self.weights.get(rule, self.default)

    def __setitem__(self, rule: Iri, w: float):
        w = float(w)
        if not w >= 0 or not math.isfinite(w):
            raise ValueError(f"weight for {rule.value} must be finite and >= 0, got {w}")
        self.weights[rule] = w

    def __contains__(self, rule):
        return rule in self.weights

    def __eq__(self, other):
        return isinstance(other, RuleWeights) and self.weights == other.weights and self.default == other.default

    def __repr__(self):
        inner = ", ".join(f"{compact(r)}={w:g}" for r, w in sorted(self.weights.items(), key=lambda kv: kv[0].value))
        return f"RuleWeights({inner})"

    def ensure(self, rules: Iterable[Iri]) -> "RuleWeights":
        for r in rules:
            self.weights.setdefault(r, self.default)
        return self

    def copy(self) -> "RuleWeights":
        return RuleWeights(dict(self.weights), self.default)

    def scaled(self, factor: float) -> "RuleWeights":
        return RuleWeights({r: w * factor for r, w in self.weights.items()}, self.default * factor)

    def utility(self, h: Hypothesis) -> float:
        return self[h.rule_id] * h.confidence

    def dumps(self) -> str:
        return "".join(f"{r.value}\t{format_decimal(w)}\n" for r, w in sorted(self.weights.items(), key=lambda kv: kv[0].value))

    @classmethod
    def loads(cls, text: str, default: float = 1.0) -> "RuleWeights":
        out = cls(default=default)
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"line {n}: expected 'rule<TAB>weight'")
            rule = parts[0].strip("<>")
            out[Iri(rule)] = float(parts[1])
        return out

    @classmethod
    def load(cls, path, default: float = 1.0) -> "RuleWeights":
        return cls.loads(Path(path).read_text(), default)

    def save(self, path):
        Path(path).write_text(self.dumps())


@dataclass
class WorldSelection:
    chosen: list
    score: float
    rejected: list
    reasons: dict = field(default_factory=dict)  # rejected Hypothesis -> (reason, winner or None)
    weights: Optional[RuleWeights] = None

    @property
    def chosen_facts(self) -> set:
        return {h.head_fact for h in self.chosen}


def _components(edges: list) -> list[list]:
    """Group association hypotheses into connected components over shared boxes/targets."""
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for h in edges:
        a, b = find(("d", h.detection)), find(("t", h.target))
        if a != b:
            parent[a] = b
    groups: dict = {}
    for h in edges:
        groups.setdefault(find(("d", h.detection)), []).append(h)
    return list(groups.values())


def _matrix(edges: list, utility):
    dets = sorted({h.detection for h in edges}, key=term_key)
    tgts = sorted({h.target for h in edges}, key=term_key)
    di = {d: i for i, d in enumerate(dets)}
    ti = {t: j for j, t in enumerate(tgts)}
    w = np.zeros((len(dets), len(tgts)))
    for h in edges:
        w[di[h.detection], ti[h.target]] = utility(h)
    return w, di, ti


def _optimum(edges: list, utility) -> float:
    if not edges:
        return 0.0
    w, _, _ = _matrix(edges, utility)
    return float(sum(w[i, j] for i, j in max_weight_matching(w)))


def _solve_component(edges: list, utility) -> list:
    """Optimal matching of one component, ties resolved by (target, detection) order."""
    if len(edges) == 1:
        return list(edges)
    best = _optimum(edges, utility)
    tol = TIE_TOL * max(1.0, best)
    chosen = []
    remaining = sorted(edges, key=Hypothesis.sort_key)
    gained = 0.0
    while remaining:
        h = remaining.pop(0)
        rest = [e for e in remaining if e.detection != h.detection and e.target != h.target]
        if gained + utility(h) + _optimum(rest, utility) >= best - tol:
            chosen.append(h)
            gained += utility(h)
            remaining = rest
    return chosen


def select_world(hypotheses: Iterable[Hypothesis], weights: Optional[RuleWeights] = None) -> WorldSelection:
    """Maximum total weight x confidence subject to one hypothesis per detection and per target.

    Hypotheses that are not associations are always chosen. When several
    rules propose the same (detection, target) pair only the highest-utility
    one competes; the others are rejected as dominated. Zero-utility
    hypotheses are never chosen.
    """
    weights = weights if weights is not None else RuleWeights()
    hyps = sorted(set(hypotheses), key=Hypothesis.sort_key)
    if len({h.tick for h in hyps}) > 1:
        raise ValueError("hypotheses span more than one tick")
    utility = weights.utility
    chosen = [h for h in hyps if not h.is_association]
    reasons: dict = {}
    best_pair: dict = {}
    for h in hyps:
        if not h.is_association:
            continue
        key = (h.detection, h.target)
        cur = best_pair.get(key)
        if cur is None or utility(h) > utility(cur):
            if cur is not None:
                reasons[cur] = (DOMINATED, h)
            best_pair[key] = h
        else:
            reasons[h] = (DOMINATED, cur)
    edges = []
    for h in best_pair.values():
        if utility(h) > 0:
            edges.append(h)
        else:
            reasons[h] = (DOMINATED, None)
    for comp in _components(edges):
        chosen.extend(_solve_component(comp, utility))
    chosen_set = set(chosen)
    for h in edges:
        if h in chosen_set:
            continue
        winner = next((c for c in sorted(chosen_set, key=Hypothesis.sort_key)
                       if c.is_association and (c.detection == h.detection or c.target == h.target)), None)
        reasons[h] = (CONFLICT, winner)
    chosen.sort(key=Hypothesis.sort_key)
    rejected = sorted((h for h in hyps if h not in chosen_set), key=Hypothesis.sort_key)
    score = math.fsum(utility(h) for h in chosen)
    return WorldSelection(chosen, score, rejected, reasons, weights)


@dataclass(frozen=True)
class ExplanationRecord:
    status: str
    rule_id: Iri
    head_fact: TimestampedFact
    evidence: tuple
    confidence: float
    weight: float
    contribution: float
    reason: str = ""
    winner: Optional[Hypothesis] = None

    def to_tsv(self) -> str:
        winner = serialize_fact(self.winner.head_fact) if self.winner is not None else "-"
        fields = [
            str(self.head_fact.timestamp), self.status, compact(self.rule_id), serialize_fact(self.head_fact),
            format_decimal(self.confidence), format_decimal(self.weight), format_decimal(self.contribution),
            self.reason or "-", winner, " && ".join(self.evidence) or "-",
        ]
        return "\t".join(f.replace("\t", " ") for f in fields)


def explain(selection: WorldSelection) -> list[ExplanationRecord]:
    weights = selection.weights or RuleWeights()
    out = []
    for h in selection.chosen:
        w = weights[h.rule_id]
        out.append(ExplanationRecord(CHOSEN, h.rule_id, h.head_fact, h.evidence, h.confidence, w, w * h.confidence))
    for h in selection.rejected:
        w = weights[h.rule_id]
        reason, winner = selection.reasons.get(h, (DOMINATED, None))
        out.append(ExplanationRecord(REJECTED, h.rule_id, h.head_fact, h.evidence, h.confidence, w, 0.0, reason, winner))
    return out


def explanation_lines(records: Iterable[ExplanationRecord]) -> str:
    return "".join(r.to_tsv() + "\n" for r in records)
