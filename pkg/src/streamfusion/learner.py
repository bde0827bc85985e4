"""Structured-perceptron learning of soft-rule weights from labeled ticks."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .fusion import Hypothesis, RuleWeights, select_world
from .lexer import TokenStream, tokenize
from .terms import PRELUDE_PREFIXES, TimestampedFact, compact, format_decimal, format_term
from .turtle import parse_fact_document, read_iri, serialize_fact

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledTick:
    tick: int
    hypotheses: tuple
    gold: frozenset

    def infeasible(self) -> list[TimestampedFact]:
        """Gold facts no hypothesis derives."""
        heads = {h.head_fact for h in self.hypotheses}
        return sorted((g for g in self.gold if g not in heads), key=serialize_fact)


@dataclass
class TrainReport:
    iterations: int
    weights: RuleWeights
    mismatches: list = field(default_factory=list)  # per epoch
    converged: bool = False
    infeasible: list = field(default_factory=list)  # (tick, fact)

    def summary(self) -> str:
        lines = [f"epochs\t{self.iterations}", f"converged\t{'yes' if self.converged else 'no'}"]
        lines += [f"epoch {i}\t{m}" for i, m in enumerate(self.mismatches, 1)]
        lines += [f"weight\t{compact(r)}\t{format_decimal(w)}"
                  for r, w in sorted(self.weights.weights.items(), key=lambda kv: kv[0].value)]
        return "\n".join(lines) + "\n"


def gold_selection(sample: LabeledTick, weights: RuleWeights) -> list[Hypothesis]:
    """For every gold fact, the hypothesis deriving it with the highest current utility."""
    best: dict = {}
    for h in sorted(sample.hypotheses, key=Hypothesis.sort_key):
        if h.head_fact not in sample.gold:
            continue
        cur = best.get(h.head_fact)
        if cur is None or weights.utility(h) > weights.utility(cur):
            best[h.head_fact] = h
    return list(best.values())


def rule_counts(hyps: Iterable[Hypothesis]) -> Counter:
    return Counter(h.rule_id for h in hyps)


def rule_evidence(hyps: Iterable[Hypothesis]) -> Counter:
    """Per-rule sum of confidences: the feature vector whose dot product with the weights is the utility."""
    out: Counter = Counter()
    for h in hyps:
        out[h.rule_id] += h.confidence
    return out


FEATURES = {"confidence": rule_evidence, "count": rule_counts}


def perceptron_step(sample: LabeledTick, weights: RuleWeights, lr: float, features: str = "confidence") -> bool:
    """One update on one sample; returns True if the sample was mismatched."""
    phi = FEATURES[features]
    chosen = select_world(sample.hypotheses, weights).chosen
    if {h.head_fact for h in chosen} == set(sample.gold):
        return False
    gold = phi(gold_selection(sample, weights))
    got = phi(chosen)
    for rule in sorted(set(gold) | set(got), key=lambda r: r.value):
        weights[rule] = max(0.0, weights[rule] + lr * (gold[rule] - got[rule]))
    return True


def train(samples: Sequence[LabeledTick], init: Optional[RuleWeights] = None, lr: float = 0.1,
          max_epochs: int = 100, features: str = "confidence") -> TrainReport:
    """Perceptron passes over ``samples`` in order until an epoch has no mismatch.

    ``features="count"`` counts chosen hypotheses per rule instead of summing
    their confidences.
    """
    if features not in FEATURES:
        raise ValueError(f"unknown feature map {features!r}")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if max_epochs < 0:
        raise ValueError("max_epochs must be >= 0")
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    weights = (init or RuleWeights()).copy()
    weights.ensure(h.rule_id for s in samples for h in s.hypotheses)
    usable = []
    infeasible = []
    for s in samples:
        bad = s.infeasible()
        if bad:
            infeasible += [(s.tick, f) for f in bad]
            log.warning("tick %d: %d gold fact(s) not derivable; sample skipped", s.tick, len(bad))
        else:
            usable.append(s)
    report = TrainReport(0, weights, infeasible=infeasible)
    for _ in range(max_epochs):
        report.iterations += 1
        errors = sum(perceptron_step(s, weights, lr, features) for s in usable)
        report.mismatches.append(errors)
        if errors == 0:
            report.converged = True
            break
    return report


# samples file: tab-separated lines
#   tick  hyp   rule  confidence  detection|-  target|-  fact
#   tick  gold  fact

def _term(text: str):
    if text == "-":
        return None
    ts = TokenStream(tokenize(text))
    return read_iri(ts, PRELUDE_PREFIXES)


def _fact(text: str) -> TimestampedFact:
    facts = parse_fact_document(text)
    if len(facts) != 1:
        raise ValueError(f"expected one fact, got {len(facts)}")
    return facts[0]


def parse_samples(text: str) -> list[LabeledTick]:
    hyps: dict = {}
    gold: dict = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        try:
            tick = int(parts[0])
            if parts[1] == "hyp" and len(parts) == 7:
                fact = _fact(parts[6])
                h = Hypothesis(_term(parts[2]), fact, _term(parts[4]), _term(parts[5]), float(parts[3]), tick)
                hyps.setdefault(tick, []).append(h)
                gold.setdefault(tick, set())
            elif parts[1] == "gold" and len(parts) == 3:
                gold.setdefault(tick, set()).add(_fact(parts[2]))
                hyps.setdefault(tick, [])
            else:
                raise ValueError("expected a 'hyp' (7 fields) or 'gold' (3 fields) record")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"samples line {n}: {exc}") from None
    return [LabeledTick(t, tuple(hyps[t]), frozenset(gold[t])) for t in sorted(hyps)]


def dump_samples(samples: Iterable[LabeledTick]) -> str:
    lines = []
    for s in samples:
        for h in sorted(s.hypotheses, key=Hypothesis.sort_key):
            det = format_term(h.detection) if h.detection is not None else "-"
            tgt = format_term(h.target) if h.target is not None else "-"
            lines.append("\t".join([str(s.tick), "hyp", compact(h.rule_id), repr(h.confidence), det, tgt,
                                    serialize_fact(h.head_fact)]))
        for g in sorted(s.gold, key=serialize_fact):
            lines.append("\t".join([str(s.tick), "gold", serialize_fact(g)]))
    return "\n".join(lines) + "\n" if lines else ""


def read_samples(path) -> list[LabeledTick]:
    return parse_samples(Path(path).read_text())

