"""Rule-driven tracking: features -> windowed rules -> world selection -> tracklets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from itertools import groupby
from typing import Iterable, Optional

from .config import EngineConfig
from .fusion import Hypothesis, RuleWeights, WorldSelection, explain, select_world
from .ql.ast import Call, Rule, Var, conjuncts
from .ql.parser import parse_rule_document
from .runtime import Derivation, Engine
from .terms import DEFAULT_NS, RDF_TYPE, SSR, Iri, Literal, QuotedTriple, StaticGraph, TimestampedFact
from .tracker import (
    DET, IS_SAMPLE_OF, SCORE, TRACKLET_PROPOSAL, TRK, BoxMinter, DetectionRecord, FeatureExtractor, TrackletTable,
    advance_tracklets, mot_line,
)

log = logging.getLogger(__name__)

STREAM = Iri(DEFAULT_NS + "ssr")
IN_FOV = Iri(DEFAULT_NS + "inFOV")
FOV = Iri(SSR + "FoV")


def tracking_rules(config: EngineConfig = EngineConfig()) -> list[Rule]:
    """The bundled FoV-entry, IOU-association and re-identification rules."""
    text = resources.files("streamfusion").joinpath("data/tracking_rules.ttl").read_text()
    return parse_rule_document(text, soft_pattern=config.soft_rule_id_pattern, tick_seconds=config.tick_seconds)


def is_association_rule(rule: Rule) -> bool:
    return rule.is_soft and len(rule.head) == 1 and rule.head[0].predicate == IS_SAMPLE_OF


def _detection_var(rule: Rule) -> Optional[Var]:
    for block in rule.body.positive_blocks:
        for p in block.patterns:
            if p.quoted and p.predicate == DET and isinstance(p.object, Var):
                return p.object
    return None


def _score_var(rule: Rule) -> Optional[Var]:
    found = None
    for block in rule.body.positive_blocks:
        for p in block.patterns:
            if p.predicate == SCORE and isinstance(p.object, Var):
                found = p.object
    return found


def _uses_iou(rule: Rule) -> bool:
    def walk(e):
        if isinstance(e, Call):
            return e.name == "iou" or any(walk(a) for a in e.args)
        return any(walk(x) for x in (getattr(e, "left", None), getattr(e, "right", None)) if x is not None)

    exprs = list(rule.body.filters) + [f for b in rule.body.positive_blocks for f in b.filters]
    return any(walk(c) for e in exprs for c in conjuncts(e))


def to_hypothesis(d: Derivation) -> Hypothesis:
    """Read a soft-rule derivation as a hypothesis.

    Association rules (a single ``?B sosa:isSampleOf ?O`` head) compete for
    the detection bound under ``:det`` (else the head subject) and the head
    object. Confidence is the IOU the filter computed, else the matched
    ``:score``.
    """
    rule = d.rule
    fact = d.head_facts[0]
    detection = target = None
    if is_association_rule(rule):
        dv = _detection_var(rule)
        detection = d.binding[dv] if dv is not None else fact.subject
        target = fact.object
    confidence = 1.0
    ious = [v for name, _, v in d.builtin_values if name == "iou"]
    sv = _score_var(rule)
    if _uses_iou(rule) and ious:
        confidence = ious[-1]
    elif sv is not None and isinstance(d.binding.get(sv), Literal):
        value = d.binding[sv].numeric()
        if value is not None:
            confidence = float(value)
    confidence = min(1.0, max(0.0, confidence))
    return Hypothesis(rule.id, fact, detection, target, confidence, d.tick, d.filter_text)


@dataclass
class TickResult:
    tick: int
    selection: WorldSelection
    rows: list
    associations: list
    output: list = field(default_factory=list)  # chosen soft heads and hard heads, in order
    explanations: list = field(default_factory=list)

    def mot_lines(self) -> list[str]:
        return [mot_line(*r) for r in self.rows]


class TrackingPipeline:
    """Runs the two evaluation phases per tick.

    Phase one evaluates association rules and fixes this tick's tracklet
    assignments; phase two evaluates the remaining rules over the stream
    extended with those assignments.
    """

    def __init__(self, rules: Optional[Iterable[Rule]] = None, weights: Optional[RuleWeights] = None,
                 config: EngineConfig = EngineConfig(), static: Optional[StaticGraph] = None):
        self.config = config
        self.rules = list(rules) if rules is not None else tracking_rules(config)
        self.weights = (weights or RuleWeights()).copy().ensure(r.id for r in self.rules if r.is_soft)
        self.engine = Engine(static, same_tick_fixpoint=config.same_tick_fixpoint)
        self.engine.register_stream(STREAM)
        for b in {b.stream for r in self.rules for b in r.body.blocks} - {STREAM}:
            self.engine.register_stream(b)
        for r in self.rules:
            self.engine.add_rule(r)
        self.phase_a = [r.id for r in self.rules if is_association_rule(r)]
        self.phase_b = [r.id for r in self.rules if not is_association_rule(r)]
        minter = BoxMinter()
        self.extractor = FeatureExtractor(minter, config)
        self.table = TrackletTable(config, minter)
        self.pending: list = []
        self.tick: Optional[int] = None

    def _hypotheses(self) -> list[Hypothesis]:
        return [to_hypothesis(d) for d in self.engine.last_derivations if d.rule.is_soft]

    def step(self, t: int, records: Iterable[DetectionRecord]) -> TickResult:
        if self.tick is not None and t <= self.tick:
            raise ValueError(f"tick {t} does not advance past {self.tick}")
        self.tick = t
        records = list(records)
        facts, boxes = self.extractor.extract(records, t)
        for b, rec in zip(boxes, records):
            if rec.score > self.config.score_gate:
                prop = QuotedTriple(Iri(DEFAULT_NS + "prop" + b.value.rsplit("#b", 1)[-1]), TRK, b)
                facts.append(TimestampedFact(prop, RDF_TYPE, TRACKLET_PROPOSAL, t))
        now = [f for f in self.pending if f.timestamp == t]
        self.engine.push(STREAM, now + facts)
        self.pending = [f for f in self.pending if f.timestamp > t]

        self.engine.evaluate_tick(t, self.phase_a)
        selection = select_world(self._hypotheses(), self.weights)
        self.table, produced = advance_tracklets(self.table, selection.chosen, list(zip(boxes, records)), t)
        current = [f for f in produced if f.timestamp == t]
        self.pending += [f for f in produced if f.timestamp > t]
        chosen_a = [h.head_fact for h in selection.chosen]
        self.engine.push(STREAM, current + chosen_a)

        self.engine.evaluate_tick(t, self.phase_b)
        selection_b = select_world(self._hypotheses(), self.weights)
        hard_out = [f for d in self.engine.last_derivations if not d.rule.is_soft for f in d.head_facts]
        chosen_b = [h.head_fact for h in selection_b.chosen]
        seen = sorted((trk.object for trk in self.table.live if trk.last_hit_tick == t), key=lambda o: o.value)
        self.engine.push(STREAM, chosen_b + [TimestampedFact(o, IN_FOV, FOV, t) for o in seen])

        merged = WorldSelection(
            selection.chosen + selection_b.chosen, selection.score + selection_b.score,
            selection.rejected + selection_b.rejected, {**selection.reasons, **selection_b.reasons}, self.weights,
        )
        return TickResult(
            t, merged, list(self.table.rows), list(self.table.associations),
            output=chosen_a + chosen_b + hard_out, explanations=explain(merged),
        )

    def run(self, records: Iterable[DetectionRecord], ticks: Optional[Iterable[int]] = None) -> list[TickResult]:
        by_frame = {k: list(v) for k, v in groupby(sorted(records, key=lambda r: r.frame), key=lambda r: r.frame)}
        frames = sorted(set(by_frame) | set(ticks or ()))
        if not frames:
            return []
        return [self.step(t, by_frame.get(t, [])) for t in range(frames[0], frames[-1] + 1)]
