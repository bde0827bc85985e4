"""Splitting a rule into per-stream fragments with filter pushdown."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..ql.ast import (
    HARD, NOW, BodySpec, Rule, StreamBlock, TriplePattern, Var, block_vars, conjoin, conjuncts, expr_vars,
    pattern_vars,
)
from ..terms import DEFAULT_NS, BlankNode, Iri, Literal, XSD_INTEGER


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class NodeDescriptor:
    node_id: str
    endpoint: str = "inproc"
    streams: frozenset = frozenset()
    predicates: tuple = ()  # sorted (stream, frozenset of predicates) pairs

    def predicates_of(self, stream: Iri) -> frozenset:
        return dict(self.predicates).get(stream, frozenset())


@dataclass(frozen=True)
class Fragment:
    node: str
    rule: Rule
    sink: Iri
    exported: tuple  # Vars in column order
    pushed: tuple  # filter conjuncts evaluated at the source
    naf: bool = False


@dataclass
class QueryPlan:
    root: str
    rule: Rule  # the original rule
    root_rule: Rule
    subqueries: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def join_vars(self) -> dict:
        return {f.sink: f.exported for f in self.subqueries}


def column(v: Var) -> Iri:
    return Iri(DEFAULT_NS + "x_" + v.name)


MATCH = Iri(DEFAULT_NS + "x_match")
ONE = Literal("1", XSD_INTEGER)


def owners(registry: Iterable[NodeDescriptor]) -> dict:
    out: dict = {}
    for node in registry:
        for s in node.streams:
            if s in out and out[s] != node.node_id:
                raise PlanError(f"stream {s.value} advertised by both {out[s]} and {node.node_id}")
            out[s] = node.node_id
    return out


def _naf_vars(nb: StreamBlock) -> set:
    out = block_vars(nb)
    for f in nb.filters:
        out |= expr_vars(f)
    return out


def _row_patterns(row: Var, exported: tuple) -> tuple:
    if not exported:
        return (TriplePattern(row, MATCH, ONE),)
    return tuple(TriplePattern(row, column(v), v) for v in exported)


def _fragment_rule(rule_id: Iri, block: StreamBlock, pushed: list, exported: tuple) -> Rule:
    row = BlankNode("row")
    if exported:
        head = tuple(TriplePattern(row, column(v), v) for v in exported)
    else:
        head = (TriplePattern(row, MATCH, ONE),)
    body_block = StreamBlock(block.stream, block.window, block.timestamp, block.patterns,
                             tuple(c for c in [conjoin(pushed)] if c is not None))
    return Rule(rule_id, HARD, head, BodySpec(positive_blocks=(body_block,)))


def rewrite(rule: Rule, registry: Iterable[NodeDescriptor], self_id: str, plan_id: int = 0) -> QueryPlan:
    """Push every block over a remote stream to the node that owns it.

    Each remote block becomes a fragment rule whose head writes one row per
    binding (``_:row :x_<var> ?var``) for the variables used outside the
    block. Filter conjuncts whose variables the block binds travel with it.
    The root rule reads the rows back through a Now window on the sink stream.
    """
    registry = list(registry)
    own = owners(registry)
    body = rule.body
    for b in body.blocks:
        if b.stream not in own:
            raise PlanError(f"stream {b.stream.value} is not advertised by any node")

    positive = list(body.positive_blocks)
    naf = list(body.naf_blocks)
    pos_filters = [c for b in positive for f in b.filters for c in conjuncts(f)]
    pos_filters += [c for f in body.filters for c in conjuncts(f)]

    head_v = set()
    for p in rule.head:
        head_v |= pattern_vars(p)
    static_v = set()
    for p in body.static_patterns:
        static_v |= pattern_vars(p)
    outer = set(static_v)
    for b in positive:
        outer |= block_vars(b)

    remote_pos = [i for i, b in enumerate(positive) if own[b.stream] != self_id]
    pushed_to: dict = {i: [] for i in remote_pos}
    residual = []
    for c in pos_filters:
        homes = [i for i in remote_pos if expr_vars(c) <= block_vars(positive[i])]
        for i in homes:
            pushed_to[i].append(c)
        if not homes:
            residual.append(c)
    residual_v = set().union(*(expr_vars(c) for c in residual)) if residual else set()

    fragments = []
    new_positive = []
    k = 0
    for i, b in enumerate(positive):
        if i not in pushed_to:
            new_positive.append(StreamBlock(b.stream, b.window, b.timestamp, b.patterns, ()))
            continue
        elsewhere = head_v | static_v | residual_v
        for j, other in enumerate(positive):
            if j != i:
                elsewhere |= block_vars(other)
        for nb in naf:
            elsewhere |= _naf_vars(nb)
        exported = tuple(sorted(block_vars(b) & elsewhere))
        sink = Iri(DEFAULT_NS + f"sub{plan_id}_{k}")
        frag_id = Iri(DEFAULT_NS + f"frag{plan_id}_{k}")
        fragments.append(Fragment(own[b.stream], _fragment_rule(frag_id, b, pushed_to[i], exported), sink, exported,
                                  tuple(pushed_to[i])))
        new_positive.append(StreamBlock(sink, NOW, None, _row_patterns(Var(f"_r{k}"), exported), ()))
        k += 1

    new_naf = []
    for nb in naf:
        own_c = [c for f in nb.filters for c in conjuncts(f)]
        if own[nb.stream] == self_id:
            new_naf.append(nb)
            continue
        local = block_vars(nb)
        pushed = [c for c in own_c if expr_vars(c) <= local]
        kept = [c for c in own_c if not expr_vars(c) <= local]
        kept_v = set().union(*(expr_vars(c) for c in kept)) if kept else set()
        exported = tuple(sorted(local & (outer | kept_v)))
        sink = Iri(DEFAULT_NS + f"sub{plan_id}_{k}")
        frag_id = Iri(DEFAULT_NS + f"frag{plan_id}_{k}")
        fragments.append(Fragment(own[nb.stream], _fragment_rule(frag_id, nb, pushed, exported), sink, exported,
                                  tuple(pushed), naf=True))
        filters = tuple(c for c in [conjoin(kept)] if c is not None)
        new_naf.append(StreamBlock(sink, NOW, None, _row_patterns(Var(f"_r{k}"), exported), filters))
        k += 1

    root_filters = tuple(c for c in [conjoin(residual if remote_pos else pos_filters)] if c is not None)
    if not fragments:
        root_rule = rule
    else:
        root_rule = Rule(rule.id, rule.kind, rule.head,
                         BodySpec(tuple(new_positive), tuple(new_naf), root_filters, body.static_patterns),
                         rule.prefixes)
    stats = {
        "fragments": len(fragments),
        "pushed_conjuncts": sum(len(f.pushed) for f in fragments),
        "residual_conjuncts": len(residual) if remote_pos else len(pos_filters),
    }
    return QueryPlan(self_id, rule, root_rule, fragments, stats)


def check_pushdown(plan: QueryPlan) -> list[str]:
    """Pushed conjuncts whose variables the fragment does not bind (should be empty)."""
    problems = []
    for f in plan.subqueries:
        bound = block_vars(f.rule.body.positive_blocks[0])
        for c in f.pushed:
            missing = expr_vars(c) - bound
            if missing:
                problems.append(f"{f.rule.id.value}: {sorted(v.name for v in missing)}")
    return problems


def plan_streams(plan: QueryPlan) -> set:
    return {f.sink for f in plan.subqueries}


def fragment_for(plan: QueryPlan, sink: Iri) -> Optional[Fragment]:
    return next((f for f in plan.subqueries if f.sink == sink), None)
