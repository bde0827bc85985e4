"""Drive several nodes from one scripted clock and compare with a single engine."""
from __future__ import annotations

import logging
import queue
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from ..lexer import TokenStream, tokenize
from ..ql.ast import Rule
from ..runtime import Engine
from ..terms import PRELUDE_PREFIXES, Iri, StaticGraph, TimestampedFact, fact_key
from ..turtle import read_iri
from .node import Node, facts_at
from .rewrite import QueryPlan, check_pushdown, rewrite
from .transport import Listener, NodeUnreachable, connect, queue_pair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    endpoint: str = "inproc"
    streams: tuple = ()


@dataclass(frozen=True)
class Topology:
    nodes: tuple
    root: str

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node id in topology")
        if self.root not in ids:
            raise ValueError(f"root {self.root!r} is not a node")
        seen = {}
        for n in self.nodes:
            for s in n.streams:
                if s in seen:
                    raise ValueError(f"stream {s.value} owned by both {seen[s]} and {n.node_id}")
                seen[s] = n.node_id

    def owner(self, stream: Iri) -> Optional[str]:
        return next((n.node_id for n in self.nodes if stream in n.streams), None)


def _stream(text: str) -> Iri:
    return read_iri(TokenStream(tokenize(text)), PRELUDE_PREFIXES)


def parse_topology(text: str) -> Topology:
    """Lines ``node <id> <inproc|host:port> <stream> ...`` and an optional ``root <id>``.

    Without a ``root`` line the first node is the root.
    """
    nodes = []
    root = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "node" and len(parts) >= 3:
                nodes.append(NodeSpec(parts[1], parts[2], tuple(_stream(p) for p in parts[3:])))
            elif parts[0] == "root" and len(parts) == 2:
                root = parts[1]
            else:
                raise ValueError("expected 'node <id> <endpoint> <streams...>' or 'root <id>'")
        except ValueError as exc:
            raise ValueError(f"topology line {n}: {exc}") from None
    if not nodes:
        raise ValueError("topology lists no nodes")
    return Topology(tuple(nodes), root or nodes[0].node_id)


def load_topology(path) -> Topology:
    return parse_topology(Path(path).read_text())


def trace_ticks(traces: dict) -> range:
    stamps = [f.timestamp for facts in traces.values() for f in facts]
    return range(min(stamps), max(stamps) + 1) if stamps else range(0)


def run_monolithic(rules: Iterable[Rule], traces: dict, ticks: Iterable[int],
                   static: Optional[StaticGraph] = None) -> dict:
    """Per-tick sorted head facts of ``rules`` over all streams on one engine."""
    engine = Engine(static)
    for s in sorted(traces, key=lambda i: i.value):
        engine.register_stream(s)
    rules = list(rules)
    for r in rules:
        for b in r.body.blocks:
            if b.stream not in engine.streams:
                engine.register_stream(b.stream)
        engine.add_rule(r, feedback=False)
    out = {}
    for t in ticks:
        for s in sorted(traces, key=lambda i: i.value):
            batch = sorted((f for f in traces[s] if f.timestamp == t), key=fact_key)
            if batch:
                engine.push(s, batch)
        out[t] = sorted((f for _, f in engine.evaluate_tick(t)), key=fact_key)
    return out


@dataclass
class FederatedRun:
    outputs: dict
    plans: list
    audit: Counter = field(default_factory=Counter)
    errors: list = field(default_factory=list)
    emitted: dict = field(default_factory=dict)  # node id -> [(tick, fact)]


class Federation:
    """Nodes of a topology connected in a star around the root."""

    def __init__(self, topology: Topology, predicates: Optional[dict] = None, static: Optional[StaticGraph] = None,
                 attempts: int = 5, backoff: float = 0.05, timeout: float = 10.0):
        self.topology = topology
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        predicates = predicates or {}
        self.nodes = {
            spec.node_id: Node(spec.node_id, {s: predicates.get(s, frozenset()) for s in spec.streams},
                               static if spec.node_id == topology.root else None, spec.endpoint)
            for spec in topology.nodes
        }
        self.listeners: list = []
        self.plans: list[QueryPlan] = []
        self.sids: list = []

    @property
    def root(self) -> Node:
        return self.nodes[self.topology.root]

    def start(self):
        for node in self.nodes.values():
            node.start()
        root = self.root
        for spec in self.topology.nodes:
            if spec.node_id == root.node_id:
                continue
            node = self.nodes[spec.node_id]
            if spec.endpoint == "inproc":
                a, b = queue_pair(spec.node_id)
                node.attach(b)
                root.attach(a)
                continue
            try:
                listener = Listener(spec.endpoint, node.attach)
                self.listeners.append(listener)
                address = listener.address
            except OSError as exc:
                log.warning("node %s cannot listen on %s: %s", spec.node_id, spec.endpoint, exc)
                address = spec.endpoint
            root.attach(connect(address, self.attempts, self.backoff))
        self._await_registry()
        return self

    def _await_registry(self):
        expected = {n.node_id: set(n.streams) for n in self.topology.nodes}
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            known = self.root.known()
            if all(k in known and expected[k] <= set(known[k].streams) for k in expected):
                return known
            time.sleep(0.002)
        raise NodeUnreachable("timed out waiting for node advertisements")

    def install(self, rules: Iterable[Rule]) -> list[QueryPlan]:
        registry = list(self.root.known().values())
        for rule in rules:
            plan = rewrite(rule, registry, self.root.node_id, plan_id=len(self.plans))
            problems = check_pushdown(plan)
            if problems:
                raise AssertionError(f"unsound pushdown: {problems}")
            self.sids += [s.sid for s in self.root.subscribe(plan, self.timeout)]
            self.plans.append(plan)
        return self.plans

    def tick(self, t: int, traces: dict) -> list[TimestampedFact]:
        for spec in self.topology.nodes:
            if spec.node_id != self.root.node_id:
                self.nodes[spec.node_id].clock(t, facts_at(traces, t, spec.streams))
        root_spec = next(s for s in self.topology.nodes if s.node_id == self.root.node_id)
        self.root.clock(t, facts_at(traces, t, root_spec.streams))
        try:
            got_t, facts = self.root.results.get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError(f"tick {t} did not complete within {self.timeout}s") from None
        if got_t != t or facts is None:
            raise RuntimeError(f"root failed at tick {got_t}: {self.root.errors}")
        return sorted(facts, key=fact_key)

    def stop(self):
        if self.sids:
            try:
                self.root.unsubscribe(self.sids, self.timeout)
            except Exception as exc:
                log.warning("unsubscribe failed: %s", exc)
            self.sids = []
        for node in self.nodes.values():
            node.stop()
        for listener in self.listeners:
            listener.close()

    def __enter__(self):
        try:
            return self.start()
        except BaseException:
            self.stop()
            raise

    def __exit__(self, *exc):
        self.stop()


def stream_predicates(traces: dict) -> dict:
    return {s: frozenset(f.predicate for f in facts) for s, facts in traces.items()}


def run_federated(topology: Topology, rules: Iterable[Rule], traces: dict, ticks: Iterable[int],
                  static: Optional[StaticGraph] = None, **kwargs) -> FederatedRun:
    fed = Federation(topology, stream_predicates(traces), static, **kwargs)
    with fed:
        fed.install(rules)
        outputs = {t: fed.tick(t, traces) for t in ticks}
        audit = Counter()
        errors = []
        for node in fed.nodes.values():
            audit.update(node.audit)
            errors += node.errors
        emitted = {k: list(n.emitted) for k, n in fed.nodes.items()}
        return FederatedRun(outputs, list(fed.plans), audit, errors, emitted)


def compare(mono: dict, fed: dict) -> list[int]:
    """Ticks whose output multisets differ."""
    return [t for t in sorted(set(mono) | set(fed)) if Counter(mono.get(t, ())) != Counter(fed.get(t, ()))]
