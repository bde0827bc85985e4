"""A federation node: one engine, one evaluation thread, message passing only."""
from __future__ import annotations

import dataclasses
import itertools
import logging
import queue
import threading
from collections import Counter, defaultdict
from typing import Iterable, Optional

from ..lexer import ParseError
from ..ql.parser import RuleError, parse_rule_document
from ..ql.printer import pretty_print
from ..runtime import Engine, StreamError
from ..terms import Iri, StaticGraph, fact_key
from .protocol import Ack, Advertise, Err, Fact, Hello, ProtocolError, Sub, Tick, Unsub, decode, encode
from .rewrite import NodeDescriptor, QueryPlan

log = logging.getLogger(__name__)


class SubscriptionError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class Subscription:
    sid: int
    text: str
    source: str
    sink: Iri


class Node:
    """Owns a set of streams and evaluates fragments for subscribers.

    The node thread is the only one touching the engine. Transport readers
    and the driving harness talk to it through :attr:`inbox`.
    """

    def __init__(self, node_id: str, streams: dict, static: Optional[StaticGraph] = None, endpoint: str = "inproc"):
        self.node_id = node_id
        self.endpoint = endpoint
        self.streams = {s: frozenset(p) for s, p in streams.items()}
        self.engine = Engine(static)
        for s in sorted(self.streams, key=lambda i: i.value):
            self.engine.register_stream(s)
        self.inbox: queue.Queue = queue.Queue()
        self.results: queue.Queue = queue.Queue()
        self.peers: dict = {}  # node id -> connection
        self.registry: dict = {node_id: self.descriptor()}
        self.exports: dict = {}  # sid -> (connection, installed rule id)
        self.imports: dict = {}  # sid -> Subscription
        self.root_rules: list = []
        self.buffer: dict = defaultdict(list)  # (sid, tick) -> facts
        self.closed: dict = {}  # (sid, tick) -> announced count
        self.audit: Counter = Counter()
        self.errors: list = []
        self.emitted: list = []  # (tick, fact) produced here, fragment rows and root outputs alike
        self._conn_peer: dict = {}
        self._pending: dict = {}  # sid -> subscribe group awaiting ACK/ERR
        self._unsub_wait: dict = {}  # sid -> unsubscribe group awaiting ACK
        self._groups: list = []
        self._waiting: Optional[int] = None
        self._sid = itertools.count(1)
        self._thread = threading.Thread(target=self._run, name=f"node-{node_id}", daemon=True)
        self._readers: list = []

    def descriptor(self) -> NodeDescriptor:
        preds = tuple(sorted(self.streams.items(), key=lambda kv: kv[0].value))
        return NodeDescriptor(self.node_id, self.endpoint, frozenset(self.streams), preds)

    # lifecycle ----------------------------------------------------------------
    def start(self) -> "Node":
        self._thread.start()
        return self

    def stop(self, timeout: float = 2.0):
        self.inbox.put(("stop",))
        self._thread.join(timeout)
        for conn in list(self.peers.values()) + [c for c, _ in self._readers]:
            conn.close()

    def attach(self, conn):
        """Start reading ``conn`` and introduce this node over it."""
        t = threading.Thread(target=self._read, args=(conn,), daemon=True)
        self._readers.append((conn, t))
        t.start()
        conn.send(encode(Hello(self.node_id)))
        for s, preds in sorted(self.streams.items(), key=lambda kv: kv[0].value):
            conn.send(encode(Advertise(s, preds)))

    def _read(self, conn):
        while True:
            line = conn.recv()
            if line is None:
                self.inbox.put(("closed", conn))
                return
            self.inbox.put(("frame", conn, line))

    # harness-facing commands (thread-safe) ----------------------------------------
    def clock(self, t: int, facts: dict):
        self.inbox.put(("clock", t, facts))

    def subscribe(self, plan: QueryPlan, timeout: float = 5.0) -> list[Subscription]:
        reply: queue.Queue = queue.Queue()
        self.inbox.put(("subscribe", plan, reply))
        ok, value = reply.get(timeout=timeout)
        if not ok:
            raise SubscriptionError(value)
        return value

    def unsubscribe(self, sids: Iterable[int], timeout: float = 5.0):
        reply: queue.Queue = queue.Queue()
        self.inbox.put(("unsubscribe", list(sids), reply))
        ok, value = reply.get(timeout=timeout)
        if not ok:
            raise SubscriptionError(value)

    def known(self) -> dict:
        reply: queue.Queue = queue.Queue()
        self.inbox.put(("registry", reply))
        return reply.get(timeout=5.0)

    # event loop -------------------------------------------------------------------
    def _run(self):
        while True:
            item = self.inbox.get()
            kind = item[0]
            try:
                if kind == "stop":
                    return
                if kind == "frame":
                    self._frame(item[1], item[2])
                elif kind == "closed":
                    peer = self._conn_peer.pop(id(item[1]), None)
                    if peer is not None:
                        self.peers.pop(peer, None)
                elif kind == "clock":
                    self._clock(item[1], item[2])
                elif kind == "subscribe":
                    self._subscribe(item[1], item[2])
                elif kind == "unsubscribe":
                    self._unsubscribe(item[1], item[2])
                elif kind == "registry":
                    item[1].put(dict(self.registry))
            except Exception as exc:  # keep the node alive; surface through errors
                log.exception("node %s failed on %s", self.node_id, kind)
                self.errors.append(f"{kind}: {exc}")
                if kind == "clock":
                    self.results.put((item[1], None))

    def _send(self, conn, frame):
        try:
            conn.send(encode(frame))
        except (ConnectionError, OSError) as exc:
            self.errors.append(f"send failed: {exc}")

    def _frame(self, conn, line: str):
        try:
            frame = decode(line)
        except ProtocolError as exc:
            self.audit["bad_frame"] += 1
            self.errors.append(str(exc))
            return
        if isinstance(frame, Hello):
            self.peers[frame.node] = conn
            self._conn_peer[id(conn)] = frame.node
            self.registry.setdefault(frame.node, NodeDescriptor(frame.node))
        elif isinstance(frame, Advertise):
            peer = self._conn_peer.get(id(conn))
            if peer is None:
                self.audit["advertise_before_hello"] += 1
                return
            d = self.registry.get(peer, NodeDescriptor(peer))
            preds = dict(d.predicates)
            preds[frame.stream] = frame.predicates
            self.registry[peer] = NodeDescriptor(
                peer, d.endpoint, d.streams | {frame.stream}, tuple(sorted(preds.items(), key=lambda kv: kv[0].value)))
        elif isinstance(frame, Sub):
            self._install(conn, frame)
        elif isinstance(frame, Unsub):
            entry = self.exports.pop(frame.sid, None)
            if entry is not None:
                self.engine.remove_rule(entry[1])
            self._send(conn, Ack(frame.sid))
        elif isinstance(frame, Fact):
            if frame.sid not in self.imports:
                self.audit["late_fact"] += 1
                return
            self.buffer[(frame.sid, frame.tick)].append(frame.fact)
        elif isinstance(frame, Tick):
            if frame.sid not in self.imports:
                return
            self.closed[(frame.sid, frame.tick)] = frame.count
            self._try_complete()
        elif isinstance(frame, (Ack, Err)):
            self._reply(frame)

    def _install(self, conn, frame: Sub):
        try:
            rules = parse_rule_document(frame.text)
            if len(rules) != 1:
                raise RuleError("subquery must hold exactly one rule")
            rule = rules[0]
            for b in rule.body.blocks:
                if b.stream not in self.streams:
                    raise StreamError(f"stream {b.stream.value} is not owned by {self.node_id}")
            rule = dataclasses.replace(rule, id=Iri(f"{rule.id.value}_s{frame.sid}"))
            self.engine.add_rule(rule, feedback=False)
        except (ParseError, RuleError, StreamError) as exc:
            self._send(conn, Err(frame.sid, str(exc)))
            return
        self.exports[frame.sid] = (conn, rule.id)
        self._send(conn, Ack(frame.sid))

    # subscriber side ----------------------------------------------------------------
    def _subscribe(self, plan: QueryPlan, reply: queue.Queue):
        subs = []
        for frag in plan.subqueries:
            conn = self.peers.get(frag.node)
            if conn is None:
                reply.put((False, f"node {frag.node} is not connected"))
                return
            sid = next(self._sid)
            subs.append((Subscription(sid, pretty_print(frag.rule), frag.node, frag.sink), conn))
        group = {"plan": plan, "subs": [s for s, _ in subs], "waiting": {s.sid for s, _ in subs}, "reply": reply,
                 "error": None}
        if not subs:
            self._activate(group)
            return
        self._groups.append(group)
        for s, conn in subs:
            self._pending[s.sid] = group
            self._send(conn, Sub(s.sid, s.text))

    def _reply(self, frame):
        group = self._pending.pop(frame.sid, None)
        if group is None:
            waiter = self._unsub_wait.pop(frame.sid, None)
            if waiter is not None:
                waiter["waiting"].discard(frame.sid)
                if not waiter["waiting"]:
                    waiter["reply"].put((True, None))
            return
        if isinstance(frame, Err):
            source = next(s.source for s in group["subs"] if s.sid == frame.sid)
            group["error"] = f"subscription {frame.sid} rejected by {source}: {frame.reason}"
        group["waiting"].discard(frame.sid)
        if group["waiting"]:
            return
        self._groups.remove(group)
        if group["error"]:
            group["reply"].put((False, group["error"]))
        else:
            self._activate(group)

    def _activate(self, group):
        plan = group["plan"]
        for s in group["subs"]:
            if s.sink not in self.engine.streams:
                self.engine.register_stream(s.sink)
            self.imports[s.sid] = s
        rule = plan.root_rule
        if rule.id not in self.engine.rules:
            self.engine.add_rule(rule, feedback=False)
            self.root_rules.append(rule.id)
        group["reply"].put((True, list(group["subs"])))

    def _unsubscribe(self, sids: list, reply: queue.Queue):
        waiter = {"waiting": set(), "reply": reply}
        for sid in sids:
            sub = self.imports.pop(sid, None)
            if sub is None:
                continue
            conn = self.peers.get(sub.source)
            if conn is None:
                continue
            waiter["waiting"].add(sid)
            self._unsub_wait[sid] = waiter
            self._send(conn, Unsub(sid))
        if not waiter["waiting"]:
            reply.put((True, None))

    # ticks ------------------------------------------------------------------------------
    def _clock(self, t: int, facts: dict):
        for stream in sorted(facts, key=lambda s: s.value):
            batch = sorted(facts[stream], key=fact_key)
            if batch:
                self.engine.push(stream, batch)
        if self.exports:
            ids = {rid: sid for sid, (_, rid) in self.exports.items()}
            self.engine.evaluate_tick(t, list(ids))
            per_sid: dict = defaultdict(list)
            for d in self.engine.last_derivations:
                per_sid[ids[d.rule.id]].extend(d.head_facts)
            for sid in sorted(self.exports):
                conn = self.exports[sid][0]
                rows = per_sid.get(sid, [])
                for f in rows:
                    self.emitted.append((t, f))
                    self._send(conn, Fact(sid, t, f))
                self._send(conn, Tick(sid, t, len(rows)))
        if self.root_rules:
            self._waiting = t
            self._try_complete()

    def _try_complete(self):
        t = self._waiting
        if t is None:
            return
        if any((sid, t) not in self.closed for sid in self.imports):
            return
        self._waiting = None
        for sid in sorted(self.imports):
            rows = self.buffer.pop((sid, t), [])
            if len(rows) != self.closed.pop((sid, t)):
                self.audit["count_mismatch"] += 1
            self.audit["delivered"] += len(rows)
            if rows:
                self.engine.push(self.imports[sid].sink, rows)
        out = [f for _, f in self.engine.evaluate_tick(t, self.root_rules)]
        self.emitted += [(t, f) for f in out]
        self.results.put((t, out))


def facts_at(traces: dict, t: int, streams: Iterable[Iri]) -> dict:
    return {s: [f for f in traces.get(s, ()) if f.timestamp == t] for s in streams}
