"""Windowed evaluation of construct rules over named fact streams.

An :class:`Engine` owns one :class:`WindowState` per (stream, window spec)
pair. Each tick it joins the positive blocks of every active rule against the
window contents (and the static graph), applies filters, drops bindings that
have an extension in any NAF block, and instantiates the rule heads.
"""
from __future__ import annotations

import logging
import queue
from collections import Counter, deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .boxes import Box, iou as box_iou
from .ql.analysis import pattern_predicates
from .ql.ast import (
    BinOp, Call, Const, Now, QuotedPattern, Rule, StreamBlock, TermConst, TriplePattern, Var,
    pattern_constant_count, pattern_vars,
)
from .ql.printer import format_expr
from .terms import (
    DEFAULT_NS, XSD_INTEGER, BlankNode, Iri, Literal, QuotedTriple, StaticGraph, TimestampedFact,
    format_term, term_key,
)

log = logging.getLogger(__name__)

GEOMETRY_PREDICATES = {
    Iri(DEFAULT_NS + "x"): "x",
    Iri(DEFAULT_NS + "y"): "y",
    Iri(DEFAULT_NS + "w"): "w",
    Iri(DEFAULT_NS + "h"): "h",
}
DEFAULT_OUTPUT = Iri(DEFAULT_NS + "out")
FIXPOINT_CAP = 16


class StreamError(ValueError):
    pass


class FilterError(ValueError):
    pass


def tick_literal(t: int) -> Literal:
    return Literal(str(t), XSD_INTEGER)


def window_ticks(spec) -> int:
    return 1 if isinstance(spec, Now) else spec.ticks


def _append_ordered(dq: deque, item):
    if not dq or dq[-1][0] <= item[0]:
        dq.append(item)
        return
    i = len(dq)
    while i > 0 and dq[i - 1][0] > item[0]:
        i -= 1
    dq.insert(i, item)


class WindowState:
    """Live facts of one stream under one window spec.

    Now holds facts stamped exactly ``t``; Range(n) holds stamps in (t-n, t].
    A fact whose subject is a quoted triple also records an *occurrence* of
    that triple at the fact's timestamp; plain patterns match occurrences as
    well as asserted facts.
    """

    def __init__(self, stream: Iri, spec):
        self.stream = stream
        self.spec = spec
        self.span = window_ticks(spec)
        self.entries: deque = deque()  # (ts, visible_from, fact)
        self.asserted: dict = {}  # predicate -> deque[(ts, vis, fact)]
        self.occurrences: dict = {}  # quoted predicate -> deque[(ts, vis, qt)]
        self._occ_seen: set = set()
        self.low_watermark = 0

    def insert(self, fact: TimestampedFact, visible_from: Optional[int] = None):
        vis = fact.timestamp if visible_from is None else visible_from
        ts = fact.timestamp
        if ts < self.low_watermark:
            return
        _append_ordered(self.entries, (ts, vis, fact))
        _append_ordered(self.asserted.setdefault(fact.predicate, deque()), (ts, vis, fact))
        qt = fact.subject
        if isinstance(qt, QuotedTriple) and (qt, ts) not in self._occ_seen:
            self._occ_seen.add((qt, ts))
            _append_ordered(self.occurrences.setdefault(qt.predicate, deque()), (ts, vis, qt))

    def advance(self, t: int):
        """Evict facts that can no longer be in the window at tick >= t."""
        cutoff = t - self.span
        if cutoff + 1 <= self.low_watermark:
            return
        self.low_watermark = cutoff + 1
        while self.entries and self.entries[0][0] <= cutoff:
            self.entries.popleft()
        for index in (self.asserted, self.occurrences):
            for key in list(index):
                dq = index[key]
                while dq and dq[0][0] <= cutoff:
                    item = dq.popleft()
                    if index is self.occurrences:
                        self._occ_seen.discard((item[2], item[0]))
                if not dq:
                    del index[key]

    def _live(self, ts, vis, t) -> bool:
        return t - self.span < ts <= t and vis <= t

    def contents(self, t: int) -> list[TimestampedFact]:
        return [f for ts, vis, f in self.entries if self._live(ts, vis, t)]

    def candidates(self, pattern: TriplePattern, t: int):
        """Yield (subject, predicate, object, ts) tuples a pattern may match."""
        pred = pattern.predicate if isinstance(pattern.predicate, Iri) else None
        if pattern.quoted:
            sources = [self.occurrences.get(pred, ())] if pred else list(self.occurrences.values())
            for dq in sources:
                for ts, vis, qt in dq:
                    if self._live(ts, vis, t):
                        yield qt.subject, qt.predicate, qt.object, ts
            return
        sources = [self.asserted.get(pred, ())] if pred else list(self.asserted.values())
        for dq in sources:
            for ts, vis, f in dq:
                if self._live(ts, vis, t):
                    yield f.subject, f.predicate, f.object, ts
        sources = [self.occurrences.get(pred, ())] if pred else list(self.occurrences.values())
        for dq in sources:
            for ts, vis, qt in dq:
                if self._live(ts, vis, t):
                    yield qt.subject, qt.predicate, qt.object, ts


# matching ---------------------------------------------------------------

def binding_key(b: dict) -> tuple:
    return tuple((v.name, term_key(t)) for v, t in sorted(b.items(), key=lambda kv: kv[0].name))



def _unify(pt, term, b: dict) -> bool:
    if isinstance(pt, Var):
        cur = b.get(pt)
        if cur is None:
            b[pt] = term
            return True
        return cur == term
    if isinstance(pt, QuotedPattern):
        if not isinstance(term, QuotedTriple):
            return False
        return (_unify(pt.subject, term.subject, b) and _unify(pt.predicate, term.predicate, b)
                and _unify(pt.object, term.object, b))
    return pt == term


def substitute(pt, b: dict):
    if isinstance(pt, Var):
        return b.get(pt, pt)
    if isinstance(pt, QuotedPattern):
        s, p, o = substitute(pt.subject, b), substitute(pt.predicate, b), substitute(pt.object, b)
        if any(isinstance(x, (Var, QuotedPattern)) for x in (s, p, o)):
            return QuotedPattern(s, p, o)
        return QuotedTriple(s, p, o)
    return pt


def substitute_pattern(p: TriplePattern, b: dict) -> TriplePattern:
    return TriplePattern(substitute(p.subject, b), substitute(p.predicate, b), substitute(p.object, b),
                         p.timestamp, p.quoted)


def _pattern_matches(pattern: TriplePattern, candidates) -> list:
    """Distinct (binding, ts) pairs for one pattern over candidate tuples."""
    out = []
    seen = set()
    for s, p, o, ts in candidates:
        b = {}
        if not (_unify(pattern.subject, s, b) and _unify(pattern.predicate, p, b) and _unify(pattern.object, o, b)):
            continue
        if pattern.timestamp is not None:
            if not _unify(pattern.timestamp, tick_literal(ts), b):
                continue
        key = (tuple(sorted(b.items(), key=lambda kv: kv[0].name)), ts if ts is not None else -1)
        if key in seen:
            continue
        seen.add(key)
        out.append((b, ts))
    return out


def _join_rows(rows: list, matches: list) -> list:
    """Hash join accumulated (binding, maxts) rows with pattern matches."""
    if not rows or not matches:
        return []
    shared = sorted(set(rows[0][0]) & set(matches[0][0]))
    index: dict = {}
    for b, ts in matches:
        index.setdefault(tuple(b[v] for v in shared), []).append((b, ts))
    out = []
    for b, mts in rows:
        for b2, ts in index.get(tuple(b[v] for v in shared), ()):
            merged = dict(b)
            merged.update(b2)
            if ts is None:
                top = mts
            elif mts is None:
                top = ts
            else:
                top = max(mts, ts)
            out.append((merged, top))
    return out


def order_patterns(patterns, seed: dict = None) -> list:
    """Most constants (counting seed-bound variables) first; ties keep textual order."""
    seed = seed or {}

    def score(p):
        return pattern_constant_count(p) + sum(1 for v in pattern_vars(p) if v in seed)

    return [p for _, p in sorted(enumerate(patterns), key=lambda ip: (-score(ip[1]), ip[0]))]


def _extend(rows: list, pattern: TriplePattern, candidates) -> list:
    """Extend each (binding, maxts) row by the matches of ``pattern``.

    A single row is matched by substitution (selective lookups); several rows
    are hash-joined against the pattern's unrestricted matches.
    """
    if len(rows) != 1:
        return _join_rows(rows, _pattern_matches(pattern, candidates(pattern)))
    base, mts = rows[0]
    sub = substitute_pattern(pattern, base)
    out = []
    for b, ts in _pattern_matches(sub, candidates(sub)):
        if any(base.get(k, v) != v for k, v in b.items()):
            continue
        merged = dict(base)
        merged.update(b)
        top = mts if ts is None else ts if mts is None else max(mts, ts)
        out.append((merged, top))
    return out


def match_block(block: StreamBlock, window: WindowState, seed: Optional[dict] = None, t: int = 0) -> list[dict]:
    """All extensions of ``seed`` satisfying every pattern of ``block`` at tick ``t``.

    The block timestamp variable binds the latest timestamp among the matched
    facts. Filters attached to the block are not applied here.
    """
    seed = dict(seed or {})
    rows = [(seed, None)]
    for pattern in order_patterns(block.patterns, seed):
        rows = _extend(rows, pattern, lambda p: window.candidates(p, t))
        if not rows:
            return []
    out = {}
    for b, mts in rows:
        if block.timestamp is not None:
            lit = tick_literal(mts)
            if b.get(block.timestamp, lit) != lit:
                continue
            b[block.timestamp] = lit
        out.setdefault(binding_key(b), b)
    return list(out.values())


def _static_candidates(graph: StaticGraph, pattern: TriplePattern):
    pred = pattern.predicate if isinstance(pattern.predicate, Iri) else None
    if pattern.quoted:
        seen = set()
        for s, _, _ in graph.by_predicate(None):
            if isinstance(s, QuotedTriple) and (pred is None or s.predicate == pred) and s not in seen:
                seen.add(s)
                yield s.subject, s.predicate, s.object, None
        return
    for s, p, o in graph.by_predicate(pred):
        yield s, p, o, None


def match_static(patterns, graph: StaticGraph, seed: Optional[dict] = None) -> list[dict]:
    rows = [(dict(seed or {}), None)]
    for pattern in order_patterns(patterns, seed):
        plain = TriplePattern(pattern.subject, pattern.predicate, pattern.object, None, pattern.quoted)
        rows = _extend(rows, plain, lambda p: _static_candidates(graph, p))
        if not rows:
            return []
    out = {}
    for b, _ in rows:
        out.setdefault(binding_key(b), b)
    return list(out.values())


def join_bindings(left: list[dict], right: list[dict]) -> list[dict]:
    if not left or not right:
        return []
    shared = sorted(set(left[0]) & set(right[0]))
    index: dict = {}
    for b in right:
        index.setdefault(tuple(b[v] for v in shared), []).append(b)
    out = []
    for b in left:
        for b2 in index.get(tuple(b[v] for v in shared), ()):
            merged = dict(b)
            merged.update(b2)
            out.append(merged)
    return out


# filters ----------------------------------------------------------------

def _numeric(value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value
    if isinstance(value, Literal):
        return value.numeric()
    return None


def eval_expr(expr, binding: dict, builtins: Optional[dict] = None, trace: Optional[list] = None):
    if isinstance(expr, Var):
        if expr not in binding:
            raise FilterError(f"unbound variable {expr}")
        return binding[expr]
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, TermConst):
        return expr.value
    if isinstance(expr, Call):
        fn = (builtins or {}).get(expr.name)
        if fn is None:
            raise FilterError(f"no builtin {expr.name}")
        args = [eval_expr(a, binding, builtins, trace) for a in expr.args]
        value = fn(*args)
        if trace is not None:
            trace.append((expr.name, tuple(args), value))
        return value
    if isinstance(expr, BinOp):
        if expr.op == "&&":
            left = eval_expr(expr.left, binding, builtins, trace)
            if not isinstance(left, bool):
                raise FilterError("&& needs boolean operands")
            if not left:
                return False
            right = eval_expr(expr.right, binding, builtins, trace)
            if not isinstance(right, bool):
                raise FilterError("&& needs boolean operands")
            return right
        left = eval_expr(expr.left, binding, builtins, trace)
        right = eval_expr(expr.right, binding, builtins, trace)
        ln, rn = _numeric(left), _numeric(right)
        if expr.op in ("+", "-"):
            if ln is None or rn is None:
                raise FilterError(f"non-numeric operand to {expr.op}")
            return ln + rn if expr.op == "+" else ln - rn
        if expr.op in ("=", "!="):
            if ln is not None and rn is not None:
                equal = ln == rn
            else:
                equal = left == right
            return equal if expr.op == "=" else not equal
        if ln is None or rn is None:
            raise FilterError(f"non-numeric operand to {expr.op}")
        return {"<": ln < rn, ">": ln > rn, "<=": ln <= rn, ">=": ln >= rn}[expr.op]
    raise FilterError(f"bad expression {expr!r}")


def eval_filter(expr, binding: dict, builtins: Optional[dict] = None, trace: Optional[list] = None) -> bool:
    """Evaluate a filter; raises :class:`FilterError` on unbound variables or type errors."""
    value = eval_expr(expr, binding, builtins, trace)
    if not isinstance(value, bool):
        raise FilterError("filter did not evaluate to a boolean")
    return value


# engine -----------------------------------------------------------------

@dataclass
class Derivation:
    rule: Rule
    binding: dict
    head_facts: tuple
    tick: int
    builtin_values: tuple = ()
    filter_text: tuple = ()


@dataclass
class _Active:
    rule: Rule
    feedback: bool = True
    sink: Optional[Callable] = None
    stratum: int = 0


def _rule_body_predicates(rule: Rule):
    pos, neg = set(), set()
    wildcard_pos = wildcard_neg = False
    for b in rule.body.positive_blocks:
        for p in b.patterns:
            pos |= pattern_predicates(p)
            wildcard_pos |= isinstance(p.predicate, Var)
    for p in rule.body.static_patterns:
        pos |= pattern_predicates(p)
        wildcard_pos |= isinstance(p.predicate, Var)
    for b in rule.body.naf_blocks:
        for p in b.patterns:
            neg |= pattern_predicates(p)
            wildcard_neg |= isinstance(p.predicate, Var)
    return pos, neg, wildcard_pos, wildcard_neg


def _head_predicates(rule: Rule):
    out = set()
    wildcard = False
    for p in rule.head:
        if isinstance(p.predicate, Iri):
            out.add(p.predicate)
        else:
            wildcard = True
    return out, wildcard


def stratify(rules: Iterable[Rule]) -> dict:
    """Stratum per rule id; raises StreamError when negation is cyclic."""
    rules = list(rules)
    heads = {r.id: _head_predicates(r) for r in rules}
    bodies = {r.id: _rule_body_predicates(r) for r in rules}

    def depends(r, q, negative):
        # does rule r's body (positive or NAF part) read what rule q derives?
        pos, neg, wpos, wneg = bodies[r.id]
        preds, wild = heads[q.id]
        body, wb = (neg, wneg) if negative else (pos, wpos)
        if wb or wild:
            return bool(preds or wild)
        return bool(body & preds)

    stratum = {r.id: 0 for r in rules}
    for _ in range(len(rules) + 1):
        changed = False
        for r in rules:
            for q in rules:
                if depends(r, q, False) and stratum[r.id] < stratum[q.id]:
                    stratum[r.id] = stratum[q.id]
                    changed = True
                if depends(r, q, True) and stratum[r.id] < stratum[q.id] + 1:
                    stratum[r.id] = stratum[q.id] + 1
                    changed = True
            if stratum[r.id] > len(rules):
                raise StreamError(f"rule {r.id.value} is part of a cycle through negation")
        if not changed:
            return stratum
    raise StreamError("rules are not stratified: cycle through negation")


class Engine:
    """Single-threaded owner of window state; other threads use :meth:`submit`."""

    def __init__(self, static: Optional[StaticGraph] = None, same_tick_fixpoint: bool = False,
                 geometry_predicates: Optional[dict] = None, builtins: Optional[dict] = None):
        self.static = static if static is not None else StaticGraph()
        self.same_tick_fixpoint = same_tick_fixpoint
        self.streams: dict = {}  # Iri -> last timestamp seen (or None)
        self.windows: dict = {}  # (Iri, spec) -> WindowState
        self.rules: dict = {}  # rule id -> _Active
        self.sinks: list = []
        self.current_tick: Optional[int] = None
        self.diagnostics: Counter = Counter()
        self.last_derivations: list[Derivation] = []
        self.geometry_predicates = dict(GEOMETRY_PREDICATES if geometry_predicates is None else geometry_predicates)
        self.geometry: dict = {}
        self._geometry_seen: deque = deque()
        self._geometry_refs: Counter = Counter()
        self.builtins = {"iou": self._iou}
        self.builtins.update(builtins or {})
        self._mailbox: queue.SimpleQueue = queue.SimpleQueue()
        self._bnodes = 0

    # streams ------------------------------------------------------------
    def register_stream(self, stream: Iri):
        if stream in self.streams:
            raise StreamError(f"stream {stream.value} already registered")
        self.streams[stream] = None

    def push(self, stream: Iri, facts: Iterable[TimestampedFact]):
        facts = list(facts)
        if stream not in self.streams:
            raise StreamError(f"stream {stream.value} is not registered")
        last = self.streams[stream]
        for f in facts:
            if last is not None and f.timestamp < last:
                raise StreamError(f"out-of-order timestamp {f.timestamp} on {stream.value} (last {last})")
            last = f.timestamp
        self.streams[stream] = last
        windows = [w for (s, _), w in self.windows.items() if s == stream]
        for f in facts:
            for w in windows:
                w.insert(f)
            self._note_geometry(f)

    def submit(self, stream: Iri, facts: Iterable[TimestampedFact]):
        """Thread-safe push; drained at the next tick boundary."""
        self._mailbox.put((stream, list(facts)))

    def drain(self):
        while True:
            try:
                stream, facts = self._mailbox.get_nowait()
            except queue.Empty:
                return
            self.push(stream, facts)

    def _note_geometry(self, f: TimestampedFact):
        key = self.geometry_predicates.get(f.predicate)
        if key is None:
            return
        value = f.object.numeric() if isinstance(f.object, Literal) else None
        if value is None:
            return
        self.geometry.setdefault(f.subject, {})[key] = float(value)
        self._geometry_seen.append((f.timestamp, f.subject))
        self._geometry_refs[f.subject] += 1

    def _prune_geometry(self, t: int):
        horizon = max((w.span for w in self.windows.values()), default=1) + 1
        while self._geometry_seen and self._geometry_seen[0][0] <= t - horizon:
            _, subject = self._geometry_seen.popleft()
            self._geometry_refs[subject] -= 1
            if self._geometry_refs[subject] <= 0:
                del self._geometry_refs[subject]
                self.geometry.pop(subject, None)

    def box_of(self, term) -> Box:
        g = self.geometry.get(term)
        if g is None or len(g) < 4:
            g = dict(g or {})
            for pred, key in self.geometry_predicates.items():
                for s, _, o in self.static.by_predicate(pred):
                    if s == term and isinstance(o, Literal) and o.numeric() is not None:
                        g[key] = float(o.numeric())
        try:
            return Box(g["x"], g["y"], g["w"], g["h"])
        except KeyError:
            raise FilterError(f"{format_term(term) if not isinstance(term, (int, float)) else term} has no box geometry") from None
        except ValueError as exc:
            raise FilterError(str(exc)) from None

    def _iou(self, a, b) -> float:
        return box_iou(self.box_of(a), self.box_of(b))

    # rules --------------------------------------------------------------
    def add_rule(self, rule: Rule, feedback: bool = True, sink: Optional[Callable] = None):
        if rule.id in self.rules:
            raise StreamError(f"rule {rule.id.value} already active")
        for b in rule.body.blocks:
            if b.stream not in self.streams:
                raise StreamError(f"rule {rule.id.value} reads unregistered stream {b.stream.value}")
        candidate = [a.rule for a in self.rules.values()] + [rule]
        strata = stratify(candidate)
        self.rules[rule.id] = _Active(rule, feedback, sink)
        for rid, s in strata.items():
            self.rules[rid].stratum = s
        for b in rule.body.blocks:
            key = (b.stream, b.window)
            if key not in self.windows:
                w = WindowState(b.stream, b.window)
                if self.current_tick is not None:
                    w.low_watermark = self.current_tick - w.span + 1
                self.windows[key] = w

    def remove_rule(self, rule_id: Iri):
        self.rules.pop(rule_id, None)

    def add_sink(self, sink: Callable):
        self.sinks.append(sink)

    def target_stream(self, rule: Rule) -> Iri:
        if rule.body.positive_blocks:
            return rule.body.positive_blocks[0].stream
        return DEFAULT_OUTPUT

    # evaluation -----------------------------------------------------------
    def advance(self, t: int):
        if self.current_tick is not None and t < self.current_tick:
            raise StreamError(f"tick {t} is before current tick {self.current_tick}")
        if self.current_tick != t:
            for w in self.windows.values():
                w.advance(t)
            self._prune_geometry(t)
            self.current_tick = t

    def evaluate_tick(self, t: int, rules: Optional[Iterable[Iri]] = None) -> list[tuple]:
        """Evaluate active rules at tick ``t``; returns sorted (stream, fact) heads.

        Hard-rule heads go to the sinks and back into their target stream
        (visible from ``t + 1`` unless same-tick fixpoint is on). Every
        derivation, hard or soft, is kept in :attr:`last_derivations`.
        """
        self.drain()
        self.advance(t)
        wanted = None if rules is None else set(rules)
        active = sorted((a for a in self.rules.values() if wanted is None or a.rule.id in wanted),
                        key=lambda a: (a.stratum, a.rule.id.value))
        derivations: list[Derivation] = []
        emitted: dict = {}
        seen: set = set()
        strata = sorted({a.stratum for a in active})
        for s in strata:
            group = [a for a in active if a.stratum == s]
            rounds = FIXPOINT_CAP if self.same_tick_fixpoint else 1
            for _ in range(rounds):
                new = 0
                for a in group:
                    for d in self._derive(a.rule, t):
                        dkey = (a.rule.id, binding_key(d.binding))
                        if dkey in seen:
                            continue
                        seen.add(dkey)
                        derivations.append(d)
                        fresh = []
                        for fact in d.head_facts:
                            if (a.rule.id, fact) not in emitted:
                                emitted[(a.rule.id, fact)] = (self.target_stream(a.rule), fact)
                                fresh.append(fact)
                        new += len(fresh)
                        if fresh and not a.rule.is_soft and a.feedback:
                            vis = t if self.same_tick_fixpoint else t + 1
                            self._feed_back(self.target_stream(a.rule), fresh, vis)
                if not new or not self.same_tick_fixpoint:
                    break
            else:
                self.diagnostics["fixpoint_cap"] += 1
        self.last_derivations = derivations
        out = sorted(emitted.items(), key=lambda kv: (kv[0][0].value, term_key(kv[0][1].subject),
                                                      term_key(kv[0][1].predicate), term_key(kv[0][1].object),
                                                      kv[0][1].timestamp))
        result = [v for _, v in out]
        for (rid, _), (stream, fact) in out:
            active_rule = self.rules.get(rid)
            if active_rule is None or active_rule.rule.is_soft:
                continue
            if active_rule.sink is not None:
                active_rule.sink(stream, fact)
            for sink in self.sinks:
                sink(stream, fact)
        return result

    def _feed_back(self, stream: Iri, facts, visible_from: int):
        if stream not in self.streams:
            return
        for (s, _), w in self.windows.items():
            if s == stream:
                for f in facts:
                    w.insert(f, visible_from)
        for f in facts:
            self._note_geometry(f)
        last = self.streams[stream]
        top = max(f.timestamp for f in facts)
        self.streams[stream] = top if last is None else max(last, top)

    def bindings(self, rule: Rule, t: int) -> list[dict]:
        """Bindings of the rule body at tick ``t`` (after filters and NAF), sorted."""
        return [b for b, _, _ in self._bindings(rule, t)]

    def _bindings(self, rule: Rule, t: int):
        body = rule.body
        rows = [{}]
        for block in body.positive_blocks:
            found = match_block(block, self.windows[(block.stream, block.window)], {}, t)
            rows = join_bindings(rows, found) if rows != [{}] else found
            if not rows:
                return []
        if body.static_patterns:
            found = match_static(body.static_patterns, self.static, {})
            rows = join_bindings(rows, found) if rows != [{}] else found
            if not rows:
                return []
        filters = [f for b in body.positive_blocks for f in b.filters] + list(body.filters)
        kept = []
        for b in rows:
            trace: list = []
            try:
                ok = all(eval_filter(f, b, self.builtins, trace) for f in filters)
            except FilterError as exc:
                self.diagnostics["filter_error"] += 1
                log.debug("binding discarded: %s", exc)
                continue
            if ok and not self._naf_blocked(body.naf_blocks, b, t):
                kept.append((b, tuple(trace), filters))
        kept.sort(key=lambda item: binding_key(item[0]))
        return kept

    def _naf_blocked(self, naf_blocks, b: dict, t: int) -> bool:
        for nb in naf_blocks:
            for ext in match_block(nb, self.windows[(nb.stream, nb.window)], b, t):
                try:
                    if all(eval_filter(f, ext, self.builtins) for f in nb.filters):
                        return True
                except FilterError:
                    self.diagnostics["filter_error"] += 1
        return False

    def _derive(self, rule: Rule, t: int) -> list[Derivation]:
        out = []
        for b, trace, filters in self._bindings(rule, t):
            facts = []
            bnodes: dict = {}
            for p in rule.head:
                try:
                    facts.append(self._instantiate(p, b, bnodes, t))
                except (TypeError, ValueError) as exc:
                    self.diagnostics["bad_head"] += 1
                    log.debug("head instantiation failed: %s", exc)
                    facts = None
                    break
            if facts is None:
                continue
            text = tuple(_filter_instance(f, b) for f in filters)
            out.append(Derivation(rule, b, tuple(facts), t, trace, text))
        return out

    def _instantiate(self, p: TriplePattern, b: dict, bnodes: dict, t: int) -> TimestampedFact:
        def ground(x):
            if isinstance(x, BlankNode):
                if x not in bnodes:
                    self._bnodes += 1
                    bnodes[x] = BlankNode(f"{x.label}{self._bnodes}")
                return bnodes[x]
            if isinstance(x, QuotedPattern):
                return QuotedTriple(ground(x.subject), ground(x.predicate), ground(x.object))
            if isinstance(x, Var):
                if x not in b:
                    raise ValueError(f"unbound head variable {x}")
                return b[x]
            return x

        s, pr, o = ground(p.subject), ground(p.predicate), ground(p.object)
        ts = t
        if p.timestamp is not None:
            value = b.get(p.timestamp)
            num = value.numeric() if isinstance(value, Literal) else None
            if not isinstance(num, int):
                raise ValueError(f"head timestamp {p.timestamp} is not an integer")
            ts = num
        return TimestampedFact(s, pr, o, ts)


def _filter_instance(expr, b: dict) -> str:
    text = format_expr(expr)
    for v in sorted(b, key=lambda v: -len(v.name)):
        text = text.replace(str(v), format_term(b[v]))
    return text
