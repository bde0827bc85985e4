"""Parser for SHACL-wrapped construct rules with STREAM/NAF blocks."""
from __future__ import annotations

import math
import re
from importlib import resources

from ..lexer import ParseError, TokenStream, tokenize
from ..terms import (
    PRELUDE_PREFIXES, SH, XSD_DECIMAL, XSD_INTEGER,
    BlankNode, Iri, Literal, QuotedTriple,
)
from ..turtle import expand_pname, read_directive, read_iri
from .ast import (
    ARITHMETIC, BUILTINS, COMPARISONS, HARD, NOW, SOFT,
    BinOp, BodySpec, Call, Const, QuotedPattern, Range, Rule, StreamBlock,
    TermConst, TriplePattern, Var,
)

DEFAULT_SOFT_PATTERN = "_w_"
SH_RULE = Iri(SH + "rule")
SH_CONSTRUCT = Iri(SH + "construct")
SH_PREFIXES = Iri(SH + "prefixes")


class RuleError(ValueError):
    """A rule that parses but is semantically unusable (e.g. unsafe head)."""


def prelude_text() -> str:
    return resources.files("streamfusion").joinpath("data/prelude.ttl").read_text()


def resolve_iriref(value: str, prefixes) -> Iri:
    # `<ssr:FoV>` and `<:ssr>` are prefixed names written in angle brackets
    prefix, sep, local = value.partition(":")
    if sep and "//" not in value and prefix in prefixes:
        return Iri(prefixes[prefix] + local)
    if not value:
        raise ValueError("empty IRI")
    return Iri(value)


class QueryParser:
    def __init__(self, text: str, prefixes, line_offset: int = 0, tick_seconds: float = 1.0):
        self.ts = TokenStream(tokenize(text, line_offset))
        self.prefixes = prefixes
        self.tick_seconds = tick_seconds
        self.in_head = False

    # terms ------------------------------------------------------------
    def iri(self) -> Iri:
        tok = self.ts.peek()
        if tok.kind == "IRIREF":
            self.ts.next()
            try:
                return resolve_iriref(tok.value, self.prefixes)
            except ValueError as exc:
                raise ParseError(str(exc), tok.line, tok.column) from None
        return read_iri(self.ts, self.prefixes)

    def verb(self):
        tok = self.ts.peek()
        if tok.kind == "VAR":
            self.ts.next()
            return Var(tok.value)
        return self.iri()

    def term(self, allow_literal=True, depth=1):
        ts = self.ts
        tok = ts.peek()
        if tok.kind == "VAR":
            ts.next()
            return Var(tok.value)
        if tok.kind == "PUNCT" and tok.text == "<<":
            return self.quoted(depth)
        if tok.kind in ("IRIREF", "PNAME") or (tok.kind == "WORD" and tok.text == "a"):
            return self.iri()
        if tok.kind == "BNODE":
            if not self.in_head:
                ts.error("blank nodes are only allowed in construct templates")
            ts.next()
            return BlankNode(tok.value)
        if allow_literal:
            if tok.kind == "STRING":
                ts.next()
                return Literal(tok.value)
            neg = False
            if tok.kind == "PUNCT" and tok.text in "+-" and ts.peek(1).kind in ("INTEGER", "DECIMAL"):
                neg = ts.next().text == "-"
                tok = ts.peek()
            if tok.kind in ("INTEGER", "DECIMAL"):
                ts.next()
                return _number(tok.text, tok.kind, neg)
        ts.error(f"expected term, found {tok.text or tok.kind!r}")

    def quoted(self, depth) -> QuotedPattern:
        start = self.ts.expect("PUNCT", "<<")
        if depth > 2:
            raise ParseError("quoted triples nested deeper than 2 levels", start.line, start.column)
        s = self.term(allow_literal=False, depth=depth + 1)
        p = self.verb()
        o = self.term(depth=depth + 1)
        self.ts.expect("PUNCT", ">>")
        if any(isinstance(x, (Var, QuotedPattern)) for x in (s, p, o)):
            return QuotedPattern(s, p, o)
        return QuotedTriple(s, p, o)

    # triple groups ----------------------------------------------------
    def triples(self, stop) -> list[TriplePattern]:
        """Patterns up to (not including) a token satisfying ``stop``."""
        ts = self.ts
        out = []
        while not stop():
            out.extend(self.same_subject())
            if not ts.accept("PUNCT", "."):
                if not stop():
                    ts.error(f"expected '.', found {ts.peek().text or ts.peek().kind!r}")
        return out

    def same_subject(self) -> list[TriplePattern]:
        ts = self.ts
        subject = self.term(allow_literal=False)
        out = []
        if isinstance(subject, (QuotedPattern, QuotedTriple)):
            stamped = False
            if ts.accept("PUNCT", "@"):
                out.append(self._occurrence(subject, self._var()))
                stamped = True
            if ts.accept("PUNCT", ";"):
                if self._at_verb():
                    out.extend(self.predicate_objects(subject))
            elif self._at_verb():
                out.extend(self.predicate_objects(subject))
            elif not stamped:
                out.append(self._occurrence(subject, None))
            return out
        return self.predicate_objects(subject)

    def _occurrence(self, q, ts_var):
        return TriplePattern(q.subject, q.predicate, q.object, ts_var, quoted=True)

    def _var(self) -> Var:
        return Var(self.ts.expect("VAR").value)

    def _at_verb(self):
        tok = self.ts.peek()
        return tok.kind in ("VAR", "IRIREF", "PNAME") or (tok.kind == "WORD" and tok.text == "a")

    def predicate_objects(self, subject) -> list[TriplePattern]:
        ts = self.ts
        out = []
        while True:
            pred = self.verb()
            while True:
                obj = self.term()
                stamp = self._var() if ts.accept("PUNCT", "@") else None
                out.append(TriplePattern(subject, pred, obj, stamp))
                if not ts.accept("PUNCT", ","):
                    break
            if ts.accept("PUNCT", ";"):
                while ts.accept("PUNCT", ";"):
                    pass
                if self._at_verb():
                    continue
            return out

    # filters ------------------------------------------------------------
    def filter(self):
        ts = self.ts
        ts.expect("WORD", "FILTER")
        if ts.accept("PUNCT", "("):
            close = ")"
        elif ts.accept("PUNCT", "{"):
            close = "}"
        else:
            ts.error("expected '(' or '{' after FILTER")
        expr = self.expr()
        ts.expect("PUNCT", close)
        return expr

    def expr(self):
        left = self.comparison()
        while self.ts.accept("PUNCT", "&&"):
            left = BinOp("&&", left, self.comparison())
        return left

    def comparison(self):
        left = self.additive()
        tok = self.ts.peek()
        if tok.kind == "PUNCT" and tok.text in COMPARISONS:
            self.ts.next()
            return BinOp(tok.text, left, self.additive())
        return left

    def additive(self):
        left = self.unary()
        while True:
            tok = self.ts.peek()
            if tok.kind == "PUNCT" and tok.text in ARITHMETIC:
                self.ts.next()
                left = BinOp(tok.text, left, self.unary())
            else:
                return left

    def unary(self):
        ts = self.ts
        tok = ts.peek()
        if tok.kind == "PUNCT" and tok.text == "-" and ts.peek(1).kind in ("INTEGER", "DECIMAL"):
            ts.next()
            num = ts.next()
            return Const(_number(num.text, num.kind, True))
        if tok.kind == "PUNCT" and tok.text == "(":
            ts.next()
            inner = self.expr()
            ts.expect("PUNCT", ")")
            return inner
        if tok.kind == "VAR":
            ts.next()
            return Var(tok.value)
        if tok.kind in ("INTEGER", "DECIMAL"):
            ts.next()
            return Const(_number(tok.text, tok.kind, False))
        if tok.kind == "STRING":
            ts.next()
            return Const(Literal(tok.value))
        if tok.kind == "WORD" and ts.at("PUNCT", "(", 1):
            name = tok.text.lower()
            if name not in BUILTINS:
                raise ParseError(f"unknown builtin {tok.text!r}", tok.line, tok.column)
            ts.next()
            ts.next()
            args = [self.expr()]
            while ts.accept("PUNCT", ","):
                args.append(self.expr())
            ts.expect("PUNCT", ")")
            if len(args) != BUILTINS[name]:
                raise ParseError(f"{name} takes {BUILTINS[name]} arguments", tok.line, tok.column)
            return Call(name, tuple(args))
        if tok.kind in ("IRIREF", "PNAME"):
            return TermConst(self.iri())
        ts.error(f"unexpected {tok.text or tok.kind!r} in expression")

    # query --------------------------------------------------------------
    def query(self):
        ts = self.ts
        ts.expect("WORD", "CONSTRUCT")
        ts.expect("PUNCT", "{")
        self.in_head = True
        head = self.triples(lambda: ts.at("PUNCT", "}"))
        self.in_head = False
        ts.expect("PUNCT", "}")
        ts.expect("WORD", "WHERE")
        ts.expect("PUNCT", "{")
        positive, naf, filters, static = [], [], [], []
        while not ts.at("PUNCT", "}"):
            if ts.at("WORD", "STREAM"):
                positive.append(self.stream_block())
            elif ts.at("WORD", "NAF"):
                ts.next()
                naf.append(self.stream_block())
            elif ts.at("WORD", "FILTER"):
                filters.append(self.filter())
            elif ts.at("EOF"):
                ts.error("unterminated WHERE clause")
            else:
                static.extend(self.same_subject())
                ts.accept("PUNCT", ".")
            ts.accept("PUNCT", ".")
        ts.expect("PUNCT", "}")
        ts.expect("EOF")
        if not positive and not static:
            ts.error("rule body needs a positive stream block or a static pattern")
        return tuple(head), BodySpec(tuple(positive), tuple(naf), tuple(filters), tuple(static))

    def stream_block(self) -> StreamBlock:
        ts = self.ts
        ts.expect("WORD", "STREAM")
        stream = self.iri()
        stamp = self._var() if ts.accept("PUNCT", "@") else None
        window = NOW
        if ts.accept("WORD", "window"):
            ts.expect("PUNCT", "[")
            tok = ts.next()
            if tok.kind not in ("INTEGER", "DECIMAL"):
                raise ParseError("window size must be a number", tok.line, tok.column)
            ts.expect("WORD", "sec")
            ts.expect("PUNCT", "]")
            seconds = float(tok.text)
            if seconds <= 0:
                raise ParseError("window size must be positive", tok.line, tok.column)
            window = Range(max(1, math.ceil(seconds / self.tick_seconds - 1e-9)))
        ts.expect("PUNCT", "{")
        patterns = self.triples(lambda: ts.at("PUNCT", "}") or ts.at("WORD", "FILTER"))
        filters = []
        while ts.at("WORD", "FILTER"):
            filters.append(self.filter())
            ts.accept("PUNCT", ".")
        ts.expect("PUNCT", "}")
        if not patterns:
            ts.error("stream block needs at least one pattern")
        return StreamBlock(stream, window, stamp, tuple(patterns), tuple(filters))


def _number(text, kind, negative) -> Literal:
    text = ("-" if negative else "") + text
    if kind == "INTEGER":
        return Literal(str(int(text)), XSD_INTEGER)
    return Literal(text, XSD_DECIMAL)


def parse_query(text: str, rule_id: Iri, prefixes=None, soft_pattern: str = DEFAULT_SOFT_PATTERN,
                tick_seconds: float = 1.0, line_offset: int = 0, check: bool = True) -> Rule:
    prefixes = dict(PRELUDE_PREFIXES if prefixes is None else prefixes)
    head, body = QueryParser(text, prefixes, line_offset, tick_seconds).query()
    kind = SOFT if re.search(soft_pattern, rule_id.value) else HARD
    rule = Rule(rule_id, kind, head, body, tuple(sorted(prefixes.items())))
    if check:
        from .analysis import analyze_rule
        report = analyze_rule(rule)
        if not report.safe:
            names = ", ".join(str(v) for v in report.unsafe)
            raise RuleError(f"unsafe rule {rule_id.value}: head variable(s) {names} not bound by a positive pattern")
    return rule


def parse_rule_document(text: str, prefixes=None, soft_pattern: str = DEFAULT_SOFT_PATTERN,
                        tick_seconds: float = 1.0, check: bool = True) -> list[Rule]:
    """Parse ``sh:NodeShape`` wrappers whose ``sh:construct`` holds a query."""
    prefixes = dict(PRELUDE_PREFIXES if prefixes is None else prefixes)
    ts = TokenStream(tokenize(text))
    rules = []
    while not ts.at("EOF"):
        if read_directive(ts, prefixes):
            continue
        rule_id = read_iri(ts, prefixes)
        constructs = []
        _wrapper_props(ts, prefixes, constructs, top=True)
        if not constructs:
            raise ParseError(f"{rule_id.value} has no sh:construct", ts.peek().line, ts.peek().column)
        for tok in constructs:
            rules.append(parse_query(tok.value, rule_id, prefixes, soft_pattern, tick_seconds,
                                     line_offset=tok.line - 1, check=check))
    return rules


def _at_new_subject(ts) -> bool:
    return ts.peek().kind in ("IRIREF", "PNAME") and ts.at("WORD", "a", 1)


def _wrapper_props(ts, prefixes, constructs, top):
    while True:
        pred = read_iri(ts, prefixes)
        while True:
            _wrapper_object(ts, prefixes, pred, constructs)
            if not ts.accept("PUNCT", ","):
                break
        if ts.accept("PUNCT", ";"):
            while ts.accept("PUNCT", ";"):
                pass
            if ts.at("EOF") or (top and _at_new_subject(ts)):
                return
            if ts.at("PUNCT", ".") or ts.at("PUNCT", "]"):
                break
            continue
        break
    if top:
        if not ts.at("EOF"):
            ts.expect("PUNCT", ".")


def _wrapper_object(ts, prefixes, pred, constructs):
    tok = ts.peek()
    if tok.kind == "PUNCT" and tok.text == "[":
        ts.next()
        if not ts.at("PUNCT", "]"):
            _wrapper_props(ts, prefixes, constructs, top=False)
        ts.expect("PUNCT", "]")
        return
    if tok.kind == "STRING":
        ts.next()
        if pred == SH_CONSTRUCT:
            constructs.append(tok)
        return
    if tok.kind == "PNAME":
        ts.next()
        if pred != SH_PREFIXES:
            expand_pname(tok, prefixes)
        return
    if tok.kind in ("IRIREF", "INTEGER", "DECIMAL") or (tok.kind == "WORD" and tok.text == "a"):
        ts.next()
        return
    ts.error(f"unexpected {tok.text or tok.kind!r} in rule wrapper")
