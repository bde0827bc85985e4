"""Turtle-star subset used for fact streams.

Each statement group (one subject, ``;``-separated predicate lists, ``.``
terminated) becomes a run of :class:`TimestampedFact`. A ``sosa:resultTime N``
entry is not a fact: it stamps every fact in its group.
"""
from __future__ import annotations

from typing import Iterable

from .lexer import ParseError, TokenStream, tokenize
from .terms import (
    PRELUDE_PREFIXES, RDF_TYPE, RESULT_TIME, XSD_DECIMAL, XSD_INTEGER,
    BlankNode, Iri, Literal, QuotedTriple, TimestampedFact,
    format_predicate, format_term,
)

MAX_QUOTE_DEPTH = 2


def expand_pname(tok, prefixes) -> Iri:
    prefix, _, local = tok.text.partition(":")
    if prefix not in prefixes:
        raise ParseError(f"unknown prefix {prefix + ':'!r}", tok.line, tok.column)
    return Iri(prefixes[prefix] + local)


def read_iri(ts: TokenStream, prefixes) -> Iri:
    tok = ts.peek()
    if tok.kind == "IRIREF":
        ts.next()
        return Iri(tok.value) if tok.value else ts.error("empty IRI")
    if tok.kind == "PNAME":
        ts.next()
        return expand_pname(tok, prefixes)
    if tok.kind == "WORD" and tok.text == "a":
        ts.next()
        return RDF_TYPE
    ts.error(f"expected IRI, found {tok.text or tok.kind!r}")


def read_directive(ts: TokenStream, prefixes: dict) -> bool:
    """Consume ``@prefix p: <ns> .`` or ``PREFIX p: <ns>``; True if one was read."""
    if ts.at("PUNCT", "@") and ts.at("WORD", "prefix", 1):
        ts.next()
        ts.next()
        dotted = True
    elif ts.at("WORD", "PREFIX") and ts.at("PNAME", None, 1):
        ts.next()
        dotted = False
    else:
        return False
    name = ts.expect("PNAME")
    prefix, _, local = name.text.partition(":")
    if local:
        ts.error("prefix name must end with ':'")
    ns = ts.expect("IRIREF")
    prefixes[prefix] = ns.value
    if dotted:
        ts.expect("PUNCT", ".")
    return True


class _FactParser:
    def __init__(self, text: str, prefixes=None, default_tick: int = 0):
        self.ts = TokenStream(tokenize(text))
        self.prefixes = dict(PRELUDE_PREFIXES if prefixes is None else prefixes)
        self.default_tick = default_tick

    def document(self) -> list[TimestampedFact]:
        facts = []
        ts = self.ts
        while not ts.at("EOF"):
            if read_directive(ts, self.prefixes):
                continue
            facts.extend(self.statement())
        return facts

    def statement(self):
        ts = self.ts
        subject = self.subject()
        pairs = []
        stamp = None
        while True:
            tok = ts.peek()
            pred = read_iri(ts, self.prefixes)
            while True:
                obj_tok = ts.peek()
                obj = self.object()
                if pred == RESULT_TIME:
                    if not (isinstance(obj, Literal) and obj.datatype == XSD_INTEGER) or int(obj.lexical) < 0:
                        raise ParseError("sosa:resultTime needs a non-negative integer", obj_tok.line, obj_tok.column)
                    if stamp is not None and stamp != int(obj.lexical):
                        raise ParseError("conflicting sosa:resultTime", obj_tok.line, obj_tok.column)
                    stamp = int(obj.lexical)
                else:
                    pairs.append((pred, obj, tok))
                if not ts.accept("PUNCT", ","):
                    break
            if ts.accept("PUNCT", ";"):
                while ts.accept("PUNCT", ";"):
                    pass
                if ts.at("PUNCT", "."):
                    break
                continue
            break
        end = ts.expect("PUNCT", ".")
        if not pairs:
            raise ParseError("statement has no triple besides sosa:resultTime", end.line, end.column)
        tick = self.default_tick if stamp is None else stamp
        out = []
        for pred, obj, tok in pairs:
            try:
                out.append(TimestampedFact(subject, pred, obj, tick))
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), tok.line, tok.column) from None
        return out

    def subject(self):
        tok = self.ts.peek()
        if tok.kind == "PUNCT" and tok.text == "<<":
            return self.quoted(1)
        if tok.kind == "BNODE":
            self.ts.next()
            return BlankNode(tok.value)
        if tok.kind in ("IRIREF", "PNAME"):
            return read_iri(self.ts, self.prefixes)
        self.ts.error(f"expected subject, found {tok.text or tok.kind!r}")

    def quoted(self, depth: int) -> QuotedTriple:
        start = self.ts.expect("PUNCT", "<<")
        if depth > MAX_QUOTE_DEPTH:
            raise ParseError(f"quoted triples nested deeper than {MAX_QUOTE_DEPTH} levels", start.line, start.column)
        s = self.quoted_part(depth)
        if isinstance(s, Literal):
            raise ParseError("literal in subject position", start.line, start.column)
        p = read_iri(self.ts, self.prefixes)
        o = self.quoted_part(depth)
        self.ts.expect("PUNCT", ">>")
        return QuotedTriple(s, p, o)

    def quoted_part(self, depth):
        if self.ts.at("PUNCT", "<<"):
            return self.quoted(depth + 1)
        return self.object(allow_quoted=False)

    def object(self, allow_quoted=True):
        ts = self.ts
        tok = ts.peek()
        if tok.kind == "PUNCT" and tok.text == "<<" and allow_quoted:
            return self.quoted(1)
        if tok.kind == "BNODE":
            ts.next()
            return BlankNode(tok.value)
        if tok.kind == "STRING":
            ts.next()
            return Literal(tok.value)
        if tok.kind == "PUNCT" and tok.text in "+-" and ts.peek(1).kind in ("INTEGER", "DECIMAL"):
            ts.next()
            num = ts.next()
            return _number(num, negative=tok.text == "-")
        if tok.kind in ("INTEGER", "DECIMAL"):
            ts.next()
            return _number(tok)
        if tok.kind in ("IRIREF", "PNAME") or (tok.kind == "WORD" and tok.text == "a"):
            return read_iri(ts, self.prefixes)
        ts.error(f"expected term, found {tok.text or tok.kind!r}")


def _number(tok, negative=False) -> Literal:
    text = ("-" if negative else "") + tok.text
    if tok.kind == "INTEGER":
        return Literal(str(int(text)), XSD_INTEGER)
    return Literal(text, XSD_DECIMAL)


def parse_fact_document(text: str, prefixes=None, default_tick: int = 0) -> list[TimestampedFact]:
    """Parse a fact document into facts, in document order."""
    return _FactParser(text, prefixes, default_tick).document()


def serialize_fact(fact: TimestampedFact, prefixes=None) -> str:
    """One-line statement that parses back to exactly ``fact``."""
    return "{} {} {}; {} {}.".format(
        format_term(fact.subject, prefixes),
        format_predicate(fact.predicate, prefixes),
        format_term(fact.object, prefixes),
        format_predicate(RESULT_TIME, prefixes),
        fact.timestamp,
    )


def serialize_facts(facts: Iterable[TimestampedFact], prefixes=None) -> str:
    return "".join(serialize_fact(f, prefixes) + "\n" for f in facts)
