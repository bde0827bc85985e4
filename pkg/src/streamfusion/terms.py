"""RDF-star terms, timestamped facts and static graphs."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Iterable, Iterator, Union

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
XSD = "http://www.w3.org/2001/XMLSchema#"
SOSA = "http://www.w3.org/ns/sosa/"
SH = "http://www.w3.org/ns/shacl#"
SSR = "http://example.org/ssr/"
DEFAULT_NS = "http://example.org/stream#"

# prefixes every document sees without declaring them (mirrors prelude.ttl)
PRELUDE_PREFIXES = {
    "rdf": RDF,
    "xsd": XSD,
    "sosa": SOSA,
    "sh": SH,
    "ssr": SSR,
    "": DEFAULT_NS,
}


@dataclass(frozen=True, order=True)
class Iri:
    value: str

    def __post_init__(self):
        if not self.value:
            raise ValueError("IRI text must be non-empty")

    def __str__(self):
        return compact(self)


@dataclass(frozen=True, order=True)
class BlankNode:
    label: str

    def __str__(self):
        return f"_:{self.label}"


XSD_STRING = Iri(XSD + "string")
XSD_INTEGER = Iri(XSD + "integer")
XSD_DECIMAL = Iri(XSD + "decimal")
_DATATYPES = (XSD_STRING, XSD_INTEGER, XSD_DECIMAL)


@dataclass(frozen=True)
class Literal:
    lexical: str
    datatype: Iri = XSD_STRING

    def __post_init__(self):
        if self.datatype not in _DATATYPES:
            raise ValueError(f"unsupported datatype {self.datatype.value}")
        if self.datatype == XSD_INTEGER:
            int(self.lexical)
        elif self.datatype == XSD_DECIMAL:
            try:
                value = Decimal(self.lexical)
            except InvalidOperation:
                raise ValueError(f"invalid decimal {self.lexical!r}") from None
            if not value.is_finite():
                raise ValueError(f"non-finite decimal {self.lexical!r}")

    @classmethod
    def of(cls, value) -> "Literal":
        """Canonical literal for a Python str/int/float value."""
        if isinstance(value, bool):
            raise TypeError("booleans are not supported")
        if isinstance(value, int):
            return cls(str(value), XSD_INTEGER)
        if isinstance(value, float):
            return cls(format_decimal(value), XSD_DECIMAL)
        if isinstance(value, Decimal):
            return cls(format(value, "f"), XSD_DECIMAL)
        return cls(str(value), XSD_STRING)

    def numeric(self):
        """Numeric value, or None. String literals that lex as numbers coerce."""
        if self.datatype == XSD_INTEGER:
            return int(self.lexical)
        if self.datatype == XSD_DECIMAL:
            return float(self.lexical)
        text = self.lexical.strip()
        try:
            return int(text)
        except ValueError:
            pass
        try:
            Decimal(text)
        except InvalidOperation:
            return None
        if not text or text.lower() in ("nan", "inf", "infinity", "-inf", "+inf", "-infinity", "+infinity"):
            return None
        return float(text)

    def __str__(self):
        return format_literal(self)


@dataclass(frozen=True)
class QuotedTriple:
    subject: "Term"
    predicate: Iri
    object: "Term"

    def __post_init__(self):
        if not isinstance(self.predicate, Iri):
            raise TypeError("quoted triple predicate must be an IRI")

    @property
    def depth(self) -> int:
        inner = [t.depth for t in (self.subject, self.object) if isinstance(t, QuotedTriple)]
        return 1 + max(inner, default=0)

    def __str__(self):
        return f"<<{self.subject} {self.predicate} {self.object}>>"


Term = Union[Iri, BlankNode, Literal, QuotedTriple]

RDF_TYPE = Iri(RDF + "type")
RESULT_TIME = Iri(SOSA + "resultTime")


@dataclass(frozen=True)
class TimestampedFact:
    subject: Term
    predicate: Iri
    object: Term
    timestamp: int = 0

    def __post_init__(self):
        if not isinstance(self.predicate, Iri):
            raise TypeError("fact predicate must be an IRI")
        if self.predicate == RESULT_TIME:
            # reserved: the serialization uses it to carry the timestamp
            raise ValueError("sosa:resultTime is reserved for fact timestamps")
        if isinstance(self.subject, Literal):
            raise TypeError("fact subject cannot be a literal")
        if not isinstance(self.timestamp, int) or isinstance(self.timestamp, bool) or self.timestamp < 0:
            raise ValueError("timestamp must be a non-negative integer")

    @property
    def triple(self):
        return (self.subject, self.predicate, self.object)

    def at(self, timestamp: int) -> "TimestampedFact":
        return TimestampedFact(self.subject, self.predicate, self.object, timestamp)

    def __str__(self):
        return f"{self.subject} {self.predicate} {self.object} @{self.timestamp}"


Fact = TimestampedFact


def term_key(term) -> tuple:
    """Total order over terms, used wherever output order must be deterministic."""
    if isinstance(term, Iri):
        return (0, term.value)
    if isinstance(term, BlankNode):
        return (1, term.label)
    if isinstance(term, Literal):
        return (2, term.datatype.value, term.lexical)
    if isinstance(term, QuotedTriple):
        return (3, term_key(term.subject), term_key(term.predicate), term_key(term.object))
    raise TypeError(f"not a term: {term!r}")


def fact_key(fact: TimestampedFact) -> tuple:
    return (fact.timestamp, term_key(fact.subject), term_key(fact.predicate), term_key(fact.object))


def format_decimal(x: float) -> str:
    """Shortest positional text that parses back to exactly ``x``."""
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError("non-finite decimal")
    text = format(Decimal(repr(float(x))), "f")
    if "." not in text:
        text += ".0"
    return text


def _local_ok(local: str) -> bool:
    if not local:
        return True
    if local[0] == "." or local[-1] == "." or local[0] == "-":
        return False
    return all(c.isalnum() or c in "_-." for c in local)


def compact(iri: Iri, prefixes=None) -> str:
    prefixes = PRELUDE_PREFIXES if prefixes is None else prefixes
    best = None
    for name, ns in prefixes.items():
        if iri.value.startswith(ns):
            local = iri.value[len(ns):]
            if _local_ok(local) and (best is None or len(ns) > len(prefixes[best[0]])):
                best = (name, local)
    if best is None:
        return f"<{iri.value}>"
    if best == ("rdf", "type"):
        return "a"
    return f"{best[0]}:{best[1]}"


def format_literal(lit: Literal) -> str:
    if lit.datatype == XSD_STRING:
        escaped = lit.lexical.replace("\\", "\\\\").replace("'", "\\'")
        escaped = escaped.replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t")
        return f"'{escaped}'"
    return lit.lexical


def format_term(term, prefixes=None) -> str:
    if isinstance(term, Iri):
        text = compact(term, prefixes)
        return "rdf:type" if text == "a" else text
    if isinstance(term, BlankNode):
        return f"_:{term.label}"
    if isinstance(term, Literal):
        return format_literal(term)
    if isinstance(term, QuotedTriple):
        return "<<{} {} {}>>".format(
            format_term(term.subject, prefixes),
            format_predicate(term.predicate, prefixes),
            format_term(term.object, prefixes),
        )
    raise TypeError(f"not a term: {term!r}")


def format_predicate(iri: Iri, prefixes=None) -> str:
    return compact(iri, prefixes)


def iri(text: str, prefixes=None) -> Iri:
    """Expand a prefixed name (``sosa:resultTime``, ``:b1``) or wrap a full IRI."""
    prefixes = PRELUDE_PREFIXES if prefixes is None else prefixes
    if text.startswith("<") and text.endswith(">"):
        return Iri(text[1:-1])
    if text == "a":
        return RDF_TYPE
    prefix, sep, local = text.partition(":")
    if sep and prefix in prefixes and "//" not in text:
        return Iri(prefixes[prefix] + local)
    return Iri(text)


class StaticGraph:
    """Timestamp-free background triples with set semantics."""

    def __init__(self, triples: Iterable = ()):
        self._triples = set()
        self._by_predicate = {}
        for t in triples:
            self.insert(t)

    def insert(self, triple) -> "StaticGraph":
        s, p, o = triple
        if not isinstance(p, Iri):
            raise TypeError("predicate must be an IRI")
        if (s, p, o) not in self._triples:
            self._triples.add((s, p, o))
            self._by_predicate.setdefault(p, []).append((s, p, o))
        return self

    def contains(self, triple) -> bool:
        return tuple(triple) in self._triples

    __contains__ = contains

    def by_predicate(self, predicate=None):
        if predicate is None:
            return list(self._triples)
        return self._by_predicate.get(predicate, ())

    def __len__(self):
        return len(self._triples)

    def __iter__(self) -> Iterator:
        return iter(sorted(self._triples, key=lambda t: tuple(term_key(x) for x in t)))


def graph_insert(graph: StaticGraph, triple) -> StaticGraph:
    return graph.insert(triple)


def graph_contains(graph: StaticGraph, triple) -> bool:
    return graph.contains(triple)
