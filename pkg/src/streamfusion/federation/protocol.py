"""Line-delimited text frames exchanged between federation nodes.

    HELLO node
    ADVERTISE stream pred,pred,...
    SUB id <base64 rule document>
    FACT id tick <one-line fact>
    UNSUB id
    ERR id reason
    ACK id
    TICK id tick count

``ACK`` confirms a SUB or UNSUB. ``TICK`` closes a tick for one subscription
and carries the number of FACT frames sent for it, so the receiver can audit
delivery.
"""
from __future__ import annotations

import base64
import binascii
from dataclasses import dataclass

from ..lexer import ParseError
from ..terms import Iri, TimestampedFact
from ..turtle import parse_fact_document, serialize_fact


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Hello:
    node: str


@dataclass(frozen=True)
class Advertise:
    stream: Iri
    predicates: frozenset


@dataclass(frozen=True)
class Sub:
    sid: int
    text: str


@dataclass(frozen=True)
class Fact:
    sid: int
    tick: int
    fact: TimestampedFact


@dataclass(frozen=True)
class Unsub:
    sid: int


@dataclass(frozen=True)
class Err:
    sid: int
    reason: str


@dataclass(frozen=True)
class Ack:
    sid: int


@dataclass(frozen=True)
class Tick:
    sid: int
    tick: int
    count: int


def _iri_text(i: Iri) -> str:
    if any(c in i.value for c in " ,\n\t"):
        raise ProtocolError(f"IRI {i.value!r} cannot be framed")
    return i.value


def encode(frame) -> str:
    if isinstance(frame, Hello):
        return f"HELLO {frame.node}"
    if isinstance(frame, Advertise):
        preds = ",".join(sorted(_iri_text(p) for p in frame.predicates)) or "-"
        return f"ADVERTISE {_iri_text(frame.stream)} {preds}"
    if isinstance(frame, Sub):
        if not frame.text:
            raise ProtocolError("SUB needs a non-empty rule document")
        return f"SUB {frame.sid} {base64.b64encode(frame.text.encode()).decode()}"
    if isinstance(frame, Fact):
        return f"FACT {frame.sid} {frame.tick} {serialize_fact(frame.fact)}"
    if isinstance(frame, Unsub):
        return f"UNSUB {frame.sid}"
    if isinstance(frame, Err):
        return f"ERR {frame.sid} {' '.join(frame.reason.split())}"
    if isinstance(frame, Ack):
        return f"ACK {frame.sid}"
    if isinstance(frame, Tick):
        return f"TICK {frame.sid} {frame.tick} {frame.count}"
    raise ProtocolError(f"not a frame: {frame!r}")


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ProtocolError(f"bad {what} {text!r}") from None


def decode(line: str):
    line = line.rstrip("\r\n")
    kind, _, rest = line.partition(" ")
    if kind == "HELLO" and rest:
        return Hello(rest.strip())
    if kind == "ADVERTISE":
        parts = rest.split()
        if len(parts) != 2:
            raise ProtocolError("ADVERTISE needs a stream and a predicate list")
        preds = frozenset() if parts[1] == "-" else frozenset(Iri(p) for p in parts[1].split(","))
        return Advertise(Iri(parts[0]), preds)
    if kind == "SUB":
        parts = rest.split()
        if len(parts) != 2:
            raise ProtocolError("SUB needs an id and a payload")
        try:
            text = base64.b64decode(parts[1], validate=True).decode()
        except (binascii.Error, UnicodeDecodeError):
            raise ProtocolError("SUB payload is not base64 text") from None
        return Sub(_int(parts[0], "subscription id"), text)
    if kind == "FACT":
        parts = rest.split(" ", 2)
        if len(parts) != 3:
            raise ProtocolError("FACT needs id, tick and a fact")
        try:
            facts = parse_fact_document(parts[2])
        except ParseError as exc:
            raise ProtocolError(f"bad fact: {exc}") from None
        if len(facts) != 1:
            raise ProtocolError("FACT must carry exactly one fact")
        return Fact(_int(parts[0], "subscription id"), _int(parts[1], "tick"), facts[0])
    if kind in ("UNSUB", "ACK"):
        sid = _int(rest.strip(), "subscription id")
        return Unsub(sid) if kind == "UNSUB" else Ack(sid)
    if kind == "ERR":
        sid, _, reason = rest.partition(" ")
        return Err(_int(sid, "subscription id"), reason)
    if kind == "TICK":
        parts = rest.split()
        if len(parts) != 3:
            raise ProtocolError("TICK needs id, tick and count")
        return Tick(*(_int(p, "TICK field") for p in parts))
    raise ProtocolError(f"unknown frame {line[:40]!r}")
