from __future__ import annotations

import dataclasses

from ..terms import Iri, QuotedTriple, compact, format_literal, format_term
from .ast import (
    BinOp, Call, Const, QuotedPattern, Range, Rule, StreamBlock, TermConst, TriplePattern, Var,
)


def _term(t) -> str:
    if isinstance(t, Var):
        return str(t)
    if isinstance(t, (QuotedPattern, QuotedTriple)):
        return f"<<{_term(t.subject)} {_pred(t.predicate)} {_term(t.object)}>>"
    return format_term(t)


def _pred(p) -> str:
    if isinstance(p, Var):
        return str(p)
    return compact(p)


def format_pattern(p: TriplePattern) -> str:
    stamp = f" @ {p.timestamp}" if p.timestamp is not None else ""
    if p.quoted:
        return f"<<{_term(p.subject)} {_pred(p.predicate)} {_term(p.object)}>>{stamp} ."
    return f"{_term(p.subject)} {_pred(p.predicate)} {_term(p.object)}{stamp} ."


def format_expr(e) -> str:
    if isinstance(e, Var):
        return str(e)
    if isinstance(e, Const):
        return format_literal(e.value)
    if isinstance(e, TermConst):
        return format_term(e.value)
    if isinstance(e, Call):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, BinOp):
        return f"({format_expr(e.left)} {e.op} {format_expr(e.right)})"
    raise TypeError(f"not an expression: {e!r}")


def _seconds(ticks: int, tick_seconds: float) -> str:
    s = ticks * tick_seconds
    return str(int(s)) if float(s).is_integer() else repr(s)


def _stream_iri(i: Iri) -> str:
    text = compact(i)
    if text == "a":
        text = "rdf:type"
    return text if text.startswith("<") else f"<{text}>"


def format_block(b: StreamBlock, indent: str, naf: bool = False, tick_seconds: float = 1.0) -> list[str]:
    header = ("NAF " if naf else "") + "STREAM " + _stream_iri(b.stream)
    if b.timestamp is not None:
        header += f" @{b.timestamp}"
    if isinstance(b.window, Range):
        header += f" window[{_seconds(b.window.ticks, tick_seconds)} sec]"
    lines = [indent + header + " {"]
    lines += [indent + "  " + format_pattern(p) for p in b.patterns]
    lines += [indent + "  FILTER " + _filter_body(f) for f in b.filters]
    lines.append(indent + "}")
    return lines


def _filter_body(f) -> str:
    text = format_expr(f)
    return text if text.startswith("(") else f"({text})"


def format_query(rule: Rule, tick_seconds: float = 1.0) -> str:
    lines = ["CONSTRUCT {"]
    lines += ["  " + format_pattern(p) for p in rule.head]
    lines.append("}")
    lines.append("WHERE {")
    for b in rule.body.positive_blocks:
        lines += format_block(b, "  ", tick_seconds=tick_seconds)
    for b in rule.body.naf_blocks:
        lines += format_block(b, "  ", naf=True, tick_seconds=tick_seconds)
    lines += ["  " + format_pattern(p) for p in rule.body.static_patterns]
    lines += ["  FILTER " + _filter_body(f) for f in rule.body.filters]
    lines.append("}")
    return "\n".join(lines)


def _rule_iri(i: Iri) -> str:
    text = compact(i)
    return "rdf:type" if text == "a" else text


def pretty_print(rule: Rule, tick_seconds: float = 1.0) -> str:
    """Normal-form rule document; parsing it gives back an equal rule."""
    query = format_query(rule, tick_seconds)
    body = "\n".join("    " + line for line in query.splitlines())
    return (
        f"{_rule_iri(rule.id)} a sh:NodeShape ;\n"
        "  sh:rule [\n"
        "    a sh:CQELSRule ;\n"
        f'    sh:construct """\n{body}\n    """ ;\n'
        "  ] .\n"
    )


__all__ = ["pretty_print", "format_query", "format_pattern", "format_expr", "format_block"]


def _leaf(v) -> str:
    if isinstance(v, (Var, QuotedPattern, QuotedTriple)):
        return _term(v)
    if isinstance(v, Iri):
        return compact(v)
    if isinstance(v, (Const, TermConst)):
        return format_expr(v)
    return format_term(v) if hasattr(v, "lexical") else str(v)


def dump_ast(rule: Rule) -> str:
    """Indented field-by-field tree of a rule, one node per line."""
    lines = []

    def walk(label, v, depth):
        pad = "  " * depth
        if isinstance(v, tuple):
            lines.append(f"{pad}{label}: [{len(v)}]")
            for i, x in enumerate(v):
                walk(str(i), x, depth + 1)
        elif dataclasses.is_dataclass(v) and not isinstance(v, (Var, QuotedPattern, QuotedTriple, Iri, Const,
                                                                   TermConst)) and not hasattr(v, "lexical"):
            lines.append(f"{pad}{label}: {type(v).__name__}")
            for f in dataclasses.fields(v):
                if f.name != "prefixes":
                    walk(f.name, getattr(v, f.name), depth + 1)
        else:
            lines.append(f"{pad}{label}: {_leaf(v)}")

    walk("rule", rule, 0)
    return "\n".join(lines) + "\n"
