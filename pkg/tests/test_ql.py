from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_rule
from streamfusion.lexer import ParseError
from streamfusion.ql.analysis import analyze_rule
from streamfusion.ql.ast import HARD, NOW, SOFT, Range, Var, conjuncts
from streamfusion.ql.parser import RuleError, parse_query, parse_rule_document
from streamfusion.ql.printer import dump_ast, pretty_print
from streamfusion.terms import SSR, Iri

FIX = Path(__file__).parent / "fixtures"
RULE_FILES = ["rule_enters.ttl", "rule_iou.ttl", "rule_reid.ttl", "rule_reid_split.ttl"]


def wrap(query, rule_id="ssr:rule_x"):
    return f'{rule_id} a sh:NodeShape ; sh:rule [ a sh:CQELSRule ; sh:construct """{query}""" ] .'


def q(body, head="?X :out ?Y ."):
    return parse_query(f"CONSTRUCT {{ {head} }} WHERE {{ {body} }}", Iri(SSR + "rule_x"))


@pytest.mark.parametrize("name", RULE_FILES)
def test_rule_file_pretty_print_round_trip(name):
    rules = parse_rule_document((FIX / name).read_text())
    again = parse_rule_document("".join(pretty_print(r) for r in rules))
    assert again == rules


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_generated_rules_round_trip(seed):
    text = random_rule(np.random.default_rng(seed), [":s1", ":s2"], "r1")
    rule = parse_rule_document(text)[0]
    printed = pretty_print(rule)
    assert parse_rule_document(printed)[0] == rule
    assert pretty_print(parse_rule_document(printed)[0]) == printed


@pytest.mark.parametrize("rule_id, kind", [
    ("ssr:rule_w_1", SOFT),
    ("ssr:rule_1", HARD),
    ("<http://x.org/r_w_>", SOFT),
])
def test_soft_rule_naming(rule_id, kind):
    text = wrap("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> { ?X :p ?Y . } }", rule_id)
    assert parse_rule_document(text)[0].kind == kind


def test_soft_pattern_configurable():
    text = wrap("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> { ?X :p ?Y . } }", "ssr:soft_one")
    assert parse_rule_document(text, soft_pattern="soft_")[0].kind == SOFT


@pytest.mark.parametrize("window, tick_seconds, expected", [
    ("", 1.0, NOW),
    ("window[5 sec]", 1.0, Range(5)),
    ("window[5 sec]", 0.5, Range(10)),
    ("window[1 sec]", 1.0, Range(1)),
])
def test_window_specs(window, tick_seconds, expected):
    text = f"CONSTRUCT {{ ?X :o ?Y . }} WHERE {{ STREAM <:s> {window} {{ ?X :p ?Y . }} }}"
    rule = parse_query(text, Iri(SSR + "r"), tick_seconds=tick_seconds)
    assert rule.body.positive_blocks[0].window == expected


def test_filter_precedence():
    rule = q("STREAM <:s> { ?X :p ?Y . ?Y :v ?S . FILTER (?S > 1 + 2 - 3 && ?S <= 10) }")
    (f,) = rule.body.positive_blocks[0].filters
    assert f.op == "&&" and f.left.op == ">" and f.right.op == "<="
    # additive operators are left associative and bind tighter than comparisons
    assert f.left.right.op == "-" and f.left.right.left.op == "+"
    assert len(conjuncts(f)) == 2


@pytest.mark.parametrize("expr", ["?S * 2 > 1", "?S > 1 || ?S < 0"])
def test_unsupported_operators_rejected(expr):
    with pytest.raises(ParseError):
        q(f"STREAM <:s> {{ ?X :p ?Y . ?Y :v ?S . FILTER ({expr}) }}")


def test_naf_block_and_stamp_variable():
    rule = parse_rule_document((FIX / "rule_reid.ttl").read_text())[0]
    block = rule.body.positive_blocks[0]
    assert block.timestamp == Var("Te") and block.window == Range(5)
    two = parse_rule_document((FIX / "rule_enters.ttl").read_text())[0]
    assert len(two.body.naf_blocks) == 1


@pytest.mark.parametrize("body, head, var", [
    ("STREAM <:s> { ?X :p ?Y . }", "?X :out ?Z .", "?Z"),
    ("STREAM <:s> { ?X :p ?Y . } NAF STREAM <:s> { ?X :q ?W . }", "?X :out ?W .", "?W"),
    ("STREAM <:s> { ?X :p ?Y . FILTER (?Q > 1) }", "?X :out ?Q .", "?Q"),
])
def test_unsafe_rule_names_variable(body, head, var):
    with pytest.raises(RuleError) as info:
        q(body, head)
    assert var in str(info.value)
    rule = parse_query(f"CONSTRUCT {{ {head} }} WHERE {{ {body} }}", Iri(SSR + "r"), check=False)
    report = analyze_rule(rule)
    assert not report.safe and report.verdict == f"unsafe({var})"


def test_analysis_report():
    rule = parse_rule_document((FIX / "rule_iou.ttl").read_text())[0]
    report = analyze_rule(rule)
    assert report.safe and report.verdict == "safe"
    assert report.streams == frozenset({Iri("http://example.org/stream#ssr")})
    assert Var("B1") in report.variables and "head" in report.variables[Var("B1")]


@pytest.mark.parametrize("query, fragment", [
    ("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> { ?X :p ?Y . }", "unterminated WHERE"),
    ("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> window[now] { ?X :p ?Y . } }", "window size"),
    ("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> { } }", "at least one pattern"),
    ("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> window[0 sec] { ?X :p ?Y . } }", "window"),
    ("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> { ?X nope:p ?Y . } }", "nope"),
    ("CONSTRUCT { ?X :o ?Y . } WHERE { STREAM <:s> { ?X :p ?Y . FILTER (?Y > ) } }", "expected"),
])
def test_query_syntax_errors(query, fragment):
    with pytest.raises((ParseError, RuleError)) as info:
        parse_query(query, Iri(SSR + "r"))
    assert fragment in str(info.value)


def test_error_line_offset_points_into_document():
    text = wrap("\nCONSTRUCT { ?X :o ?Y . }\nWHERE { STREAM <:s> {\n ?X :p . } }")
    with pytest.raises(ParseError) as info:
        parse_rule_document(text)
    assert info.value.line == 4


def test_missing_construct():
    with pytest.raises(ParseError, match="no sh:construct"):
        parse_rule_document("ssr:r a sh:NodeShape ; sh:rule [ a sh:CQELSRule ] .")


def test_dump_ast_shape():
    rule = parse_rule_document((FIX / "rule_enters.ttl").read_text())[0]
    text = dump_ast(rule)
    lines = text.splitlines()
    assert lines[0] == "rule: Rule" and "  id: ssr:rule_w_1" in lines
    assert "prefixes" not in text
    assert "naf_blocks: [1]" in text
