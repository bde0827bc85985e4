import pickle

import pytest
from hypothesis import given, settings, strategies as st

from streamfusion.lexer import ParseError
from streamfusion.terms import (
    DEFAULT_NS, RDF_TYPE, RESULT_TIME, SOSA, XSD_DECIMAL, XSD_INTEGER, BlankNode, Iri, Literal, QuotedTriple,
    StaticGraph, TimestampedFact, compact, fact_key, format_decimal, iri, term_key,
)
from streamfusion.turtle import parse_fact_document, serialize_fact, serialize_facts

locals_ = st.from_regex(r"[a-z][a-zA-Z0-9_]{0,6}", fullmatch=True)
iris = st.one_of(locals_.map(lambda s: Iri(DEFAULT_NS + s)), st.sampled_from([RDF_TYPE, Iri(SOSA + "isSampleOf")]))
bnodes = locals_.map(BlankNode)
literals = st.one_of(
    st.integers(-10**6, 10**6).map(Literal.of),
    st.floats(-1e6, 1e6, allow_nan=False).map(Literal.of),
    st.text(st.characters(min_codepoint=32, max_codepoint=126) | st.sampled_from("\n\t\r'\\"), max_size=12)
    .map(Literal.of),
)


def quoted(depth):
    inner = st.one_of(iris, bnodes) if depth <= 1 else st.one_of(iris, bnodes, quoted(depth - 1))
    return st.builds(QuotedTriple, inner, iris, st.one_of(inner, literals))


subjects = st.one_of(iris, bnodes, quoted(2))
objects = st.one_of(iris, bnodes, literals, quoted(2))
facts = st.builds(TimestampedFact, subjects, iris, objects, st.integers(0, 10**6))


@given(st.lists(facts, max_size=8))
@settings(max_examples=200)
def test_serialize_parse_round_trip(fs):
    assert parse_fact_document(serialize_facts(fs)) == fs


@given(facts)
def test_single_fact_line_round_trip(f):
    line = serialize_fact(f)
    assert "\n" not in line.rstrip("\n")
    assert parse_fact_document(line) == [f]


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_decimal_exact(x):
    text = format_decimal(x)
    assert float(text) == x and "e" not in text.lower()


@given(st.lists(objects, min_size=2, max_size=6))
def test_term_key_total_order(terms):
    keys = sorted(terms, key=term_key)
    assert sorted(keys, key=term_key) == keys
    for a, b in zip(keys, keys[1:]):
        assert term_key(a) <= term_key(b)


@given(facts)
def test_facts_pickle(f):
    assert pickle.loads(pickle.dumps(f)) == f
    assert hash(pickle.loads(pickle.dumps(f))) == hash(f)


def test_quoted_triple_is_not_asserted():
    # a quoted triple used as subject does not assert the inner triple
    fs = parse_fact_document("<<:det1 :det :b1>> :score 0.9; sosa:resultTime 4.")
    assert len(fs) == 1
    assert fs[0].subject == QuotedTriple(iri(":det1"), iri(":det"), iri(":b1"))
    assert fs[0].timestamp == 4


def test_annotation_group_shares_timestamp():
    fs = parse_fact_document("<<:d :det :b>> a :Detection; sosa:resultTime 2; :score '0.8'; sosa:usedProcedure :Yolo.")
    assert {f.timestamp for f in fs} == {2}
    assert [f.predicate for f in fs] == [RDF_TYPE, iri(":score"), iri("sosa:usedProcedure")]


def test_frame_facts_parse():
    from pathlib import Path
    text = (Path(__file__).parent / "fixtures" / "frame_facts.ttl").read_text()
    fs = parse_fact_document(text)
    assert len(fs) == 16 and {f.timestamp for f in fs} == {2}
    scores = [f.object for f in fs if f.predicate == iri(":score")]
    assert [s.numeric() for s in scores] == [0.8, 0.7]


@pytest.mark.parametrize("text, message", [
    (":a :b :c; sosa:resultTime 3.", None),
    ("<<:a :b :c>> sosa:resultTime 4.", "no triple besides"),
    (":a :b :c; sosa:resultTime -1.", "non-negative"),
    (":a :b :c; sosa:resultTime 1.5.", "non-negative"),
    (":a :b :c; sosa:resultTime 1, 2.", "conflicting"),
    (":a sosa:resultTime :c.", "non-negative"),
    ("'lit' :b :c.", "expected subject"),
    ("<<:a :b <<:c :d :e>>>> :p :o.", None),
    ("<<:a :b <<:c :d <<:e :f :g>>>>>> :p :o.", "nested deeper"),
    ("<<:a :b :c>> :p :o", "expected"),
])
def test_fact_parse_errors(text, message):
    if message is None:
        assert parse_fact_document(text)
        return
    with pytest.raises(ParseError) as info:
        parse_fact_document(text)
    assert message in str(info.value)


def test_parse_error_position():
    with pytest.raises(ParseError) as info:
        parse_fact_document(":a :b :c.\n:d :e")
    assert info.value.line == 2


@pytest.mark.parametrize("bad", [
    lambda: TimestampedFact(iri(":a"), RESULT_TIME, Literal.of(1), 0),
    lambda: TimestampedFact(Literal.of(1), iri(":p"), iri(":o"), 0),
    lambda: TimestampedFact(iri(":a"), iri(":p"), iri(":o"), -1),
    lambda: TimestampedFact(iri(":a"), iri(":p"), iri(":o"), True),
    lambda: Literal("x", XSD_INTEGER),
    lambda: Literal("1.x", XSD_DECIMAL),
    lambda: Literal("a", Iri("http://www.w3.org/2001/XMLSchema#date")),
    lambda: Iri(""),
])
def test_invalid_terms_rejected(bad):
    with pytest.raises((TypeError, ValueError)):
        bad()


@pytest.mark.parametrize("lit, value", [
    (Literal.of(3), 3),
    (Literal.of(0.25), 0.25),
    (Literal("0.8"), 0.8),
    (Literal(" 7 "), 7),
    (Literal("car"), None),
    (Literal("nan"), None),
    (Literal("inf"), None),
])
def test_numeric_coercion(lit, value):
    assert lit.numeric() == value


def test_compact_and_expand():
    assert compact(Iri(DEFAULT_NS + "b1")) == ":b1"
    assert compact(RDF_TYPE) == "a"
    assert compact(Iri("http://other.org/x")) == "<http://other.org/x>"
    assert iri("sosa:resultTime") == RESULT_TIME
    assert iri("<http://other.org/x>") == Iri("http://other.org/x")


def test_static_graph_set_semantics():
    g = StaticGraph()
    t = (iri(":a"), iri(":p"), iri(":b"))
    g.insert(t).insert(t)
    assert len(g) == 1 and t in g
    assert g.by_predicate(iri(":p")) == [t] and g.by_predicate(iri(":q")) == ()
    with pytest.raises(TypeError):
        g.insert((iri(":a"), Literal.of(1), iri(":b")))


def test_fact_key_orders_by_time_first():
    a = TimestampedFact(iri(":z"), iri(":p"), iri(":o"), 1)
    b = TimestampedFact(iri(":a"), iri(":p"), iri(":o"), 2)
    assert sorted([b, a], key=fact_key) == [a, b]
