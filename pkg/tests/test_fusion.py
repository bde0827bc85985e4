import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from oracles import IS_SAMPLE_OF, best_world_score, ns, random_hypotheses
from streamfusion.assignment import matching_value, max_weight_matching, min_cost_assignment
from streamfusion.boxes import Box, iou
from streamfusion.fusion import CONFLICT, DOMINATED, Hypothesis, RuleWeights, explain, select_world
from streamfusion.terms import Iri, TimestampedFact

costs = st.integers(1, 7).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-100, 100, allow_nan=False, width=32)))
rects = st.integers(0, 6).flatmap(
    lambda r: st.integers(0, 6).flatmap(
        lambda c: arrays(np.float64, (r, c), elements=st.floats(-5, 10, allow_nan=False, width=32))))


@given(costs)
@settings(max_examples=200)
def test_min_cost_matches_scipy(cost):
    cols = min_cost_assignment(cost)
    assert sorted(cols) == list(range(len(cost)))
    r, c = linear_sum_assignment(cost)
    assert cost[np.arange(len(cost)), cols].sum() == pytest.approx(cost[r, c].sum(), abs=1e-6)


@given(rects)
@settings(max_examples=200)
def test_max_weight_matching_matches_scipy(w):
    pairs = max_weight_matching(w)
    assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})
    assert all(w[i, j] > 0 for i, j in pairs)
    clipped = np.where(w > 0, w, 0.0)
    if clipped.size:
        r, c = linear_sum_assignment(clipped, maximize=True)
        expected = clipped[r, c].sum()
    else:
        expected = 0.0
    assert matching_value(w) == pytest.approx(expected, abs=1e-6)


def test_non_square_cost_rejected():
    with pytest.raises(ValueError):
        min_cost_assignment(np.zeros((2, 3)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_select_world_is_optimal_and_feasible(seed):
    hyps, weights = random_hypotheses(np.random.default_rng(seed))
    sel = select_world(hyps, weights)
    assoc = [h for h in sel.chosen if h.is_association]
    assert len({h.detection for h in assoc}) == len(assoc) == len({h.target for h in assoc})
    assert sel.score == pytest.approx(best_world_score(hyps, weights), abs=1e-9)
    assert set(sel.chosen) | set(sel.rejected) == set(hyps)
    assert all(h in sel.chosen for h in hyps if not h.is_association)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
@settings(max_examples=100, deadline=None)
def test_scaling_weights_keeps_choice(seed, factor):
    hyps, weights = random_hypotheses(np.random.default_rng(seed))
    a = select_world(hyps, weights)
    b = select_world(hyps, weights.scaled(factor))
    assert a.chosen == b.chosen


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_selection_independent_of_input_order(seed):
    rng = np.random.default_rng(seed)
    hyps, weights = random_hypotheses(rng)
    shuffled = list(hyps)
    rng.shuffle(shuffled)
    assert select_world(hyps, weights).chosen == select_world(shuffled, weights).chosen


def hyp(rule, det, tgt, conf, tick=0):
    d, o = ns(det), ns(tgt)
    return Hypothesis(ns(rule), TimestampedFact(d, IS_SAMPLE_OF, o, tick), d, o, conf, tick)


def test_conflict_and_dominated_reasons():
    a = hyp("rule_w_1", "b1", "o1", 0.9)
    b = hyp("rule_w_1", "b1", "o2", 0.5)
    c = hyp("rule_w_2", "b1", "o1", 0.4)  # same pair, lower utility
    sel = select_world([a, b, c])
    assert sel.chosen == [a]
    assert sel.reasons[b] == (CONFLICT, a)
    assert sel.reasons[c] == (DOMINATED, a)
    rows = explain(sel)
    assert sorted(r.status for r in rows) == ["chosen", "rejected", "rejected"]


def test_ties_broken_by_target_then_detection():
    a = hyp("rule_w_1", "b1", "o1", 0.5)
    b = hyp("rule_w_1", "b2", "o1", 0.5)
    assert select_world([b, a]).chosen == [a]


def test_zero_weight_rule_never_chosen():
    a = hyp("rule_w_1", "b1", "o1", 0.9)
    sel = select_world([a], RuleWeights({ns("rule_w_1"): 0.0}))
    assert sel.chosen == [] and sel.reasons[a][0] == DOMINATED


def test_non_association_always_chosen():
    o = ns("o1")
    h = Hypothesis(ns("rule_w_1"), TimestampedFact(o, ns("enters"), ns("FoV"), 0), None, o, 0.1, 0)
    assert select_world([h, hyp("rule_w_2", "b1", "o1", 0.9)]).chosen[0] == h


@pytest.mark.parametrize("make", [
    lambda: hyp("rule_w_1", "b1", "o1", 1.5),
    lambda: hyp("rule_w_1", "b1", "o1", float("nan")),
    lambda: Hypothesis(ns("r"), TimestampedFact(ns("a"), ns("p"), ns("b"), 1), None, None, 0.5, 2),
])
def test_invalid_hypotheses(make):
    with pytest.raises(ValueError):
        make()


def test_mixed_ticks_rejected():
    with pytest.raises(ValueError, match="more than one tick"):
        select_world([hyp("rule_w_1", "b1", "o1", 0.5, 0), hyp("rule_w_1", "b2", "o2", 0.5, 1)])


@given(st.dictionaries(st.from_regex(r"r[a-z0-9_]{0,6}", fullmatch=True),
                       st.floats(0, 1e6, allow_nan=False), max_size=5))
def test_weights_round_trip(raw):
    w = RuleWeights({Iri("http://example.org/ssr/" + k): v for k, v in raw.items()})
    assert RuleWeights.loads(w.dumps()) == w


@pytest.mark.parametrize("text", ["r\t-1", "r\tnan", "r 1", "r\tinf"])
def test_bad_weights_rejected(text):
    with pytest.raises(ValueError):
        RuleWeights.loads(text)


@pytest.mark.parametrize("a, b, expected", [
    (Box(0, 0, 2, 2), Box(1, 0, 2, 2), 2 / 6),
    (Box(0, 0, 2, 2), Box(0, 0, 2, 2), 1.0),
    (Box(0, 0, 2, 2), Box(2, 0, 2, 2), 0.0),
    (Box(0, 0, 4, 4), Box(1, 1, 2, 2), 4 / 16),
])
def test_iou(a, b, expected):
    assert iou(a, b) == pytest.approx(expected)
    assert iou(b, a) == pytest.approx(expected)
