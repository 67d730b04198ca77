import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairbench.fact import (FACT, Fairness, GroupConfusion, SIMPLE_DEFINITIONS, accuracy,
                            fact_from_predictions, gap, metric_report, rate, rate_from_cells, tau,
                            tau_from_rates)


def oracle_rate(definition, tp, fn, fp, tn):
    # straight-line conditional probabilities from raw cells
    if definition == "DP":
        num, den = tp + fp, tp + fn + fp + tn
    elif definition == "PP":
        num, den = tp, tp + fp
    elif definition == "EFOR":
        num, den = fn, fn + tn
    elif definition == "EFNR":
        num, den = fn, tp + fn
    elif definition == "PE":
        num, den = fp, fp + tn
    elif definition == "EOp":
        num, den = tp, tp + fn
    return None if den == 0 else num / den


def random_fact(rng, low=0, high=50):
    return FACT.from_array(rng.integers(low, high, 8).astype(float))


class TestGroupConfusion:
    def test_negative_entry_rejected(self):
        with pytest.raises(ValueError):
            GroupConfusion(1, -1, 0, 0)

    def test_total(self):
        assert GroupConfusion(30, 10, 10, 50).total() == 100


class TestFactFromPredictions:
    def test_two_points(self):
        z = fact_from_predictions([1, 0], [1, 0], [0, 1])
        assert z.group0 == GroupConfusion(tp=1)
        assert z.group1 == GroupConfusion(tn=1)
        zn = fact_from_predictions([1, 0], [1, 0], [0, 1], normalize=True)
        assert zn.group0.tp == 0.5 and zn.group1.tn == 0.5
        assert zn.normalized

    def test_equal_weights_same_normalized(self):
        rng = np.random.default_rng(3)
        y, p, s = rng.integers(0, 2, (3, 200))
        a = fact_from_predictions(y, p, s, normalize=True)
        b = fact_from_predictions(y, p, s, weights=np.full(200, 2.5), normalize=True)
        np.testing.assert_allclose(a.to_array(), b.to_array(), rtol=0, atol=1e-15)

    def test_matches_tally_loop(self):
        rng = np.random.default_rng(11)
        y, p, s = rng.integers(0, 2, (3, 100))
        w = rng.random(100)
        cells = np.zeros(8)
        for i in range(100):
            if p[i] == 1 and y[i] == 1:
                k = 0
            elif p[i] == 0 and y[i] == 1:
                k = 1
            elif p[i] == 1 and y[i] == 0:
                k = 2
            else:
                k = 3
            cells[4 * s[i] + k] += w[i]
        z = fact_from_predictions(y, p, s, weights=w)
        np.testing.assert_allclose(z.to_array(), cells, rtol=1e-13)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        y, p, s = rng.integers(0, 2, (3, 300))
        perm = rng.permutation(300)
        a = fact_from_predictions(y, p, s).to_array()
        b = fact_from_predictions(y[perm], p[perm], s[perm]).to_array()
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("args, match", [
        (([1, 0], [1], [0, 1]), "length"),
        (([], [], []), "empty"),
        (([1, 1], [1, 0], [0, 0]), "group 1"),
        (([1, 1], [1, 0], [1, 1]), "group 0"),
    ])
    def test_errors(self, args, match):
        with pytest.raises(ValueError, match=match):
            fact_from_predictions(*args)


class TestRate:
    def test_dp(self):
        assert rate("DP", GroupConfusion(tp=30, fn=10, fp=10, tn=50)) == pytest.approx(0.4)

    def test_pp(self):
        assert rate("PP", GroupConfusion(tp=10, fn=5, fp=10, tn=3)) == 0.5

    def test_undefined(self):
        assert math.isnan(rate("EOp", GroupConfusion(tp=0, fn=0, fp=3, tn=7)))

    def test_eod_is_composite(self):
        with pytest.raises(ValueError, match="composite"):
            rate("EOd", GroupConfusion(1, 1, 1, 1))

    def test_efpr_alias(self):
        assert Fairness.parse("EFPR") is Fairness.PE
        assert Fairness.parse("pe_efpr") is Fairness.PE

    def test_matches_oracle_on_random_facts(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            cells = rng.integers(0, 6, 4).astype(float)
            for d in SIMPLE_DEFINITIONS:
                expect = oracle_rate(d.value, *cells)
                got = rate(d, GroupConfusion(*cells))
                if expect is None:
                    assert math.isnan(got)
                else:
                    assert got == expect

    def test_vectorised(self):
        tp = np.array([1.0, 0.0]); fn = np.array([1.0, 0.0])
        out = rate_from_cells("EOp", tp, fn, np.ones(2), np.ones(2))
        assert out[0] == 0.5 and math.isnan(out[1])


class TestTau:
    @pytest.mark.parametrize("h0, h1, expect", [
        (0.3, 0.3, 1.0), (0.4, 0.2, 0.5), (0.2, 0.4, 0.5), (0.0, 0.0, 1.0),
        (0.0, 0.3, 0.0), (float("nan"), 0.3, 0.0), (0.3, float("nan"), 0.0),
    ])
    def test_rules(self, h0, h1, expect):
        assert float(tau_from_rates(h0, h1)) == pytest.approx(expect)

    def test_both_undefined(self):
        assert math.isnan(float(tau_from_rates(float("nan"), float("nan"))))

    def test_eod_takes_worst_component(self):
        # group0: TPR 0.9, FPR 0.7; group1: TPR 1.0 (tau_EOp .9), FPR 0.49 (tau_PE .7)
        z = FACT(GroupConfusion(tp=90, fn=10, fp=70, tn=30), GroupConfusion(tp=50, fn=0, fp=49, tn=51))
        assert tau("EOp", z) == pytest.approx(0.9)
        assert tau("PE", z) == pytest.approx(0.7)
        assert tau("EOd", z) == pytest.approx(0.7)
        assert gap("EOd", z) == pytest.approx(max(0.1, 0.21))

    def test_gap_examples(self):
        z = FACT(GroupConfusion(tp=40, fn=0, fp=0, tn=60), GroupConfusion(tp=20, fn=0, fp=0, tn=80))
        assert gap("DP", z) == pytest.approx(0.2)
        assert tau("DP", z) == pytest.approx(0.5)

    def test_random_facts_properties(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            z = random_fact(rng)
            for d in Fairness:
                t, g = tau(d, z), gap(d, z)
                if math.isnan(t) or math.isnan(g):
                    continue
                assert 0.0 <= t <= 1.0 and g >= 0.0
                assert tau(d, z.swapped()) == t
                assert (t == 1.0) == (g == 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 1000), min_size=8, max_size=8), st.floats(0.01, 100.0))
    def test_scale_invariance(self, cells, c):
        z = FACT.from_array(np.array(cells, dtype=float))
        zc = FACT.from_array(np.array(cells, dtype=float) * c)
        for d in Fairness:
            assert tau(d, zc) == pytest.approx(tau(d, z), abs=1e-12)
            assert gap(d, zc) == pytest.approx(gap(d, z), abs=1e-12)
        assert accuracy(zc) == pytest.approx(accuracy(z), abs=1e-12)


class TestAccuracy:
    def test_perfect_and_wrong(self):
        assert accuracy(FACT(GroupConfusion(tp=3, tn=2), GroupConfusion(tp=1, tn=4))) == 1.0
        assert accuracy(FACT(GroupConfusion(fn=3, fp=2), GroupConfusion(fn=1, fp=4))) == 0.0

    def test_example(self):
        z = FACT(GroupConfusion(tp=30, fn=10, fp=10, tn=50), GroupConfusion(tp=10, fn=20, fp=10, tn=60))
        assert accuracy(z) == 0.75


class TestMetricReport:
    def test_round_trip_json_and_csv(self):
        z = FACT(GroupConfusion(tp=30, fn=10, fp=10, tn=50), GroupConfusion(tp=10, fn=20, fp=10, tn=60))
        r = metric_report("DP", z)
        d = json.loads(r.to_json())
        assert d["definition"] == "DP" and d["accuracy"] == 0.75
        lines = r.to_csv().splitlines()
        assert lines[0] == "definition,accuracy,tau,gap,rate0,rate1"
        assert lines[1].startswith("DP,0.75,")
        assert float(lines[1].split(",")[2]) == r.tau

    def test_normalized_fact_sums_to_one(self):
        with pytest.raises(ValueError):
            FACT(GroupConfusion(tp=0.5), GroupConfusion(tp=0.4), normalized=True)
