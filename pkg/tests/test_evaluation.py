import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxrank.errors import BadEdges, DegenerateLabels, ZeroLabelMass
from ctxrank.evaluation import (
    calibration,
    calibration_by_bucket,
    default_bucket_edges,
    entropy,
    ne_report,
    normalized_entropy,
    percent_improvement,
)
from oracles import ne_oracle


class TestCalibration:
    def test_sums_match(self):
        assert calibration([0.5, 0.5], [1, 0]) == 1.0

    def test_under_calibrated(self):
        assert calibration([0.5, 0.5], [1, 1]) == 0.5

    def test_perfect(self):
        y = [1, 0, 1, 1, 0]
        assert calibration(y, y) == 1.0

    def test_zero_label_mass(self):
        with pytest.raises(ZeroLabelMass):
            calibration([0.2, 0.3], [0, 0])


class TestCalibrationByBucket:
    def test_default_edges(self):
        e = default_bucket_edges()
        assert len(e) == 41 and e[0] == -1.0 and e[-1] == 1.0

    def test_single_bucket_equals_overall(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(size=100)
        y = (rng.uniform(size=100) < 0.5).astype(float)
        rep = calibration_by_bucket(p, y, np.full(100, 0.31))
        (i,) = rep.populated()
        assert rep.calibration[i] == rep.overall == calibration(p, y)

    def test_perfect_predictor(self):
        rng = np.random.default_rng(1)
        y = (rng.uniform(size=500) < 0.5).astype(float)
        rep = calibration_by_bucket(y, y, rng.uniform(-1, 1, 500))
        assert all(rep.calibration[i] == 1.0 for i in rep.populated())

    def test_half_open_last_closed(self):
        edges = [-1.0, 0.0, 1.0]
        rep = calibration_by_bucket([0.5, 0.5, 0.5], [1, 1, 1], [0.0, 1.0, -1.0], edges)
        assert rep.counts == [1, 2]

    def test_empty_label_bucket_absent(self):
        rep = calibration_by_bucket([0.5, 0.5], [1, 0], [-0.9, 0.9], [-1.0, 0.0, 1.0])
        assert rep.calibration == [0.5, None]
        assert rep.populated() == [0]

    @pytest.mark.parametrize("edges", [[-1.0, 0.0, 0.0, 1.0], [-0.5, 1.0], [-1.0, 0.5], [0.0]])
    def test_bad_edges(self, edges):
        with pytest.raises(BadEdges):
            calibration_by_bucket([0.5], [1], [0.0], edges)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(10, 500))
    def test_additive_and_counts(self, seed, n):
        rng = np.random.default_rng(seed)
        p = rng.uniform(size=n)
        y = (rng.uniform(size=n) < 0.6).astype(float)
        y[0] = 1.0
        rep = calibration_by_bucket(p, y, rng.uniform(-1, 1, n))
        assert rep.total == n
        assert math.fsum(rep.sum_pred) / math.fsum(rep.sum_label) == pytest.approx(rep.overall, rel=1e-15)
        assert rep.overall == pytest.approx(calibration(p, y), rel=1e-12)

    def test_deterministic_and_order_independent(self):
        rng = np.random.default_rng(2)
        p, s = rng.uniform(size=1000), rng.uniform(-1, 1, 1000)
        y = (rng.uniform(size=1000) < 0.5).astype(float)
        a = calibration_by_bucket(p, y, s)
        perm = rng.permutation(1000)
        b = calibration_by_bucket(p[perm], y[perm], s[perm])
        assert a.to_dict() == b.to_dict()

    def test_csv_columns(self):
        rep = calibration_by_bucket([0.5, 0.5], [1, 0], [-0.9, 0.9], [-1.0, 0.0, 1.0])
        lines = rep.to_csv().splitlines()
        assert lines[0] == "bucket_low,bucket_high,count,calibration"
        assert lines[2].endswith(",1,")


class TestNormalizedEntropy:
    def test_background_predictor(self):
        rng = np.random.default_rng(3)
        y = (rng.uniform(size=1000) < 0.3).astype(float)
        assert normalized_entropy(np.full(1000, y.mean()), y) == pytest.approx(1.0, abs=1e-9)

    def test_labels_as_predictions(self):
        y = np.array([1.0, 0.0, 0.0, 1.0])
        assert normalized_entropy(y, y) < 1e-10

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            p = rng.uniform(size=200)
            y = (rng.uniform(size=200) < rng.uniform(0.1, 0.9)).astype(int)
            assert normalized_entropy(p, y) == pytest.approx(ne_oracle(p, list(y)), rel=1e-12)

    def test_duplication_invariant(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(size=300)
        y = (rng.uniform(size=300) < 0.4).astype(float)
        assert normalized_entropy(np.tile(p, 2), np.tile(y, 2)) == pytest.approx(
            normalized_entropy(p, y), abs=1e-12)

    def test_single_class(self):
        with pytest.raises(DegenerateLabels):
            normalized_entropy([0.3, 0.4], [1, 1])

    def test_entropy_value(self):
        assert entropy(0.5) == pytest.approx(math.log(2))

    def test_report_and_improvement(self):
        rng = np.random.default_rng(6)
        y = (rng.uniform(size=400) < 0.5).astype(float)
        base = ne_report("baseline", np.full(400, 0.5), y)
        better = ne_report("contextual", np.clip(0.5 + 0.2 * (y - 0.5), 0, 1), y, baseline=base)
        assert 0 < base.background_ctr < 1 and base.ne > 0
        assert better.improvement_pct == pytest.approx(percent_improvement(base.ne, better.ne))
        assert better.improvement_pct > 0
        assert better.to_dict()["baseline"] == "baseline"
