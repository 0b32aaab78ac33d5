import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from faithbench.attributions import Explanation
from faithbench.baselines import BaselineContext, build_context
from faithbench.metrics import (
    FeatureIndex,
    MetricConfig,
    MetricTrace,
    auc,
    auc_concentration,
    classify_topk,
    deletion_trace,
    info_removal_energy,
    insertion_trace,
    mean_ood_within,
    nearest_distance,
    nearest_distance_scan,
    ood_1nn,
    srg,
    write_trace_csv,
)
from faithbench.models import Dense, LinearModel, MLPModel

W = np.array([3.0, -1.0, 2.0])
X = np.array([1.0, 2.0, 3.0])
LOGIT_EXACT = MetricConfig(score_mode="logit", steps=None)


def ordered(order):
    return Explanation(np.zeros(len(order)), ordering=order)


def zero_ctx(x):
    return build_context("zero", x)


def bias_model(bias, d=3):
    bias = np.asarray(bias, dtype=float)
    return MLPModel((Dense(np.zeros((d, bias.size)), bias),), (d,))


def test_deletion_linear_example():
    tr = deletion_trace(LinearModel(W), X, ordered([2, 0, 1]), zero_ctx(X), LOGIT_EXACT)
    assert_array_equal(tr.scores, [7.0, 1.0, -2.0, 0.0])
    assert tr.step_sum == -1.0
    tr = deletion_trace(LinearModel(W), X, ordered([0, 2, 1]), zero_ctx(X), LOGIT_EXACT)
    assert_array_equal(tr.scores, [7.0, 4.0, -2.0, 0.0])
    assert tr.step_sum == 2.0


def test_insertion_linear_example():
    tr = insertion_trace(LinearModel(W), X, ordered([2, 0, 1]), zero_ctx(X), LOGIT_EXACT)
    assert_array_equal(tr.scores, [0.0, 6.0, 9.0, 7.0])
    assert tr.step_sum == 22.0
    sums = {
        p: insertion_trace(LinearModel(W), X, ordered(p), zero_ctx(X), LOGIT_EXACT).step_sum
        for p in itertools.permutations(range(3))
    }
    assert max(sums, key=sums.get) == (2, 0, 1)
    assert sums[(1, 0, 2)] == 6.0


def test_constant_model_trace():
    model = LinearModel(np.zeros(3), 0.4)
    for fn in (deletion_trace, insertion_trace):
        tr = fn(model, X, ordered([0, 1, 2]), zero_ctx(X), LOGIT_EXACT)
        assert_array_equal(tr.scores, 0.4)
        assert tr.auc == pytest.approx(0.4, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([None, 1, 3, 10]))
def test_insertion_end_equals_deletion_start(seed, steps):
    rng = np.random.default_rng(seed)
    model = MLPModel((Dense(rng.normal(size=(12, 4)), rng.normal(size=4), "relu"), Dense(rng.normal(size=(4, 3)), rng.normal(size=3))), (12,))
    x = rng.random(12)
    ctx = BaselineContext("custom", rng.random(12))
    e = ordered(rng.permutation(12))
    cfg = MetricConfig(steps=steps)
    d, i = deletion_trace(model, x, e, ctx, cfg), insertion_trace(model, x, e, ctx, cfg)
    assert d.scores[0] == i.scores[-1]
    assert d.fractions[0] == 0.0 and d.fractions[-1] == 1.0
    assert np.all(np.diff(d.fractions) > 0)


def test_step_grid_uses_ceiling():
    tr = deletion_trace(LinearModel(np.ones(10)), np.ones(10), ordered(np.arange(10)), zero_ctx(np.ones(10)), MetricConfig(score_mode="logit", steps=3))
    # counts ceil(i*10/3) = 0, 4, 7, 10
    assert_array_equal(tr.scores, [10.0, 6.0, 3.0, 0.0])


def test_softmax_mode_tracks_clean_argmax():
    model = bias_model([1.0, -1.0])
    tr = deletion_trace(model, X, ordered([0, 1, 2]), zero_ctx(X), MetricConfig())
    assert_allclose(tr.scores, 1.0 / (1.0 + math.exp(-2.0)), rtol=1e-15)


def test_bad_ordering_rejected():
    with pytest.raises(ValueError):
        deletion_trace(LinearModel(W), X, ordered([0, 1]), zero_ctx(X))


def test_auc_examples():
    assert auc([0, 0.5, 1.0], [1.0, 0.5, 0.0]) == 0.5
    assert auc([0, 0.5, 1.0], [0.3, 0.3, 0.3]) == pytest.approx(0.3, abs=1e-16)
    assert auc([0, 0.5, 1.0], [1.0, 0.0, 0.0]) == 0.25
    assert auc(MetricTrace("deletion", np.array([0.0, 1.0]), np.array([1.0, 1.0]))) == 1.0


def test_srg():
    assert srg(0.8, 0.3) == pytest.approx(0.5, abs=1e-15)
    assert srg(0.4, 0.4) == 0.0


def dense_crossing(fractions, scores, level=0.8, n=2_000_001):
    grid = np.linspace(0.0, 1.0, n)
    s = np.interp(grid, fractions, scores)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (s[1:] + s[:-1]) * np.diff(grid))])
    return grid[np.searchsorted(cum, level * cum[-1])]


def test_concentration_constant_trace():
    c = auc_concentration(np.linspace(0, 1, 11), np.full(11, 0.7))
    assert c.fraction == pytest.approx(0.8, abs=1e-14)
    assert not c.degenerate


def test_concentration_triangle_against_dense_integration():
    f, s = [0.0, 0.5, 1.0], [1.0, 0.0, 0.0]
    got = auc_concentration(f, s).fraction
    assert got == pytest.approx((1.0 - math.sqrt(0.2)) / 2.0, abs=1e-14)
    assert got == pytest.approx(0.2763932, abs=1e-7)
    assert got == pytest.approx(dense_crossing(f, s), abs=1e-6)


def test_concentration_late_mass():
    f = np.linspace(0, 1, 101)
    s = np.zeros(101)
    s[-1] = 1.0
    assert auc_concentration(f, s).fraction > 0.99


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12))
def test_concentration_property(scores):
    f = np.linspace(0, 1, len(scores))
    c = auc_concentration(f, scores)
    if sum(scores) == 0 or auc(f, scores) == 0:
        assert c.degenerate and c.fraction == 1.0
        return
    assert 0.0 <= c.fraction <= 1.0
    # AUC over [0, c] is 80% of the total
    head = np.interp(c.fraction, f, scores)
    keep = f < c.fraction
    partial = auc(np.append(f[keep], c.fraction), np.append(np.asarray(scores)[keep], head))
    assert partial == pytest.approx(0.8 * auc(f, scores), rel=1e-9, abs=1e-12)


def test_concentration_rejects_negative_and_flags_zero():
    with pytest.raises(ValueError):
        auc_concentration([0, 1], [1.0, -0.1])
    c = auc_concentration([0, 1], [0.0, 0.0])
    assert c.degenerate and c.fraction == 1.0


def test_nearest_distance_examples():
    idx = FeatureIndex.from_features([[0.0, 0.0], [1.0, 0.0]])
    assert nearest_distance(idx, [[3.0, 4.0]])[0] == pytest.approx(math.sqrt(20), abs=1e-15)
    assert nearest_distance(idx, [[1.0, 0.0]])[0] == 0.0
    assert idx.reference_scale == 1.0


def test_nearest_distance_equals_linear_scan():
    rng = np.random.default_rng(0)
    idx = FeatureIndex.from_features(rng.normal(size=(500, 16)))
    queries = rng.normal(size=(1000, 16))
    assert_array_equal(nearest_distance(idx, queries), nearest_distance_scan(idx, queries))


def test_ood_of_training_image_is_zero():
    rng = np.random.default_rng(1)
    model = MLPModel((Dense(rng.normal(size=(6, 4)), np.zeros(4), "relu"), Dense(rng.normal(size=(4, 2)), np.zeros(2))), (6,))
    train = rng.random((30, 6))
    idx = FeatureIndex.from_features(model.features(train))
    raw, norm = ood_1nn(idx, model, train[7])
    # single-row and batched matmuls may round differently
    assert raw == pytest.approx(0.0, abs=1e-12) and norm == pytest.approx(0.0, abs=1e-12)
    assert nearest_distance(idx, idx.features[7])[0] == 0.0


def test_energy():
    assert info_removal_energy(bias_model([3.0, 4.0]), X) == 5.0
    assert info_removal_energy(bias_model([0.0, 0.0]), X) == 0.0


def test_classify_topk():
    top = classify_topk(bias_model([1.0, -1.0]), X, 1)
    assert top[0][0] == 0 and top[0][1] == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-15)
    top = classify_topk(bias_model([-1.0, 1.0]), X, 2)
    assert [c for c, _ in top] == [1, 0]
    top = classify_topk(bias_model(np.zeros(4)), X, 3)
    assert [c for c, _ in top] == [0, 1, 2]
    assert_allclose([p for _, p in top], 0.25, rtol=1e-15)
    with pytest.raises(ValueError):
        classify_topk(bias_model([0.0, 0.0]), X, 3)


def test_trace_records_and_csv(tmp_path):
    rng = np.random.default_rng(2)
    model = MLPModel((Dense(rng.normal(size=(9, 4)), np.zeros(4), "relu"), Dense(rng.normal(size=(4, 3)), np.zeros(3))), (9,))
    idx = FeatureIndex.from_features(model.features(rng.random((20, 9))))
    x = rng.random(9)
    tr = deletion_trace(model, x, ordered(rng.permutation(9)), zero_ctx(x), MetricConfig(steps=None), idx)
    assert tr.ood_raw.shape == (10,) and tr.logit_energy.shape == (10,)
    assert_allclose(tr.ood_normalized, tr.ood_raw / idx.reference_scale)
    assert tr.logit_energy[0] == pytest.approx(info_removal_energy(model, x), rel=1e-15)
    assert mean_ood_within(tr, 1.0) == pytest.approx(tr.ood_normalized.mean())
    write_trace_csv(tr, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,fraction,score,logit_energy,ood_raw,ood_normalized"
    assert len(lines) == 11
