import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from faithbench import autodiff as ad
from faithbench.featviz import (
    FeatVizConfig,
    export_baseline,
    load_baseline_image,
    mean_magnitude_spectrum,
    objective,
    objective_gradient,
    objective_program,
    optimize_baseline,
    render,
)
from faithbench.models import Dense, MLPModel
from faithbench.spectral import full_energy


def identity_penultimate(h=4, w=4):
    return MLPModel((Dense(np.ones((h * w, 2)), np.zeros(2)),), (h, w))


def small_model(seed=0, h=6, w=6, hidden=5):
    rng = np.random.default_rng(seed)
    return MLPModel(
        (Dense(rng.normal(size=(h * w, hidden)), rng.normal(size=hidden) * 0.1, "relu"), Dense(rng.normal(size=(hidden, 3)), np.zeros(3))),
        (h, w),
    )


def test_mean_magnitude_of_constant_image():
    r = mean_magnitude_spectrum(np.full((1, 4, 4), 0.25))
    expected = np.zeros((4, 3))
    expected[0, 0] = 4.0
    assert_allclose(r, expected, atol=1e-14)


def test_mean_magnitude_singleton():
    x = np.random.default_rng(0).random((5, 6))
    assert_array_equal(mean_magnitude_spectrum(x[None]), np.abs(np.fft.rfft2(x)))


def test_mean_magnitude_dc_on_desk_data(desk):
    r = mean_magnitude_spectrum(desk.train_x)
    assert abs(r[0, 0] - 784 * desk.train_x.mean()) < 1e-6


def test_identity_penultimate_objective_is_constant():
    model = identity_penultimate()
    r = mean_magnitude_spectrum(np.random.default_rng(1).random((10, 4, 4)))
    expected = full_energy(r, 4) / 16
    rng = np.random.default_rng(2)
    for _ in range(5):
        phi = rng.uniform(-np.pi, np.pi, r.shape)
        assert objective(model, r, phi) == pytest.approx(expected, rel=1e-12)
        assert np.max(np.abs(objective_gradient(model, r, phi))) < 1e-10 * expected


def test_dead_relu_gives_zero_objective():
    model = MLPModel((Dense(np.zeros((16, 3)), np.full(3, -1.0), "relu"), Dense(np.ones((3, 2)), np.zeros(2))), (4, 4))
    r = np.random.default_rng(3).random((4, 3))
    assert objective(model, r, np.zeros((4, 3))) == 0.0


def test_phi_gradient_matches_central_differences():
    model = small_model()
    r = mean_magnitude_spectrum(np.random.default_rng(4).random((5, 6, 6)))
    phi = np.random.default_rng(5).uniform(-np.pi, np.pi, r.shape)
    prog = objective_program(model, r)
    g = ad.gradient(prog, {"phi": phi}, "phi")
    fd = ad.central_difference_gradient(prog, {"phi": phi}, "phi", step=1e-6)
    assert np.max(np.abs(g - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_identity_model_exits_immediately():
    model = identity_penultimate()
    r = mean_magnitude_spectrum(np.random.default_rng(6).random((3, 4, 4)))
    res = optimize_baseline(model, r, FeatVizConfig(max_steps=50))
    assert len(res.trace) <= 2
    assert_allclose(res.trace, res.trace[0], rtol=1e-12)


def test_trace_non_increasing_and_deterministic():
    model = small_model(7)
    r = mean_magnitude_spectrum(np.random.default_rng(8).random((5, 6, 6)))
    cfg = FeatVizConfig(max_steps=40, seed=3)
    a, b = optimize_baseline(model, r, cfg), optimize_baseline(model, r, cfg)
    assert np.all(np.diff(a.trace) <= 0)
    assert_array_equal(a.image, b.image)
    assert_array_equal(a.raw_image, render(r, a.phase, 6))
    assert 0.0 <= a.image.min() and a.image.max() <= 1.0


def test_rejects_mismatched_magnitude():
    with pytest.raises(ValueError):
        objective_program(small_model(), np.ones((6, 6)))


def test_export_and_load(tmp_path):
    model = small_model(9)
    r = mean_magnitude_spectrum(np.random.default_rng(10).random((4, 6, 6)))
    res = optimize_baseline(model, r, FeatVizConfig(max_steps=5))
    export_baseline(res, tmp_path / "fv.json", tmp_path / "fv.pgm")
    assert_array_equal(load_baseline_image(tmp_path / "fv.json"), res.image)
    assert np.max(np.abs(load_baseline_image(tmp_path / "fv.pgm") - res.image)) <= 0.5 / 255 + 1e-12
    doc = json.loads((tmp_path / "fv.json").read_text())
    assert doc["shape"] == [6, 6] and len(doc["objective_trace"]) == len(res.trace)


def test_desk_featviz_reaches_target(desk, desk_featviz):
    r = mean_magnitude_spectrum(desk.train_x)
    mean_image = desk.train_x.mean(axis=0)
    reference = float(np.sum(desk.model.features(mean_image) ** 2))
    assert desk_featviz.final_objective <= 0.05 * reference
    assert np.all(np.diff(desk_featviz.trace) <= 0)
    assert r.shape == (28, 15)
    assert 0.0 < desk_featviz.clip_fraction < 1.0


def test_logits_near_final_bias(desk, desk_featviz):
    final = desk.model.final
    spectral_norm = np.linalg.norm(final.weights, 2)
    for img in (desk_featviz.raw_image, desk_featviz.image):
        logits, feats = desk.model.forward_with_features(img)
        assert np.linalg.norm(logits - final.bias) <= spectral_norm * np.linalg.norm(feats) + 1e-12
