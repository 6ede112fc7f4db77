import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from visubcat.calibration import (CalibrationSample, SigmoidParams, build_calibration_set, calibrate,
                                  calibrate_array, fit_sigmoid, sigmoid_loss, unbounded_fit)
from visubcat.dataset import DatasetManifest, GroundTruth, ManifestEntry
from visubcat.evaluation import overlap
from visubcat.imaging import BoundingBox, GrayImage
from visubcat.model import MixtureModel, SubcategoryModel


def samples(s, t):
    return [CalibrationSample(float(a), float(b)) for a, b in zip(s, t)]


def grid_min(s, t):
    return min(sigmoid_loss(A, B, s, t) for A in np.linspace(-5, 0, 11) for B in np.linspace(-5, 5, 11))


def test_calibrate_examples():
    assert calibrate(3.7, SigmoidParams(0.0, 0.0)) == 0.5
    assert calibrate(2.0, SigmoidParams(-1.0, 0.0)) == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
    assert abs(calibrate(1000.0, SigmoidParams(-1.0, 0.0)) - 1.0) <= 1e-12
    assert calibrate(-1000.0, SigmoidParams(-1.0, 0.0)) >= 0.0


def test_calibrate_monotone(rng):
    for _ in range(1000):
        A = -rng.uniform(1e-3, 10)
        B = rng.uniform(-10, 10)
        s1, s2 = np.sort(rng.uniform(-20, 20, 2))
        p = SigmoidParams(A, B)
        assert calibrate(s1, p) <= calibrate(s2, p)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_calibrate_array_matches_scalar(A, B, s):
    p = SigmoidParams(A, B)
    assert calibrate_array([s], A, B)[0] == pytest.approx(calibrate(s, p), rel=1e-12, abs=1e-300)
    assert 0.0 <= calibrate(s, p) <= 1.0


def test_symmetric_targets_fit_at_origin():
    s = np.linspace(-2, 2, 9)
    p = fit_sigmoid(samples(s, np.full(9, 0.5)))
    assert abs(p.loss - 9 * math.log(2)) <= 1e-6
    assert abs(p.A) <= 1e-6 and abs(p.B) <= 1e-6


def test_two_point_fit_orders_scores():
    p = fit_sigmoid(samples([1.0, -1.0], [1.0, 0.0]))
    assert calibrate(1.0, p) > 0.5 > calibrate(-1.0, p)


def test_fit_beats_origin_and_grid(rng):
    for _ in range(20):
        n = int(rng.integers(5, 60))
        s = rng.normal(0, 2, n)
        t = np.clip(1 / (1 + np.exp(-(s - rng.normal()))) + rng.normal(0, 0.2, n), 0, 1)
        p = fit_sigmoid(samples(s, t))
        assert p.loss <= sigmoid_loss(0, 0, s, t) + 1e-6
        assert p.loss <= grid_min(s, t) + 1e-6


def test_fit_gradient_vanishes(rng):
    s = rng.normal(0, 1, 200)
    t = (rng.random(200) < 1 / (1 + np.exp(-2 * s))).astype(float)
    p = fit_sigmoid(samples(s, t))
    assert not p.degenerate and p.A < 0
    g = calibrate_array(s, p.A, p.B)
    grad = [float((t - g) @ s), float((t - g).sum())]
    assert np.linalg.norm(grad) <= 1e-6


def test_degenerate_flags():
    assert fit_sigmoid(samples([0.0, 1.0, 2.0], [0.0, 0.0, 0.0])).degenerate
    assert fit_sigmoid(samples([1.0, 1.0], [0.0, 1.0])).degenerate      # constant scores
    assert fit_sigmoid(samples([2.0, -2.0, 1.0], [0.0, 0.9, 0.1])).degenerate  # falling
    with pytest.raises(ValueError):
        fit_sigmoid([])
    with pytest.raises(ValueError):
        CalibrationSample(0.0, 1.5)


def brute_unbounded(s, t):
    """Some v with t == lo for all s < v and t == hi for all s > v."""
    for v in set(s.tolist()):
        for lo, hi in ((0.0, 1.0), (1.0, 0.0)):
            if all(tt == lo for ss, tt in zip(s, t) if ss < v) and \
               all(tt == hi for ss, tt in zip(s, t) if ss > v):
                return True
    return False


@given(st.lists(st.tuples(st.integers(-3, 3), st.sampled_from([0.0, 0.3, 1.0])), min_size=1, max_size=8))
def test_unbounded_fit_matches_brute_force(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    t = np.array([p[1] for p in pairs])
    assert unbounded_fit(s, t) == brute_unbounded(s, t)


def test_unbounded_fit_means_loss_keeps_falling():
    # t = 0 below 0, t = 1 above: the step fit drives the loss to its infimum
    s = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    t = np.array([0.0, 0.0, 0.5, 1.0, 1.0])
    assert unbounded_fit(s, t)
    losses = [sigmoid_loss(-a, 0.0, s, t) for a in (1, 10, 100)]
    assert losses[0] > losses[1] > losses[2]


# ------------------------------------------------------------ calibration set


def constant_model(K, bias):
    subs = [SubcategoryModel.zeros(k, 3, 3, True) for k in range(K)]
    for s in subs:
        s.bias = bias
    return MixtureModel("obj", subs, {"cell_size": 8, "interval": 4, "use_fine": True})


def test_calibration_set_without_objects_has_zero_targets(rng):
    img = GrayImage(rng.random((64, 64)))
    man = DatasetManifest([ManifestEntry("a", "a.pgm", [], image=img)], ["obj"])
    sets = build_calibration_set(constant_model(2, 0.0), man)
    assert sum(len(x) for x in sets) > 0
    assert all(c.t == 0.0 for x in sets for c in x)


def test_calibration_targets_equal_overlap(rng):
    img = GrayImage(rng.random((96, 96)))
    gts = [BoundingBox(10, 12, 40, 44), BoundingBox(50, 40, 90, 90)]
    man = DatasetManifest([ManifestEntry("a", "a.pgm", [GroundTruth("obj", b) for b in gts],
                                         image=img)], ["obj"])
    model = constant_model(1, 0.0)
    from visubcat.detection import detect
    dets = detect(img, model, bypass_calibration=True)
    sets = build_calibration_set(model, man)
    assert len(sets[0]) == len(dets)
    for c, d in zip(sets[0], dets):
        assert c.t == max(overlap(d.box, g) for g in gts)
