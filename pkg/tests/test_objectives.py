import logging
import math

import numpy as np
import pytest

from desco import objectives
from desco.errors import DegenerateWeightError
from desco.objectives import (
    cross_supervision_loss,
    loss_gradients,
    supervised_loss,
    total_loss,
    weighted_cross_entropy,
    weighted_dice,
)


def _random_case(rng, shape=(4, 4, 4)):
    p = rng.uniform(0.05, 0.95, shape)
    y = (rng.random(shape) < 0.5).astype(np.float64)
    w = rng.uniform(0.1, 1.0, shape)
    return p, y, w


# -- cross-entropy ----------------------------------------------------------

def test_ce_perfect_prediction(rng):
    y = (rng.random((4, 4, 4)) < 0.5).astype(np.float64)
    w = rng.uniform(0.1, 1.0, y.shape)
    assert weighted_cross_entropy(y, y, w) <= 1e-5


def test_ce_single_voxel_analytic():
    val = weighted_cross_entropy(np.array([[[0.5]]]), np.array([[[1.0]]]), np.array([[[1.0]]]))
    assert val == pytest.approx(math.log(2), abs=1e-12)


def test_ce_uniform_weights_match_unweighted(rng):
    p, y, _ = _random_case(rng)
    w = np.full(p.shape, 0.37)
    unweighted = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert weighted_cross_entropy(p, y, w) == pytest.approx(unweighted, rel=1e-10)


def test_ce_zero_weights_error(rng):
    p, y, _ = _random_case(rng)
    with pytest.raises(DegenerateWeightError):
        weighted_cross_entropy(p, y, np.zeros_like(p))


def test_ce_nonnegative(rng):
    for _ in range(10):
        p, y, w = _random_case(rng)
        assert weighted_cross_entropy(p, y, w) >= 0.0


# -- dice ---------------------------------------------------------------------

def test_dice_perfect_prediction(rng):
    y = (rng.random((4, 4, 4)) < 0.5).astype(np.float64)
    y[0, 0, 0] = 1.0
    w = rng.uniform(0.1, 1.0, y.shape)
    assert weighted_dice(y, y, w) == pytest.approx(0.0, abs=1e-12)


def test_dice_single_voxel_analytic():
    val = weighted_dice(np.array([[[0.5]]]), np.array([[[1.0]]]), np.array([[[1.0]]]))
    assert val == pytest.approx(0.2, abs=1e-12)


def test_dice_weight_scaling_invariance(rng):
    p, y, w = _random_case(rng)
    a = weighted_dice(p, y, w)
    b = weighted_dice(p, y, 17.3 * w)
    assert a == pytest.approx(b, rel=1e-12)


def test_ce_weight_scaling_invariance(rng):
    p, y, w = _random_case(rng)
    assert weighted_cross_entropy(p, y, w) == pytest.approx(
        weighted_cross_entropy(p, y, 251.0 * w), rel=1e-12
    )


def test_dice_range(rng):
    for _ in range(10):
        p, y, w = _random_case(rng)
        assert 0.0 <= weighted_dice(p, y, w) <= 1.0


def test_dice_degenerate_denominator(caplog):
    p = np.zeros((2, 2, 2))
    y = np.zeros((2, 2, 2))
    w = np.ones((2, 2, 2))
    with caplog.at_level(logging.INFO, logger="desco.objectives"):
        assert weighted_dice(p, y, w) == 0.0
    assert any("degenerate" in r.message for r in caplog.records)


# -- supervised combo ---------------------------------------------------------

def test_supervised_is_plain_average(rng):
    p, y, w = _random_case(rng)
    expected = 0.5 * weighted_cross_entropy(p, y, w) + 0.5 * weighted_dice(p, y, w)
    assert supervised_loss(p, y, w) == pytest.approx(expected, rel=1e-14)


def test_supervised_perfect(rng):
    y = (rng.random((4, 4, 4)) < 0.5).astype(np.float64)
    y[1, 1, 1] = 1.0
    assert supervised_loss(y, y, np.ones_like(y)) <= 1e-5


# -- cross supervision ----------------------------------------------------------

def test_cross_confident_agreement():
    p = np.array([[[0.999, 0.001], [0.999, 0.001]]])
    y_hat = (p > 0.5).astype(np.float64)
    mask = np.ones_like(p)
    assert cross_supervision_loss(p, y_hat, mask) < 0.01


def test_cross_zero_mask_flag(caplog):
    p = np.full((2, 2, 2), 0.3)
    y_hat = np.ones_like(p)
    with caplog.at_level(logging.DEBUG, logger="desco.objectives"):
        assert cross_supervision_loss(p, y_hat, np.zeros_like(p)) == 0.0
    assert any("empty uncertainty mask" in r.message for r in caplog.records)


def test_cross_masking_disagreement_reduces_loss():
    # three voxels: two agree, one disagrees; masking out the disagreement
    # must strictly reduce the loss
    p = np.array([[[0.9, 0.9, 0.1]]])
    y_hat = np.array([[[1.0, 1.0, 1.0]]])
    full = cross_supervision_loss(p, y_hat, np.ones_like(p))
    masked = cross_supervision_loss(p, y_hat, np.array([[[1.0, 1.0, 0.0]]]))
    # hand oracle: full = (2*ln(1/0.9) + ln(1/0.1)) / 3, masked = ln(1/0.9)
    assert full == pytest.approx((2 * math.log(1 / 0.9) + math.log(10)) / 3, abs=1e-12)
    assert masked == pytest.approx(math.log(1 / 0.9), abs=1e-12)
    assert masked < full


# -- total --------------------------------------------------------------------

def test_total_endpoints():
    assert total_loss(1.3, 0.7, 0.0) == 1.3
    assert total_loss(1.3, 0.7, 1.0) == 0.7


def test_total_hand_arithmetic():
    assert total_loss(0.5, 0.25, 0.8) == pytest.approx(0.2 * 0.5 + 0.8 * 0.25, abs=1e-15)


def test_total_bounds(rng):
    for _ in range(10):
        sup, cross = rng.uniform(0, 2, 2)
        lam = rng.uniform(0, 1)
        t = total_loss(sup, cross, lam)
        assert min(sup, cross) - 1e-12 <= t <= max(sup, cross) + 1e-12


def test_total_rejects_bad_lambda():
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, 1.5)


# -- gradients ------------------------------------------------------------------

def _finite_difference(fn, p, h=1e-5):
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        pp = p.copy()
        pp[idx] += h
        pm = p.copy()
        pm[idx] -= h
        g[idx] = (fn(pp) - fn(pm)) / (2 * h)
        it.iternext()
    return g


@pytest.mark.parametrize("which,fn", [
    ("ce", weighted_cross_entropy),
    ("dice", weighted_dice),
    ("sup", supervised_loss),
])
def test_gradients_match_finite_differences(rng, which, fn):
    for _ in range(5):
        p, y, w = _random_case(rng)
        analytic = loss_gradients(p, y, w, which)
        fd = _finite_difference(lambda q: fn(q, y, w), p)
        rel = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() < 1e-4


def test_cross_gradient_matches_fd(rng):
    p, y, _ = _random_case(rng)
    mask = (rng.random(p.shape) < 0.7).astype(np.float64)
    analytic = loss_gradients(p, y, mask, "cross")
    fd = _finite_difference(lambda q: cross_supervision_loss(q, y, mask), p)
    rel = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-8)
    assert rel.max() < 1e-4


def test_zero_weight_voxel_has_zero_gradient(rng):
    p, y, w = _random_case(rng)
    w[1, 2, 3] = 0.0
    for which in ("ce", "dice", "sup"):
        assert loss_gradients(p, y, w, which)[1, 2, 3] == 0.0


def test_gradient_unknown_kind(rng):
    p, y, w = _random_case(rng)
    with pytest.raises(ValueError):
        loss_gradients(p, y, w, "focal")


def test_objective_accepts_wrapped_types(rng, golden_annotation):
    # MixedLabel/WeightMap style objects expose .data; losses unwrap them
    class Wrapped:
        def __init__(self, data):
            self.data = data

    p, y, w = _random_case(rng)
    assert supervised_loss(p, Wrapped(y), Wrapped(w)) == supervised_loss(p, y, w)
