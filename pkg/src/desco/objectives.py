"""Weighted segmentation losses and their analytic gradients.

All losses operate on the per-voxel foreground probability ``p`` of a
patch (binary Bernoulli formulation) and are plain numpy functions, so the
trainer can inject the analytic ``dL/dp`` into whatever computes ``p``.

* weighted cross-entropy:  -(sum w [y log p + (1-y) log(1-p)]) / sum w
* weighted dice loss:      1 - 2 sum(w p y) / sum(w (p^2 + y^2))
* supervised loss:         their plain average
* cross-supervision loss:  cross-entropy against a partner's one-hot
  prediction, masked to low-uncertainty voxels and normalized by mask size
* total loss:              (1 - lam) * supervised + lam * cross

Probabilities are clamped to [eps, 1-eps] before any logarithm. Both
weighted losses normalize by their weight sums, so they are invariant to
scaling the weights by a positive constant.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import DegenerateWeightError

__all__ = [
    "EPS",
    "weighted_cross_entropy",
    "weighted_dice",
    "supervised_loss",
    "cross_supervision_loss",
    "total_loss",
    "loss_gradients",
]

logger = logging.getLogger(__name__)

EPS = 1e-7


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if hasattr(x, "data") else x, dtype=np.float64)


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, EPS, 1.0 - EPS)


def _bernoulli_ce(p, y, w, wsum) -> float:
    pc = _clamp(p)
    terms = y * np.log(pc) + (1.0 - y) * np.log1p(-pc)
    return float(-np.sum(w * terms) / wsum)


def weighted_cross_entropy(p, y, w) -> float:
    p, y, w = _as_array(p), _as_array(y), _as_array(w)
    if not p.shape == y.shape == w.shape:
        raise ValueError(f"shape mismatch: p {p.shape}, y {y.shape}, w {w.shape}")
    wsum = float(w.sum())
    if wsum <= 0:
        raise DegenerateWeightError("weighted cross-entropy with zero total weight")
    return _bernoulli_ce(p, y, w, wsum)


def weighted_dice(p, y, w) -> float:
    p, y, w = _as_array(p), _as_array(y), _as_array(w)
    if not p.shape == y.shape == w.shape:
        raise ValueError(f"shape mismatch: p {p.shape}, y {y.shape}, w {w.shape}")
    num = 2.0 * float(np.sum(w * p * y))
    den = float(np.sum(w * (p * p + y * y)))
    if den == 0.0:
        # empty target met by an empty prediction is a correct outcome
        logger.info("weighted_dice: degenerate denominator, reporting loss 0")
        return 0.0
    return 1.0 - num / den


def supervised_loss(p, mixed, w) -> float:
    """Equal-weight average of weighted cross-entropy and weighted dice."""
    y = mixed.data if hasattr(mixed, "data") else mixed
    return 0.5 * weighted_cross_entropy(p, y, w) + 0.5 * weighted_dice(p, y, w)


def cross_supervision_loss(p, y_hat, mask) -> float:
    """Masked cross-entropy against a one-hot partner prediction.

    An all-zero mask is a soft condition: the loss is defined as 0 and a
    telemetry message is logged.
    """
    p, y_hat, mask = _as_array(p), _as_array(y_hat), _as_array(mask)
    if not p.shape == y_hat.shape == mask.shape:
        raise ValueError(f"shape mismatch: p {p.shape}, y_hat {y_hat.shape}, mask {mask.shape}")
    msum = float(mask.sum())
    if msum == 0.0:
        logger.debug("cross_supervision_loss: empty uncertainty mask, reporting loss 0")
        return 0.0
    return _bernoulli_ce(p, y_hat, mask, msum)


def total_loss(sup: float, cross: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return (1.0 - lam) * sup + lam * cross


def _ce_grad(p, y, w) -> np.ndarray:
    wsum = float(w.sum())
    if wsum <= 0:
        return np.zeros_like(p)
    pc = _clamp(p)
    g = -w * (y / pc - (1.0 - y) / (1.0 - pc)) / wsum
    # the clamp is flat outside [eps, 1-eps]
    g[(p < EPS) | (p > 1.0 - EPS)] = 0.0
    return g


def _dice_grad(p, y, w) -> np.ndarray:
    a = float(np.sum(w * p * y))
    b = float(np.sum(w * (p * p + y * y)))
    if b == 0.0:
        return np.zeros_like(p)
    return 2.0 * w * (2.0 * a * p - y * b) / (b * b)


def loss_gradients(p, y, w, which: str) -> np.ndarray:
    """Analytic d(loss)/dp for 'ce', 'dice', 'sup' (their average) or 'cross'.

    For 'cross', ``y`` is the one-hot target and ``w`` the mask; a zero mask
    yields a zero gradient, matching the loss convention.
    """
    p, y, w = _as_array(p), _as_array(y), _as_array(w)
    if which == "ce":
        if w.sum() <= 0:
            raise DegenerateWeightError("gradient of weighted CE with zero total weight")
        return _ce_grad(p, y, w)
    if which == "dice":
        return _dice_grad(p, y, w)
    if which == "sup":
        if w.sum() <= 0:
            raise DegenerateWeightError("gradient of supervised loss with zero total weight")
        return 0.5 * _ce_grad(p, y, w) + 0.5 * _dice_grad(p, y, w)
    if which == "cross":
        return _ce_grad(p, y, w)
    raise ValueError(f"unknown loss kind {which!r}")
