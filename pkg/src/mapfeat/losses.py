"""Training losses tying feature distances to geometry, with analytic gradients.

All geometric and feature distances entering the losses are squared
Euclidean, so margins, residuals and the proportionality constant live in
squared-distance units. Every loss returns a :class:`LossValue` carrying
the exact gradient with respect to the feature vectors it was given.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

__all__ = [
    "LossConfig",
    "LossValue",
    "combined_loss",
    "hinge",
    "huber",
    "nv_loss",
    "vg_loss",
]

VG_VARIANTS = ("squared", "huber")
NV_VARIANTS = ("triplet", "lazy_triplet", "quadruplet", "lazy_quadruplet")


@dataclass(frozen=True)
class LossConfig:
    """Hyperparameters shared by all training losses.

    ``lam`` scales squared feature distances into squared meters; leave it
    ``None`` to have the trainer calibrate it against the untrained model.
    ``huber_delta`` and ``beta`` default to ``r1**2`` and ``alpha / 2``
    when resolved via :meth:`resolved`.
    """

    lam: Optional[float] = None
    alpha: float = 0.5
    gamma: float = 0.5
    huber_delta: Optional[float] = None
    vg_variant: str = "huber"
    nv_variant: str = "triplet"
    beta: Optional[float] = None

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        if self.huber_delta is not None and not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.vg_variant not in VG_VARIANTS:
            raise ValueError(f"vg_variant must be one of {VG_VARIANTS}")
        if self.nv_variant not in NV_VARIANTS:
            raise ValueError(f"nv_variant must be one of {NV_VARIANTS}")

    def resolved(self, r1: float, lam: Optional[float] = None) -> "LossConfig":
        """Fill unset fields: lam as given, huber_delta=r1**2, beta=alpha/2."""
        return replace(
            self,
            lam=self.lam if self.lam is not None else lam,
            huber_delta=self.huber_delta if self.huber_delta is not None else r1 * r1,
            beta=self.beta if self.beta is not None else self.alpha / 2.0,
        )


@dataclass
class LossValue:
    """Loss value plus gradient per feature vector it was evaluated on.

    For :func:`nv_loss` and :func:`combined_loss` the gradient rows are
    stacked as ``[anchor, positives..., negatives...]``.
    """

    value: float
    feature_grads: np.ndarray
    nv_value: Optional[float] = None
    vg_value: Optional[float] = None


def huber(residual: float, delta: float) -> float:
    """Huber penalty: quadratic inside ``|r| <= delta``, linear outside."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    r = abs(float(residual))
    if r <= delta:
        return 0.5 * r * r
    return delta * (r - 0.5 * delta)


def hinge(d_pos: float, d_neg: float, alpha: float) -> float:
    """Margin penalty ``max(0, d_pos - d_neg + alpha)`` on squared distances."""
    return max(0.0, float(d_pos) - float(d_neg) + float(alpha))


def _penalty(residuals: np.ndarray, variant: str, delta: Optional[float]):
    """Per-pair penalty values and derivatives for the proportionality loss."""
    if variant == "squared":
        return residuals * residuals, 2.0 * residuals
    if delta is None:
        raise ValueError("huber variant requires huber_delta to be resolved")
    absr = np.abs(residuals)
    inside = absr <= delta
    values = np.where(inside, 0.5 * residuals * residuals, delta * (absr - 0.5 * delta))
    derivs = np.clip(residuals, -delta, delta)
    return values, derivs


def vg_loss(features, locations, positives, config: LossConfig) -> LossValue:
    """Proportionality penalty over positive pairs.

    Sums ``rho(d_geo^2 - lam * d_feat^2)`` over the given pairs, where
    ``rho`` is the Huber penalty or a plain square depending on
    ``config.vg_variant``. An empty pair list yields a zero loss and zero
    gradients.
    """
    f = np.asarray(features, dtype=float)
    x = np.asarray(locations, dtype=float)
    grads = np.zeros_like(f)
    pairs = np.asarray(positives, dtype=int).reshape(-1, 2)
    if pairs.shape[0] == 0:
        return LossValue(0.0, grads)
    if config.lam is None:
        raise ValueError("vg_loss requires a resolved lam")
    i, j = pairs[:, 0], pairs[:, 1]
    df = f[i] - f[j]
    dx = x[i] - x[j]
    feat_sq = np.einsum("ij,ij->i", df, df)
    geo_sq = np.einsum("ij,ij->i", dx, dx)
    residuals = geo_sq - config.lam * feat_sq
    values, derivs = _penalty(residuals, config.vg_variant, config.huber_delta)
    coef = (-2.0 * config.lam) * derivs
    np.add.at(grads, i, coef[:, None] * df)
    np.add.at(grads, j, -coef[:, None] * df)
    return LossValue(float(np.sum(values)), grads)


def _hinge_terms(d_pos: np.ndarray, d_neg: np.ndarray, margin: float, lazy: bool):
    """Hinge matrix over (positive, negative) combinations.

    Returns the summed value and a selection matrix whose entry (i, j) is 1
    when pair (i, j) contributes to the loss. Lazy variants keep, for each
    positive, only the hardest (smallest ``d_neg``) negative.
    """
    h = d_pos[:, None] - d_neg[None, :] + margin
    active = h > 0
    if lazy:
        mask = np.zeros_like(active)
        j_star = int(np.argmin(d_neg))
        mask[:, j_star] = active[:, j_star]
    else:
        mask = active
    value = float(np.sum(h[mask])) if mask.any() else 0.0
    return value, mask.astype(float)


def nv_loss(anchor_feat, positive_feats, negative_feats, config: LossConfig) -> LossValue:
    """Margin loss separating negatives from positives in feature space.

    Triplet sums a hinge over all (positive, negative) combinations; lazy
    variants keep only the hardest negative per positive. Quadruplet
    variants treat the last negative as the second negative: it is held
    out of the anchor hinge and instead paired against the remaining
    negatives in a second hinge with margin ``beta``.

    Gradient rows are stacked ``[anchor, positives..., negatives...]``.
    """
    a = np.asarray(anchor_feat, dtype=float).reshape(-1)
    pos = np.atleast_2d(np.asarray(positive_feats, dtype=float))
    neg = np.atleast_2d(np.asarray(negative_feats, dtype=float))
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("nv_loss needs at least one positive and one negative")
    quad = config.nv_variant in ("quadruplet", "lazy_quadruplet")
    lazy = config.nv_variant in ("lazy_triplet", "lazy_quadruplet")
    if quad and neg.shape[0] < 2:
        raise ValueError("quadruplet variants need at least two negatives")
    n_pos, n_neg = pos.shape[0], neg.shape[0]
    grads = np.zeros((1 + n_pos + n_neg, a.shape[0]))

    regular = neg[:-1] if quad else neg
    ap = a[None, :] - pos
    an = a[None, :] - regular
    d_ap = np.einsum("ij,ij->i", ap, ap)
    d_an = np.einsum("ij,ij->i", an, an)

    value, sel = _hinge_terms(d_ap, d_an, config.alpha, lazy)
    row = sel.sum(axis=1)
    col = sel.sum(axis=0)
    grads[0] += 2.0 * (row @ ap) - 2.0 * (col @ an)
    grads[1 : 1 + n_pos] -= 2.0 * row[:, None] * ap
    grads[1 + n_pos : 1 + n_pos + regular.shape[0]] += 2.0 * col[:, None] * an

    if quad:
        if config.beta is None:
            raise ValueError("quadruplet variants require a resolved beta")
        other = neg[-1]
        nn = regular - other[None, :]
        d_nn = np.einsum("ij,ij->i", nn, nn)
        value2, sel2 = _hinge_terms(d_ap, d_nn, config.beta, lazy)
        row2 = sel2.sum(axis=1)
        col2 = sel2.sum(axis=0)
        value += value2
        grads[0] += 2.0 * (row2 @ ap)
        grads[1 : 1 + n_pos] -= 2.0 * row2[:, None] * ap
        grads[1 + n_pos : 1 + n_pos + regular.shape[0]] -= 2.0 * col2[:, None] * nn
        grads[-1] += 2.0 * (col2 @ nn)

    return LossValue(value, grads)


def combined_loss(
    anchor_feat,
    positive_feats,
    negative_feats,
    anchor_location,
    positive_locations,
    config: LossConfig,
    negative_locations=None,
    vg_pairs=None,
) -> LossValue:
    """Margin loss plus ``gamma`` times the proportionality loss.

    By default the proportionality term runs over the (anchor, positive)
    pairs. ``vg_pairs`` may name any positive pairs among the stacked
    tuple members ``[anchor, positives..., negatives...]`` (negatives
    mined far from the anchor can still be mutually close); indices into
    the negatives require ``negative_locations``. With ``gamma == 0`` the
    result equals :func:`nv_loss` exactly and ``lam`` need not be
    resolved. Gradient rows follow the same stacking.
    """
    nv = nv_loss(anchor_feat, positive_feats, negative_feats, config)
    if config.gamma == 0.0:
        return LossValue(nv.value, nv.feature_grads, nv_value=nv.value, vg_value=0.0)
    pos = np.atleast_2d(np.asarray(positive_feats, dtype=float))
    neg = np.atleast_2d(np.asarray(negative_feats, dtype=float))
    n_pos = pos.shape[0]
    anchor = np.asarray(anchor_feat, dtype=float).reshape(1, -1)
    loc_rows = [
        np.asarray(anchor_location, dtype=float).reshape(1, -1),
        np.atleast_2d(np.asarray(positive_locations, dtype=float)),
    ]
    if vg_pairs is None:
        feats = np.vstack([anchor, pos])
        pairs = np.column_stack([np.zeros(n_pos, dtype=int), np.arange(1, n_pos + 1)])
        vg_rows = 1 + n_pos
    else:
        if negative_locations is None:
            raise ValueError("vg_pairs over negatives require negative_locations")
        feats = np.vstack([anchor, pos, neg])
        loc_rows.append(np.atleast_2d(np.asarray(negative_locations, dtype=float)))
        pairs = np.asarray(vg_pairs, dtype=int).reshape(-1, 2)
        vg_rows = feats.shape[0]
    vg = vg_loss(feats, np.vstack(loc_rows), pairs, config)
    grads = nv.feature_grads.copy()
    grads[:vg_rows] += config.gamma * vg.feature_grads
    return LossValue(
        nv.value + config.gamma * vg.value,
        grads,
        nv_value=nv.value,
        vg_value=vg.value,
    )
