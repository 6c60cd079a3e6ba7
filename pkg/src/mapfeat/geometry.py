"""Distance-matrix primitives and geometric pair classification.

Locations are (n, 2) float arrays in meters, feature vectors (n, d) float
arrays. Distance matrices hold squared Euclidean distances throughout;
radii are given in linear meters and squared internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PairSets",
    "angle_diff",
    "classify_pairs",
    "kappa",
    "pairwise_sq_edm",
]


def as_points(points) -> np.ndarray:
    """Coerce input to a (n, d) float array, rejecting ragged input."""
    try:
        pts = np.asarray(points, dtype=float)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"points do not form a uniform array: {exc}") from None
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must form a non-empty (n, d) array")
    return pts


def pairwise_sq_edm(points) -> np.ndarray:
    """Squared Euclidean distance matrix of a point set.

    Parameters
    ----------
    points : (n, d) array_like
        One point per row; rows must share the same dimension.

    Returns
    -------
    (n, n) ndarray
        Entries ``||p_i - p_j||^2``; symmetric with zero diagonal.
    """
    pts = as_points(points)
    sq = np.einsum("ij,ij->i", pts, pts)
    d = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.maximum(d, 0.0, out=d)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def kappa(gram) -> np.ndarray:
    """Map a Gram matrix to its squared-distance matrix.

    Computes ``diag(G) 1^T - 2 G + 1 diag(G)^T``, the EDM of any point set
    whose Gram matrix is ``G``.
    """
    g = np.asarray(gram, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"gram matrix must be square, got shape {g.shape}")
    d = np.diag(g)
    return d[:, None] - 2.0 * g + d[None, :]


def angle_diff(a, b) -> np.ndarray:
    """Absolute angular difference, wrapped into [0, pi]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return np.abs(np.arctan2(np.sin(d), np.cos(d)))


@dataclass(frozen=True)
class PairSets:
    """Index pairs (i < j) labelled positive or negative by geometric radius."""

    positives: np.ndarray
    negatives: np.ndarray


def classify_pairs(locations, r1, r2, headings=None, max_heading=None) -> PairSets:
    """Split image pairs into positives (within r1) and negatives (beyond r2).

    Pairs with distance in the open band (r1, r2) belong to neither set.
    When ``headings`` and ``max_heading`` are given, pairs whose wrapped
    heading difference exceeds ``max_heading`` are excluded from the
    positives (negatives are unaffected).

    Parameters
    ----------
    locations : (n, 2) array_like
    r1, r2 : float
        Positive and negative radii in meters, ``r1 < r2``.
    headings : (n,) array_like, optional
        Heading angles in radians.
    max_heading : float, optional
        Maximum heading difference for positives, radians.
    """
    if not r1 < r2:
        raise ValueError(f"r1 must be smaller than r2, got r1={r1}, r2={r2}")
    locs = as_points(locations)
    n = locs.shape[0]
    d = pairwise_sq_edm(locs)
    iu, ju = np.triu_indices(n, k=1)
    dv = d[iu, ju]
    pos = dv <= r1 * r1
    if headings is not None and max_heading is not None:
        h = np.asarray(headings, dtype=float)
        pos &= angle_diff(h[iu], h[ju]) <= max_heading
    neg = dv >= r2 * r2
    return PairSets(
        positives=np.column_stack([iu[pos], ju[pos]]),
        negatives=np.column_stack([iu[neg], ju[neg]]),
    )
