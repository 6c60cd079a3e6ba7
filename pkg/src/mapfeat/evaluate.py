"""Top-1 retrieval localization, accuracy-vs-tolerance curves, and the
feature-vs-geometric distance diagnostic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import as_points

__all__ = [
    "AccuracyCurve",
    "accuracy_curve",
    "distance_scatter",
    "pearson",
    "top1_retrieve",
]


@dataclass(frozen=True)
class AccuracyCurve:
    """Fraction of correctly localized queries per distance tolerance.

    ``upper_bound`` is the fraction whose geometrically nearest landmark
    lies within the tolerance; no retriever can beat it.
    """

    tolerances: np.ndarray
    accuracy: np.ndarray
    upper_bound: np.ndarray


def top1_retrieve(query_features, landmark_features, method: str = "scan") -> np.ndarray:
    """Index of the nearest landmark feature per query.

    ``scan`` is the exhaustive reference (ties to the smallest index);
    ``kdtree`` is an exact accelerator that must agree on inputs in
    general position.
    """
    q = as_points(query_features)
    lm = as_points(landmark_features)
    if q.shape[1] != lm.shape[1]:
        raise ValueError(
            f"feature dimensions differ: queries {q.shape[1]}, landmarks {lm.shape[1]}"
        )
    if method == "kdtree":
        _, idx = cKDTree(lm).query(q)
        return np.asarray(idx, dtype=int)
    if method != "scan":
        raise ValueError(f"unknown retrieval method {method!r}")
    diff = q[:, None, :] - lm[None, :, :]
    d = np.einsum("qld,qld->ql", diff, diff)
    return np.argmin(d, axis=1)


def accuracy_curve(retrieved, query_locations, landmark_locations, tolerances) -> AccuracyCurve:
    """Localization accuracy and its geometric upper bound per tolerance."""
    idx = np.asarray(retrieved, dtype=int)
    q = as_points(query_locations)
    lm = as_points(landmark_locations)
    if q.shape[0] == 0:
        raise ValueError("accuracy_curve needs at least one query")
    if idx.shape[0] != q.shape[0]:
        raise ValueError("retrieved indices and query locations must align")
    tol = np.atleast_1d(np.asarray(tolerances, dtype=float))
    err = np.linalg.norm(q - lm[idx], axis=1)
    diff = q[:, None, :] - lm[None, :, :]
    best = np.sqrt(np.einsum("qld,qld->ql", diff, diff).min(axis=1))
    acc = np.array([np.mean(err <= t) for t in tol])
    ub = np.array([np.mean(best <= t) for t in tol])
    return AccuracyCurve(tolerances=tol, accuracy=acc, upper_bound=ub)


def pearson(feature_sq_dists, geometric_sq_dists) -> float:
    """Sample Pearson correlation between paired squared distances."""
    x = np.asarray(feature_sq_dists, dtype=float).ravel()
    y = np.asarray(geometric_sq_dists, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs must have equal length")
    if x.shape[0] < 2:
        raise ValueError("pearson needs at least two pairs")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("degenerate diagnostic: zero variance input")
    return float(np.dot(xc, yc) / (sx * sy))


def distance_scatter(features, locations, within: Optional[float] = None):
    """Per-pair squared feature and geometric distances over all pairs.

    ``within`` restricts the pairs to geometric distance at most that
    many meters (the positive-radius regime filter).
    """
    f = as_points(features)
    x = as_points(locations)
    if f.shape[0] != x.shape[0]:
        raise ValueError("features and locations must align")
    n = f.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    df = f[iu] - f[ju]
    dx = x[iu] - x[ju]
    feat_sq = np.einsum("ij,ij->i", df, df)
    geo_sq = np.einsum("ij,ij->i", dx, dx)
    if within is not None:
        keep = geo_sq <= within * within
        feat_sq, geo_sq = feat_sq[keep], geo_sq[keep]
    return geo_sq, feat_sq
