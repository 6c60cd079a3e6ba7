"""Trajectory recovery from feature distances alone.

Builds the masked distance matrix from scaled feature distances, completes
a rank-2 centered Gram matrix against the masked entries, extracts
coordinates by classical scaling, refines them with SMACOF, and scores
estimates by similarity-aligned RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .geometry import as_points, kappa, pairwise_sq_edm

__all__ = [
    "DisconnectedMaskError",
    "GramCompletion",
    "MaskedEDM",
    "RecoveryResult",
    "TrajectoryEstimate",
    "build_masked_edm",
    "classical_mds",
    "complete_gram",
    "gram_from_edm",
    "mask_components",
    "procrustes_align",
    "recover_trajectory",
    "smacof",
]


class DisconnectedMaskError(ValueError):
    """Mask graph splits into several components; recovery is ill-posed."""

    def __init__(self, components):
        self.components = components
        sizes = ", ".join(str(len(c)) for c in components)
        super().__init__(
            f"mask graph has {len(components)} connected components (sizes: {sizes})"
        )


@dataclass(frozen=True)
class MaskedEDM:
    """Geometric-scaled squared-distance matrix with a binary observation mask."""

    D: np.ndarray
    M: np.ndarray


@dataclass
class TrajectoryEstimate:
    """Recovered 2D points plus alignment and refinement metadata."""

    points: np.ndarray
    method: str
    aligned_rmse: Optional[float] = None
    aligned_points: Optional[np.ndarray] = None
    stress_trace: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class GramCompletion:
    """Rank-2 centered Gram matrix fitted to the masked distances."""

    gram: np.ndarray
    points: np.ndarray
    objective: float
    converged: bool
    iterations: int


def build_masked_edm(features, lam: float, r1: float) -> MaskedEDM:
    """Masked matrix of lam-scaled squared feature distances.

    Entries are masked in iff the scaled distance is at most ``r1**2``
    (inclusive); the diagonal is always masked in.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not r1 > 0:
        raise ValueError("r1 must be positive")
    d = lam * pairwise_sq_edm(features)
    mask = d <= r1 * r1
    np.fill_diagonal(mask, True)
    return MaskedEDM(D=d, M=mask)


def mask_components(mask) -> list[np.ndarray]:
    """Connected components of the mask graph via union-find."""
    m = np.asarray(mask, dtype=bool)
    n = m.shape[0]
    parent = np.arange(n)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    iu, ju = np.nonzero(np.triu(m, k=1))
    for a, b in zip(iu, ju):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[rb] = ra
    roots = np.array([find(int(i)) for i in range(n)])
    return [np.flatnonzero(roots == r) for r in np.unique(roots)]


def gram_from_edm(edm) -> np.ndarray:
    """Double-centered Gram matrix: G = -1/2 J D J with J = I - 11^T/n."""
    d = np.asarray(edm, dtype=float)
    n = d.shape[0]
    j = np.eye(n) - np.ones((n, n)) / n
    return -0.5 * (j @ d @ j)


def classical_mds(gram) -> np.ndarray:
    """Coordinates from the top-2 eigenpairs of a Gram matrix.

    Negative eigenvalues are clamped to zero; raises when no eigenvalue
    is positive (degenerate Gram).
    """
    g = np.asarray(gram, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("gram matrix must be square")
    if not np.allclose(g, g.T, atol=1e-8 * max(1.0, float(np.abs(g).max()))):
        raise ValueError("gram matrix must be symmetric")
    evals, evecs = np.linalg.eigh(0.5 * (g + g.T))
    order = np.argsort(evals)[::-1]
    top = evals[order[:2]]
    if top[0] <= 0:
        raise ValueError("degenerate Gram matrix: no positive eigenvalue")
    top = np.maximum(top, 0.0)
    return evecs[:, order[:2]] * np.sqrt(top)[None, :]


def _geodesic_fill(masked: MaskedEDM) -> np.ndarray:
    """Complete the squared-distance matrix with squared graph geodesics."""
    weights = np.where(masked.M, np.maximum(np.sqrt(np.maximum(masked.D, 0.0)), 1e-12), 0.0)
    np.fill_diagonal(weights, 0.0)
    graph = csr_matrix(weights)
    geo = shortest_path(graph, method="D", directed=False)
    return geo * geo


def complete_gram(masked: MaskedEDM, max_iters: int = 2000, tol: float = 1e-10) -> GramCompletion:
    """Fit a rank-2 centered Gram matrix to the masked distances.

    Minimizes ``||M o (D - kappa(Y Y^T))||_F^2`` over planar coordinates
    ``Y`` (rank and positive-semidefiniteness hold by construction),
    initialized from classical scaling of a geodesic-completed matrix.
    Non-convergence returns the last iterate with ``converged=False``.
    """
    d = np.asarray(masked.D, dtype=float)
    m = np.asarray(masked.M, dtype=bool)
    n = d.shape[0]
    if n < 3:
        raise ValueError("completion needs at least 3 points")
    components = mask_components(m)
    if len(components) > 1:
        raise DisconnectedMaskError(components)
    mf = m.astype(float)

    y0 = classical_mds(gram_from_edm(_geodesic_fill(masked)))

    def objective(flat):
        y = flat.reshape(n, 2)
        sq = np.einsum("ij,ij->i", y, y)
        s = sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)
        e = mf * (s - d)
        value = float(np.sum(e * e))
        grad = 8.0 * (e.sum(axis=1)[:, None] * y - e @ y)
        return value, grad.ravel()

    result = minimize(
        objective,
        y0.ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iters, "ftol": tol, "gtol": 1e-12},
    )
    y = result.x.reshape(n, 2)
    y = y - y.mean(axis=0)
    return GramCompletion(
        gram=y @ y.T,
        points=y,
        objective=float(result.fun),
        converged=bool(result.success),
        iterations=int(result.nit),
    )


def _stress(x: np.ndarray, delta: np.ndarray, weights: np.ndarray) -> float:
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return 0.5 * float(np.sum(weights * (delta - dist) ** 2))


def smacof(masked: MaskedEDM, init, max_iters: int = 300, tol: float = 1e-9) -> TrajectoryEstimate:
    """Refine a configuration by stress majorization under the mask weights.

    Iterates the weighted Guttman transform on targets ``sqrt(D)``;
    stops when the relative stress decrease falls below ``tol``. The
    recorded stress trace is non-increasing.
    """
    d = np.asarray(masked.D, dtype=float)
    m = np.asarray(masked.M, dtype=bool)
    n = d.shape[0]
    x = as_points(init).copy()
    if x.shape != (n, 2):
        raise ValueError(f"init must have shape ({n}, 2)")
    weights = m.astype(float)
    np.fill_diagonal(weights, 0.0)
    if np.any(weights.sum(axis=1) == 0):
        isolated = np.flatnonzero(weights.sum(axis=1) == 0)
        raise ValueError(f"isolated points under the mask: {isolated.tolist()}")
    delta = np.sqrt(np.maximum(d, 0.0)) * (weights > 0)
    v = np.diag(weights.sum(axis=1)) - weights
    v_pinv = np.linalg.pinv(v)

    trace = [_stress(x, delta, weights)]
    for _ in range(max_iters):
        diff = x[:, None, :] - x[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, delta / np.where(dist > 0, dist, 1.0), 0.0)
        b = -weights * ratio
        np.fill_diagonal(b, 0.0)
        np.fill_diagonal(b, -b.sum(axis=1))
        x_new = v_pinv @ (b @ x)
        stress_new = _stress(x_new, delta, weights)
        prev = trace[-1]
        if stress_new > prev:
            break
        trace.append(stress_new)
        x = x_new
        if prev <= 0 or (prev - stress_new) / prev < tol:
            break
    return TrajectoryEstimate(points=x, method="smacof", stress_trace=np.array(trace))


def procrustes_align(estimate, ground_truth, with_scale: bool = True, allow_reflection: bool = True):
    """Best similarity transform of the estimate onto the ground truth.

    Returns the transformed points and the RMSE in meters. Set
    ``with_scale=False`` for a rigid alignment; reflections are part of
    the search unless disabled.
    """
    x = as_points(estimate)
    y = as_points(ground_truth)
    if x.shape != y.shape:
        raise ValueError(f"point sets must match in shape, got {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError("alignment needs at least 2 points")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = float(np.sum(xc * xc)) / n
    if np.allclose(yc, 0.0):
        raise ValueError("degenerate ground truth: all points coincide")
    if var_x == 0.0:
        raise ValueError("degenerate estimate: all points coincide")
    cov = yc.T @ xc / n
    u, s, vt = np.linalg.svd(cov)
    sign = np.eye(x.shape[1])
    if not allow_reflection and np.linalg.det(u @ vt) < 0:
        sign[-1, -1] = -1.0
    rot = u @ sign @ vt
    scale = float(np.sum(s * np.diag(sign))) / var_x if with_scale else 1.0
    aligned = scale * (xc @ rot.T) + mu_y
    rmse = float(np.sqrt(np.mean(np.sum((aligned - y) ** 2, axis=1))))
    return aligned, rmse


@dataclass
class RecoveryResult:
    """Everything produced by the recovery pipeline for one query sequence."""

    masked: MaskedEDM
    completion: GramCompletion
    completed_edm: np.ndarray
    mds_estimate: TrajectoryEstimate
    smacof_estimate: TrajectoryEstimate


def recover_trajectory(
    features,
    lam: float,
    r1: float,
    ground_truth=None,
    completion_iters: int = 2000,
    completion_tol: float = 1e-10,
    smacof_iters: int = 300,
    smacof_tol: float = 1e-9,
    with_scale: bool = True,
) -> RecoveryResult:
    """Full pipeline: masked EDM, Gram completion, MDS points, SMACOF refinement.

    With ground truth given, both estimates carry aligned points and RMSE.
    """
    masked = build_masked_edm(features, lam, r1)
    completion = complete_gram(masked, max_iters=completion_iters, tol=completion_tol)
    mds_points = classical_mds(completion.gram)
    mds_estimate = TrajectoryEstimate(points=mds_points, method="classical_mds")
    smacof_estimate = smacof(masked, mds_points, max_iters=smacof_iters, tol=smacof_tol)
    if ground_truth is not None:
        gt = as_points(ground_truth)
        for est in (mds_estimate, smacof_estimate):
            aligned, rmse = procrustes_align(est.points, gt, with_scale=with_scale)
            est.aligned_points = aligned
            est.aligned_rmse = rmse
    return RecoveryResult(
        masked=masked,
        completion=completion,
        completed_edm=kappa(completion.gram),
        mds_estimate=mds_estimate,
        smacof_estimate=smacof_estimate,
    )
