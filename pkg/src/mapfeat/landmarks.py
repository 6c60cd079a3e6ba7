"""Reference landmark selection: farthest-point and sequential threshold sampling."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .geometry import as_points

__all__ = ["greedy_sample", "threshold_sample"]


def greedy_sample(locations, k: int, seed=None, first_index: Optional[int] = None) -> np.ndarray:
    """Greedy farthest-point landmark selection.

    The first index is uniform under ``seed`` unless ``first_index`` is
    given; every subsequent index maximizes the minimum squared distance
    to the already-selected set, ties broken by smallest index.
    """
    locs = as_points(locations)
    n = locs.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n)) if first_index is None else int(first_index)
    if not 0 <= first < n:
        raise ValueError(f"first_index out of range: {first}")
    selected = [first]
    diff = locs - locs[first]
    min_d = np.einsum("ij,ij->i", diff, diff)
    min_d[first] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        selected.append(nxt)
        diff = locs - locs[nxt]
        np.minimum(min_d, np.einsum("ij,ij->i", diff, diff), out=min_d)
        min_d[nxt] = -1.0
    return np.array(selected, dtype=int)


def threshold_sample(locations, r_lm: float) -> np.ndarray:
    """Sequential landmark selection along an ordered trajectory.

    Index 0 is always selected; scanning forward, an index is selected
    iff its distance to the last selected landmark is at least ``r_lm``.
    """
    if not r_lm > 0:
        raise ValueError("r_lm must be positive")
    locs = as_points(locations)
    selected = [0]
    last = locs[0]
    for i in range(1, locs.shape[0]):
        if np.linalg.norm(locs[i] - last) >= r_lm:
            selected.append(i)
            last = locs[i]
    return np.array(selected, dtype=int)
