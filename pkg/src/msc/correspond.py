"""Positive-pair matching between two views of one scene.

Points are matched by proximity of their *original* (pre-spatial-
augmentation) coordinates: each query point takes its nearest key point
within epsilon, ties broken toward the smaller key index. A uniform-grid
hash accelerates the search; :func:`match_views_bruteforce` is the
exhaustive reference the fast path must agree with exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .augment import voxel_keys
from .errors import DataError
from .rng import Rng
from .viewgen import View


@dataclass(frozen=True)
class CorrespondenceMap:
    """Matched (query index, key index) pairs; query indices are distinct."""

    pairs: np.ndarray  # (n', 2) int64

    @property
    def n(self) -> int:
        return self.pairs.shape[0]


class SpatialIndex:
    """Uniform-grid hash over a fixed point set.

    Any point within ``cell_size`` of a query position is guaranteed to be
    found in the query's cell or one of its 26 neighbors.
    """

    def __init__(self, points: np.ndarray, cell_size: float):
        if cell_size <= 0:
            raise DataError("cell size must be > 0")
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.cell_size = float(cell_size)
        keys = voxel_keys(self.points, self.cell_size)
        self._order, self._starts = kernels.cell_group_order(keys)
        sorted_keys = keys[self._order[self._starts[:-1]]]
        self._cells = {tuple(k): g for g, k in enumerate(sorted_keys)}

    def neighbors_within(self, pos: np.ndarray, radius: float) -> np.ndarray:
        """Indices of stored points within ``radius`` (requires radius <= cell)."""
        if radius > self.cell_size:
            raise DataError("query radius exceeds index cell size")
        base = np.floor(pos / self.cell_size).astype(np.int64)
        found = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    g = self._cells.get((base[0] + dx, base[1] + dy, base[2] + dz))
                    if g is None:
                        continue
                    found.append(self._order[self._starts[g] : self._starts[g + 1]])
        if not found:
            return np.empty(0, dtype=np.int64)
        cand = np.concatenate(found)
        d = self.points[cand] - pos
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        return np.sort(cand[d2 <= radius * radius])


def _subsample(pairs: np.ndarray, n_max: int, rng: Rng | None) -> np.ndarray:
    if n_max is None or pairs.shape[0] <= n_max:
        return pairs
    if rng is None:
        raise DataError("n_max subsampling needs an rng")
    keep = np.sort(rng.choice(pairs.shape[0], n_max, replace=False))
    return pairs[keep]


def match_views(
    query: View,
    key: View,
    epsilon: float,
    n_max: int | None = 4096,
    rng: Rng | None = None,
    query_subset: np.ndarray | None = None,
    key_subset: np.ndarray | None = None,
) -> CorrespondenceMap:
    """Nearest key point within epsilon for each query point (original frame).

    ``query_subset``/``key_subset`` restrict the matching universe (used to
    match only unmasked points); returned indices always refer to the full
    views. More than ``n_max`` matches are uniformly subsampled.
    """
    if epsilon <= 0:
        raise DataError("epsilon must be > 0")
    if n_max is not None and n_max < 1:
        raise DataError("n_max must be >= 1")
    qpos = query.original_positions
    kpos = key.original_positions
    qids = np.arange(query.n, dtype=np.int64)
    kids = np.arange(key.n, dtype=np.int64)
    if query_subset is not None:
        qids = np.asarray(query_subset, dtype=np.int64)
        qpos = qpos[qids]
    if key_subset is not None:
        kids = np.asarray(key_subset, dtype=np.int64)
        kpos = kpos[kids]
    j = kernels.nn_within(qpos, kpos, epsilon)
    hit = j >= 0
    pairs = np.stack([qids[hit], kids[j[hit]]], axis=1)
    return CorrespondenceMap(pairs=_subsample(pairs, n_max, rng))


def match_views_bruteforce(
    query: View,
    key: View,
    epsilon: float,
    n_max: int | None = None,
    rng: Rng | None = None,
) -> CorrespondenceMap:
    """Exhaustive O(n_q * n_k) reference matcher (same tie rule)."""
    if epsilon <= 0:
        raise DataError("epsilon must be > 0")
    qpos = query.original_positions
    kpos = key.original_positions
    eps2 = epsilon * epsilon
    out = []
    for i in range(query.n):
        d = kpos - qpos[i]
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        j = int(np.argmin(d2)) if key.n else -1
        if j >= 0 and d2[j] <= eps2:
            out.append((i, j))
    pairs = (
        np.asarray(out, dtype=np.int64).reshape(-1, 2)
        if out
        else np.empty((0, 2), dtype=np.int64)
    )
    return CorrespondenceMap(pairs=_subsample(pairs, n_max, rng))
