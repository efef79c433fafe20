"""Shared test oracles, independent of the package code paths they check."""

import numpy as np


def finite_difference(loss_fn, array: np.ndarray, coords=None, h: float = 1e-5):
    """Central finite differences of a scalar function at selected coords.

    Mutates/restores the array in place so closures over it see the
    perturbation; this is the test-side reference for every analytic
    gradient in the package.
    """
    flat = array.ravel()
    coords = list(range(flat.size)) if coords is None else list(coords)
    out = np.empty(len(coords))
    for t, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + h
        lp = loss_fn()
        flat[c] = orig - h
        lm = loss_fn()
        flat[c] = orig
        out[t] = (lp - lm) / (2.0 * h)
    return out


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def brute_voxel_count(coords: np.ndarray, voxel: float) -> int:
    """Hash-set count of occupied voxels (oracle for grid_sample)."""
    keys = np.floor(coords / voxel).astype(np.int64)
    return len({tuple(k) for k in keys})


def brute_knn(pos: np.ndarray, k: int) -> np.ndarray:
    """Plain-loop exact kNN with the (d2, index) tie rule."""
    n = pos.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d = pos - pos[i]
        d2 = d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2
        order = sorted(range(n), key=lambda j: (d2[j], j))
        out[i] = order[:k]
    return out


def pairwise_distances(pos: np.ndarray) -> np.ndarray:
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))
