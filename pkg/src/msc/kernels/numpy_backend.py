"""Pure-numpy kernel implementations.

Fallback backend used when the compiled core is unavailable. Every function
here defines the reference semantics the compiled backend must reproduce
bit-for-bit: squared distances are always the literal
``dx*dx + dy*dy + dz*dz`` in float64 and every tie is broken by the
lexicographic order ``(distance^2, point index)``, so results do not depend
on which backend ran them.

The neighbor searches are blocked O(n^2) scans here; the compiled backend
replaces them with grid walks. Block sizes bound peak memory, not results.
"""

from __future__ import annotations

import numpy as np

name = "py"

# max elements of a (block x n) distance matrix
_BLOCK_BUDGET = 1 << 23


def _block_rows(n_cols: int) -> int:
    return max(1, _BLOCK_BUDGET // max(1, n_cols))


def cell_group_order(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Group points by integer cell key.

    Returns ``(order, starts)`` where ``order`` lists point indices grouped
    by cell, groups in lexicographic key order, indices ascending within a
    group, and ``starts`` holds the g+1 group boundaries into ``order``.
    """
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    n = keys.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), np.zeros(1, dtype=np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    change = np.flatnonzero(np.any(sk[1:] != sk[:-1], axis=1)) + 1
    starts = np.concatenate(([0], change, [n])).astype(np.int64)
    return order.astype(np.int64), starts


def nn_within(qpos: np.ndarray, kpos: np.ndarray, eps: float) -> np.ndarray:
    """Nearest key point within ``eps`` of each query point, or -1.

    Ties in distance resolve to the smaller key index.
    """
    nq = qpos.shape[0]
    nk = kpos.shape[0]
    out = np.full(nq, -1, dtype=np.int64)
    if nq == 0 or nk == 0:
        return out
    eps2 = eps * eps
    kx, ky, kz = kpos[:, 0], kpos[:, 1], kpos[:, 2]
    for lo in range(0, nq, _block_rows(nk)):
        hi = min(nq, lo + _block_rows(nk))
        dx = qpos[lo:hi, 0, None] - kx[None, :]
        dy = qpos[lo:hi, 1, None] - ky[None, :]
        dz = qpos[lo:hi, 2, None] - kz[None, :]
        d2 = dx * dx + dy * dy + dz * dz
        best = np.argmin(d2, axis=1)  # first occurrence wins ties = smaller j
        bd = d2[np.arange(hi - lo), best]
        ok = bd <= eps2
        out[lo:hi][ok] = best[ok]
    return out


def knn(pos: np.ndarray, k: int) -> np.ndarray:
    """Exact k nearest neighbors (self included), rows sorted by (d^2, index)."""
    n = pos.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    out = np.empty((n, k), dtype=np.int64)
    px, py, pz = pos[:, 0], pos[:, 1], pos[:, 2]
    for lo in range(0, n, _block_rows(n)):
        hi = min(n, lo + _block_rows(n))
        dx = pos[lo:hi, 0, None] - px[None, :]
        dy = pos[lo:hi, 1, None] - py[None, :]
        dz = pos[lo:hi, 2, None] - pz[None, :]
        d2 = dx * dx + dy * dy + dz * dz
        b = hi - lo
        if k == n:
            sel_d = d2
            sel_j = np.broadcast_to(np.arange(n, dtype=np.int64), (b, n)).copy()
        else:
            # kth-smallest value per row, then fill ties by ascending index
            kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
            less = d2 < kth[:, None]
            n_less = less.sum(axis=1)
            eq = d2 == kth[:, None]
            fill = np.cumsum(eq, axis=1) <= (k - n_less)[:, None]
            sel = less | (eq & fill)
            # stable argsort puts the k selected columns first, ascending
            cols = np.argsort(~sel, axis=1, kind="stable")[:, :k]
            sel_j = cols.astype(np.int64)
            sel_d = np.take_along_axis(d2, cols, axis=1)
        b_k = sel_j.shape[1]
        rid = np.repeat(np.arange(b), b_k)
        o = np.lexsort((sel_j.ravel(), sel_d.ravel(), rid))
        out[lo:hi] = sel_j.ravel()[o].reshape(b, b_k)[:, :k]
    return out


def csr_row_sum(values: np.ndarray, flat: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """out[i] = sum of values[j] over the i-th CSR segment of ``flat``.

    Accumulation is strictly sequential within each segment (vectorized
    across segments), which pins the floating-point result to the same
    order the compiled backend uses.
    """
    n = counts.shape[0]
    h = values.shape[1]
    out = np.zeros((n, h))
    if flat.size == 0:
        return out
    starts = np.concatenate(([0], np.cumsum(counts)))[:-1]
    for t in range(int(counts.max())):
        rows = np.flatnonzero(counts > t)
        out[rows] += values[flat[starts[rows] + t]]
    return out


def radius_neighbors(
    pos: np.ndarray, scene: np.ndarray, rho: float
) -> tuple[np.ndarray, np.ndarray]:
    """All neighbors within ``rho`` sharing ``scene`` id (self included).

    Returns CSR-style ``(counts, flat)`` with ``flat`` ascending per point.
    """
    n = pos.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    chunks = []
    if n == 0:
        return counts, np.empty(0, dtype=np.int64)
    rho2 = rho * rho
    px, py, pz = pos[:, 0], pos[:, 1], pos[:, 2]
    for lo in range(0, n, _block_rows(n)):
        hi = min(n, lo + _block_rows(n))
        dx = pos[lo:hi, 0, None] - px[None, :]
        dy = pos[lo:hi, 1, None] - py[None, :]
        dz = pos[lo:hi, 2, None] - pz[None, :]
        d2 = dx * dx + dy * dy + dz * dz
        mask = (d2 <= rho2) & (scene[lo:hi, None] == scene[None, :])
        counts[lo:hi] = mask.sum(axis=1)
        rows, cols = np.nonzero(mask)  # row-major: ascending j per row
        chunks.append(cols.astype(np.int64))
    flat = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return counts, flat
