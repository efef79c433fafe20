# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core.

Grid-hash implementations of the hot loops. Results must be bit-identical
to ``numpy_backend``: same float64 arithmetic (dx*dx + dy*dy + dz*dz) and
the same (distance^2, index) tie rule, so backend selection never changes
pipeline output.
"""

from libc.math cimport floor
from libc.stdint cimport int64_t, uint64_t

import numpy as np

name = "cy"

DEF MAX_D2 = 1.7976931348623157e308


cdef inline uint64_t _mix(uint64_t x) noexcept nogil:
    x ^= x >> 33
    x *= <uint64_t>0xff51afd7ed558ccd
    x ^= x >> 33
    x *= <uint64_t>0xc4ceb9fe1a85ec53
    x ^= x >> 33
    return x


cdef inline uint64_t _hash3(int64_t a, int64_t b, int64_t c) noexcept nogil:
    return _mix(<uint64_t>a * <uint64_t>0x9E3779B97F4A7C15
                + _mix(<uint64_t>b + _mix(<uint64_t>c)))


cdef inline int64_t _pow2_at_least(int64_t n) noexcept nogil:
    cdef int64_t s = 16
    while s < n:
        s <<= 1
    return s


cdef int64_t _assign_groups(const int64_t[:, ::1] keys, int64_t[::1] table,
                            int64_t[:, ::1] ukeys, int64_t[::1] gid) noexcept nogil:
    """First-seen group id per key triple via open addressing."""
    cdef int64_t n = keys.shape[0]
    cdef int64_t mask = table.shape[0] - 1
    cdef int64_t i, g, slot, ng = 0
    cdef int64_t a, b, c
    for i in range(n):
        a = keys[i, 0]; b = keys[i, 1]; c = keys[i, 2]
        slot = <int64_t>(_hash3(a, b, c) & <uint64_t>mask)
        while True:
            g = table[slot]
            if g == -1:
                table[slot] = ng
                ukeys[ng, 0] = a; ukeys[ng, 1] = b; ukeys[ng, 2] = c
                gid[i] = ng
                ng += 1
                break
            if ukeys[g, 0] == a and ukeys[g, 1] == b and ukeys[g, 2] == c:
                gid[i] = g
                break
            slot = (slot + 1) & mask
    return ng


cdef inline int64_t _lookup_group(int64_t a, int64_t b, int64_t c,
                                  int64_t[::1] table, int64_t[:, ::1] ukeys) noexcept nogil:
    cdef int64_t mask = table.shape[0] - 1
    cdef int64_t slot = <int64_t>(_hash3(a, b, c) & <uint64_t>mask)
    cdef int64_t g
    while True:
        g = table[slot]
        if g == -1:
            return -1
        if ukeys[g, 0] == a and ukeys[g, 1] == b and ukeys[g, 2] == c:
            return g
        slot = (slot + 1) & mask


def cell_group_order(keys):
    """See numpy_backend.cell_group_order; identical contract."""
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    cdef int64_t n = keys.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), np.zeros(1, dtype=np.int64)
    table_np = np.full(_pow2_at_least(2 * n), -1, dtype=np.int64)
    ukeys_np = np.empty((n, 3), dtype=np.int64)
    gid_np = np.empty(n, dtype=np.int64)
    cdef const int64_t[:, ::1] kv = keys
    cdef int64_t[::1] table = table_np
    cdef int64_t[:, ::1] ukeys = ukeys_np
    cdef int64_t[::1] gid = gid_np
    cdef int64_t g = _assign_groups(kv, table, ukeys, gid)

    u = ukeys_np[:g]
    perm = np.lexsort((u[:, 2], u[:, 1], u[:, 0]))
    rank_np = np.empty(g, dtype=np.int64)
    rank_np[perm] = np.arange(g, dtype=np.int64)
    counts = np.bincount(gid_np, minlength=g).astype(np.int64)
    starts_np = np.concatenate(([0], np.cumsum(counts[perm]))).astype(np.int64)
    cursor_np = starts_np[:-1].copy()
    order_np = np.empty(n, dtype=np.int64)

    cdef int64_t[::1] rank = rank_np
    cdef int64_t[::1] cursor = cursor_np
    cdef int64_t[::1] order = order_np
    cdef int64_t i, r
    with nogil:
        for i in range(n):
            r = rank[gid[i]]
            order[cursor[r]] = i
            cursor[r] += 1
    return order_np, starts_np


cdef void _cells_of(const double[:, ::1] pos, double h, double ox, double oy, double oz,
                    int64_t[:, ::1] out) noexcept nogil:
    cdef int64_t i
    for i in range(pos.shape[0]):
        out[i, 0] = <int64_t>floor((pos[i, 0] - ox) / h)
        out[i, 1] = <int64_t>floor((pos[i, 1] - oy) / h)
        out[i, 2] = <int64_t>floor((pos[i, 2] - oz) / h)


cdef void _bucket_fill(const int64_t[::1] gid, const int64_t[::1] starts,
                       int64_t[::1] cursor, int64_t[::1] items) noexcept nogil:
    cdef int64_t i
    for i in range(gid.shape[0]):
        items[cursor[gid[i]]] = i
        cursor[gid[i]] += 1


cdef class _Grid:
    """Hash-bucketed uniform grid over one point set (cell size = h)."""
    cdef object table_np, ukeys_np, starts_np, items_np
    cdef int64_t[::1] table
    cdef int64_t[:, ::1] ukeys
    cdef int64_t[::1] starts
    cdef int64_t[::1] items
    cdef double h, ox, oy, oz
    cdef int64_t ng

    def __init__(self, pos_np, double h):
        cdef const double[:, ::1] pos = pos_np
        cdef int64_t n = pos.shape[0]
        self.h = h
        mins = pos_np.min(axis=0)
        self.ox = mins[0]; self.oy = mins[1]; self.oz = mins[2]
        cells_np = np.empty((n, 3), dtype=np.int64)
        cdef int64_t[:, ::1] cells = cells_np
        _cells_of(pos, h, self.ox, self.oy, self.oz, cells)
        self.table_np = np.full(_pow2_at_least(2 * n), -1, dtype=np.int64)
        self.ukeys_np = np.empty((n, 3), dtype=np.int64)
        gid_np = np.empty(n, dtype=np.int64)
        self.table = self.table_np
        self.ukeys = self.ukeys_np
        cdef int64_t[::1] gid = gid_np
        self.ng = _assign_groups(cells, self.table, self.ukeys, gid)
        counts = np.bincount(gid_np, minlength=self.ng).astype(np.int64)
        self.starts_np = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        cursor_np = self.starts_np[:-1].copy()
        self.items_np = np.empty(n, dtype=np.int64)
        self.starts = self.starts_np
        self.items = self.items_np
        cdef int64_t[::1] cursor = cursor_np
        _bucket_fill(gid, self.starts, cursor, self.items)

    cdef inline int64_t cell_coord(self, double x, int axis) noexcept nogil:
        if axis == 0:
            return <int64_t>floor((x - self.ox) / self.h)
        if axis == 1:
            return <int64_t>floor((x - self.oy) / self.h)
        return <int64_t>floor((x - self.oz) / self.h)


def nn_within(qpos_np, kpos_np, double eps):
    """See numpy_backend.nn_within; identical contract."""
    qpos_np = np.ascontiguousarray(qpos_np, dtype=np.float64)
    kpos_np = np.ascontiguousarray(kpos_np, dtype=np.float64)
    cdef int64_t nq = qpos_np.shape[0]
    cdef int64_t nk = kpos_np.shape[0]
    out_np = np.full(nq, -1, dtype=np.int64)
    if nq == 0 or nk == 0:
        return out_np
    grid = _Grid(kpos_np, eps)
    cdef _Grid G = grid
    cdef const double[:, ::1] q = qpos_np
    cdef const double[:, ::1] kp = kpos_np
    cdef int64_t[::1] out = out_np
    cdef double eps2 = eps * eps
    cdef int64_t i, j, t, g, cx, cy, cz, dx, dy, dz
    cdef double best, d2, ddx, ddy, ddz
    cdef int64_t bestj
    with nogil:
        for i in range(nq):
            cx = G.cell_coord(q[i, 0], 0)
            cy = G.cell_coord(q[i, 1], 1)
            cz = G.cell_coord(q[i, 2], 2)
            best = MAX_D2
            bestj = -1
            for dx in range(-1, 2):
                for dy in range(-1, 2):
                    for dz in range(-1, 2):
                        g = _lookup_group(cx + dx, cy + dy, cz + dz, G.table, G.ukeys)
                        if g == -1:
                            continue
                        for t in range(G.starts[g], G.starts[g + 1]):
                            j = G.items[t]
                            ddx = q[i, 0] - kp[j, 0]
                            ddy = q[i, 1] - kp[j, 1]
                            ddz = q[i, 2] - kp[j, 2]
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 < best or (d2 == best and j < bestj):
                                best = d2
                                bestj = j
            if best <= eps2:
                out[i] = bestj
    return out_np


cdef inline bint _heap_worse(double d1, int64_t j1, double d2, int64_t j2) noexcept nogil:
    return d1 > d2 or (d1 == d2 and j1 > j2)


cdef void _heap_siftdown(double* hd, int64_t* hj, int64_t s, int64_t i) noexcept nogil:
    cdef int64_t child
    cdef double td
    cdef int64_t tj
    while True:
        child = 2 * i + 1
        if child >= s:
            return
        if child + 1 < s and _heap_worse(hd[child + 1], hj[child + 1], hd[child], hj[child]):
            child += 1
        if _heap_worse(hd[child], hj[child], hd[i], hj[i]):
            td = hd[i]; hd[i] = hd[child]; hd[child] = td
            tj = hj[i]; hj[i] = hj[child]; hj[child] = tj
            i = child
        else:
            return


cdef void _heap_push(double* hd, int64_t* hj, int64_t* s, int64_t k,
                     double d, int64_t j) noexcept nogil:
    cdef int64_t i, parent
    cdef double td
    cdef int64_t tj
    if s[0] < k:
        i = s[0]
        hd[i] = d; hj[i] = j
        s[0] += 1
        while i > 0:
            parent = (i - 1) >> 1
            if _heap_worse(hd[i], hj[i], hd[parent], hj[parent]):
                td = hd[i]; hd[i] = hd[parent]; hd[parent] = td
                tj = hj[i]; hj[i] = hj[parent]; hj[parent] = tj
                i = parent
            else:
                break
    elif _heap_worse(hd[0], hj[0], d, j):
        hd[0] = d; hj[0] = j
        _heap_siftdown(hd, hj, s[0], 0)


def knn(pos_np, int k):
    """See numpy_backend.knn; identical contract."""
    pos_np = np.ascontiguousarray(pos_np, dtype=np.float64)
    cdef int64_t n = pos_np.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    mins = pos_np.min(axis=0)
    maxs = pos_np.max(axis=0)
    cdef double ext = float(np.max(maxs - mins))
    cdef double h
    if ext > 0.0:
        h = ext / max(1.0, float(np.ceil(float(n) ** (1.0 / 3.0))))
    else:
        h = 1.0
    grid = _Grid(pos_np, h)
    cdef _Grid G = grid
    out_np = np.empty((n, k), dtype=np.int64)
    heap_d_np = np.empty(k, dtype=np.float64)
    heap_j_np = np.empty(k, dtype=np.int64)
    cdef const double[:, ::1] p = pos_np
    cdef int64_t[:, ::1] out = out_np
    cdef double[::1] hd_mv = heap_d_np
    cdef int64_t[::1] hj_mv = heap_j_np
    cdef double* hd = &hd_mv[0]
    cdef int64_t* hj = &hj_mv[0]
    cdef int64_t i, j, t, g, s, cx, cy, cz, ox, oy, oz, r, max_r, m
    cdef int64_t lox, hix, loy, hiy, loz, hiz
    cdef double d2, ddx, ddy, ddz, thr
    cdef bint stop_after, face_x, face_y
    cdef int64_t kk = k

    # grid extents in cells, to bound the ring expansion
    cdef int64_t dimx = G.cell_coord(maxs[0], 0) + 1
    cdef int64_t dimy = G.cell_coord(maxs[1], 1) + 1
    cdef int64_t dimz = G.cell_coord(maxs[2], 2) + 1

    with nogil:
        for i in range(n):
            cx = G.cell_coord(p[i, 0], 0)
            cy = G.cell_coord(p[i, 1], 1)
            cz = G.cell_coord(p[i, 2], 2)
            s = 0
            stop_after = False
            max_r = dimx + dimy + dimz  # safe upper bound on shells
            r = 0
            while r <= max_r:
                # clamp shell to grid bounds per axis
                lox = -r
                if cx - r < 0:
                    lox = -cx
                hix = r
                if cx + r > dimx - 1:
                    hix = dimx - 1 - cx
                loy = -r
                if cy - r < 0:
                    loy = -cy
                hiy = r
                if cy + r > dimy - 1:
                    hiy = dimy - 1 - cy
                loz = -r
                if cz - r < 0:
                    loz = -cz
                hiz = r
                if cz + r > dimz - 1:
                    hiz = dimz - 1 - cz
                for ox in range(lox, hix + 1):
                    face_x = (ox == -r or ox == r)
                    for oy in range(loy, hiy + 1):
                        face_y = (oy == -r or oy == r)
                        for oz in range(loz, hiz + 1):
                            if not (face_x or face_y or oz == -r or oz == r):
                                continue
                            g = _lookup_group(cx + ox, cy + oy, cz + oz, G.table, G.ukeys)
                            if g == -1:
                                continue
                            for t in range(G.starts[g], G.starts[g + 1]):
                                j = G.items[t]
                                ddx = p[i, 0] - p[j, 0]
                                ddy = p[i, 1] - p[j, 1]
                                ddz = p[i, 2] - p[j, 2]
                                d2 = ddx * ddx + ddy * ddy + ddz * ddz
                                _heap_push(hd, hj, &s, kk, d2, j)
                if stop_after:
                    break
                if s == kk:
                    thr = r * G.h
                    if thr * thr > hd[0]:
                        # one safety shell absorbs boundary rounding
                        stop_after = True
                r += 1
            # heap-sort: extract worst-first into out row, reversed
            m = s
            while m > 1:
                ddx = hd[0]; hd[0] = hd[m - 1]; hd[m - 1] = ddx
                t = hj[0]; hj[0] = hj[m - 1]; hj[m - 1] = t
                m -= 1
                _heap_siftdown(hd, hj, m, 0)
            for t in range(kk):
                out[i, t] = hj[t]
    return out_np


def radius_neighbors(pos_np, scene_np, double rho):
    """See numpy_backend.radius_neighbors; identical contract."""
    pos_np = np.ascontiguousarray(pos_np, dtype=np.float64)
    scene_np = np.ascontiguousarray(scene_np, dtype=np.int64)
    cdef int64_t n = pos_np.shape[0]
    counts_np = np.zeros(n, dtype=np.int64)
    if n == 0:
        return counts_np, np.empty(0, dtype=np.int64)
    grid = _Grid(pos_np, rho)
    cdef _Grid G = grid
    cdef const double[:, ::1] p = pos_np
    cdef const int64_t[::1] scene = scene_np
    cdef int64_t[::1] counts = counts_np
    cdef double rho2 = rho * rho
    cdef int64_t i, j, t, g, cx, cy, cz, dx, dy, dz, c
    cdef double d2, ddx, ddy, ddz

    # pass 1: counts
    with nogil:
        for i in range(n):
            cx = G.cell_coord(p[i, 0], 0)
            cy = G.cell_coord(p[i, 1], 1)
            cz = G.cell_coord(p[i, 2], 2)
            c = 0
            for dx in range(-1, 2):
                for dy in range(-1, 2):
                    for dz in range(-1, 2):
                        g = _lookup_group(cx + dx, cy + dy, cz + dz, G.table, G.ukeys)
                        if g == -1:
                            continue
                        for t in range(G.starts[g], G.starts[g + 1]):
                            j = G.items[t]
                            if scene[j] != scene[i]:
                                continue
                            ddx = p[i, 0] - p[j, 0]
                            ddy = p[i, 1] - p[j, 1]
                            ddz = p[i, 2] - p[j, 2]
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 <= rho2:
                                c += 1
            counts[i] = c

    offs_np = np.concatenate(([0], np.cumsum(counts_np))).astype(np.int64)
    flat_np = np.empty(int(offs_np[-1]), dtype=np.int64)
    cdef int64_t[::1] offs = offs_np
    cdef int64_t[::1] flat = flat_np
    cdef int64_t w, a, b_, key

    # pass 2: fill + per-segment insertion sort (ascending index)
    with nogil:
        for i in range(n):
            cx = G.cell_coord(p[i, 0], 0)
            cy = G.cell_coord(p[i, 1], 1)
            cz = G.cell_coord(p[i, 2], 2)
            w = offs[i]
            for dx in range(-1, 2):
                for dy in range(-1, 2):
                    for dz in range(-1, 2):
                        g = _lookup_group(cx + dx, cy + dy, cz + dz, G.table, G.ukeys)
                        if g == -1:
                            continue
                        for t in range(G.starts[g], G.starts[g + 1]):
                            j = G.items[t]
                            if scene[j] != scene[i]:
                                continue
                            ddx = p[i, 0] - p[j, 0]
                            ddy = p[i, 1] - p[j, 1]
                            ddz = p[i, 2] - p[j, 2]
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 <= rho2:
                                flat[w] = j
                                w += 1
            for a in range(offs[i] + 1, offs[i + 1]):
                key = flat[a]
                b_ = a - 1
                while b_ >= offs[i] and flat[b_] > key:
                    flat[b_ + 1] = flat[b_]
                    b_ -= 1
                flat[b_ + 1] = key
    return counts_np, flat_np


def csr_row_sum(values_np, flat_np, counts_np):
    """See numpy_backend.csr_row_sum; identical contract and summation order."""
    values_np = np.ascontiguousarray(values_np, dtype=np.float64)
    flat_np = np.ascontiguousarray(flat_np, dtype=np.int64)
    counts_np = np.ascontiguousarray(counts_np, dtype=np.int64)
    cdef int64_t n = counts_np.shape[0]
    cdef int64_t h = values_np.shape[1]
    out_np = np.zeros((n, h), dtype=np.float64)
    cdef const double[:, ::1] v = values_np
    cdef const int64_t[::1] flat = flat_np
    cdef const int64_t[::1] counts = counts_np
    cdef double[:, ::1] out = out_np
    cdef int64_t i, t, c, w = 0, j
    with nogil:
        for i in range(n):
            for t in range(counts[i]):
                j = flat[w]
                w += 1
                for c in range(h):
                    out[i, c] += v[j, c]
    return out_np
