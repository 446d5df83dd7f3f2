# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels.

Every function here mirrors ``paintbox.kernels.fallback`` exactly: same
signatures, same tie-break rules, same floating-point operation order (the
extension builds with FP contraction off), so the two backends are
interchangeable and bit-comparable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()

ctypedef cnp.int32_t i32
ctypedef cnp.int64_t i64
ctypedef cnp.float32_t f32
ctypedef cnp.float64_t f64


def exclusive_scan(bits):
    """Exclusive prefix sum of an integer array, as int64.

    Computed as a blocked two-pass scan (per-block sums, scan of the block
    sums, then local scans); integer arithmetic makes this exactly equal to
    the sequential definition.
    """
    cdef cnp.ndarray[i64, ndim=1] arr = np.ascontiguousarray(bits, dtype=np.int64)
    cdef Py_ssize_t n = arr.shape[0]
    out_np = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] out = out_np
    if n == 0:
        return out_np
    cdef Py_ssize_t block = 4096
    cdef Py_ssize_t nblocks = (n + block - 1) // block
    sums_np = np.zeros(nblocks, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] sums = sums_np
    cdef Py_ssize_t b, i, start, stop
    cdef i64 acc
    for b in range(nblocks):
        start = b * block
        stop = min(start + block, n)
        acc = 0
        for i in range(start, stop):
            acc += arr[i]
        sums[b] = acc
    cdef i64 tmp
    acc = 0
    for b in range(nblocks):
        tmp = sums[b]
        sums[b] = acc
        acc += tmp
    for b in range(nblocks):
        start = b * block
        stop = min(start + block, n)
        acc = sums[b]
        for i in range(start, stop):
            out[i] = acc
            acc += arr[i]
    return out_np


def raycast_rays(grid, origin_cell, double voxel_size, origins, dirs, double near, double far):
    """Trace rays through an occupancy-index grid (see fallback docstring)."""
    cdef cnp.ndarray[i32, ndim=3] g = np.ascontiguousarray(grid, dtype=np.int32)
    cdef cnp.ndarray[i64, ndim=1] oc = np.ascontiguousarray(origin_cell, dtype=np.int64)
    cdef cnp.ndarray[f64, ndim=2] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t nrays = o.shape[0]
    hit_np = np.full(nrays, -1, dtype=np.int32)
    thit_np = np.full(nrays, np.inf, dtype=np.float64)
    cdef cnp.ndarray[i32, ndim=1] hit = hit_np
    cdef cnp.ndarray[f64, ndim=1] thit = thit_np

    cdef i64 sx = g.shape[0], sy = g.shape[1], sz = g.shape[2]
    cdef i64 shape[3]
    shape[0] = sx; shape[1] = sy; shape[2] = sz
    cdef f64 lo[3]
    cdef f64 hi[3]
    cdef Py_ssize_t a
    for a in range(3):
        lo[a] = oc[a] * voxel_size
        hi[a] = (oc[a] + shape[a]) * voxel_size

    cdef Py_ssize_t r
    cdef f64 dv, ov, t0, t1, tn, tf, t_enter, t_exit, tcur, p
    cdef f64 tmax[3]
    cdef f64 tdelta[3]
    cdef i64 cell[3]
    cdef i64 step[3]
    cdef bint outside
    cdef Py_ssize_t max_steps = 2 * (sx + sy + sz) + 8
    cdef Py_ssize_t it, axis
    cdef i32 idx

    for r in range(nrays):
        t_enter = near
        t_exit = far
        outside = False
        for a in range(3):
            dv = d[r, a]
            ov = o[r, a]
            if dv == 0.0:
                if ov < lo[a] or ov >= hi[a]:
                    outside = True
            else:
                t0 = (lo[a] - ov) / dv
                t1 = (hi[a] - ov) / dv
                if t0 < t1:
                    tn = t0; tf = t1
                else:
                    tn = t1; tf = t0
                if tn > t_enter:
                    t_enter = tn
                if tf < t_exit:
                    t_exit = tf
        if outside or t_enter > t_exit:
            continue

        for a in range(3):
            p = (o[r, a] + t_enter * d[r, a]) / voxel_size
            cell[a] = <i64>floor(p) - oc[a]
            if cell[a] < 0:
                cell[a] = 0
            elif cell[a] >= shape[a]:
                cell[a] = shape[a] - 1
            dv = d[r, a]
            if dv > 0.0:
                step[a] = 1
            elif dv < 0.0:
                step[a] = -1
            else:
                step[a] = 0
            if dv != 0.0:
                tdelta[a] = voxel_size / (-dv if dv < 0.0 else dv)
                tmax[a] = ((oc[a] + cell[a] + (1 if step[a] > 0 else 0)) * voxel_size - o[r, a]) / dv
            else:
                tdelta[a] = INFINITY
                tmax[a] = INFINITY

        tcur = t_enter
        for it in range(max_steps):
            idx = g[cell[0], cell[1], cell[2]]
            if idx >= 0:
                hit[r] = idx
                thit[r] = tcur
                break
            axis = 0
            if tmax[1] < tmax[axis]:
                axis = 1
            if tmax[2] < tmax[axis]:
                axis = 2
            tcur = tmax[axis]
            cell[axis] += step[axis]
            tmax[axis] += tdelta[axis]
            if tcur > t_exit or cell[axis] < 0 or cell[axis] >= shape[axis]:
                break
    return hit_np, thit_np


def route_descriptors(feat, tau, left, right, descriptors):
    """Route descriptor rows through a flattened decision tree."""
    cdef cnp.ndarray[i32, ndim=1] f = np.ascontiguousarray(feat, dtype=np.int32)
    cdef cnp.ndarray[f64, ndim=1] t = np.ascontiguousarray(tau, dtype=np.float64)
    cdef cnp.ndarray[i32, ndim=1] l = np.ascontiguousarray(left, dtype=np.int32)
    cdef cnp.ndarray[i32, ndim=1] rr = np.ascontiguousarray(right, dtype=np.int32)
    cdef cnp.ndarray[f64, ndim=2] x = np.ascontiguousarray(descriptors, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    out_np = np.empty(n, dtype=np.int32)
    cdef cnp.ndarray[i32, ndim=1] out = out_np
    cdef Py_ssize_t i
    cdef i32 node, k
    for i in range(n):
        node = 0
        k = f[node]
        while k >= 0:
            if x[i, k] < t[node]:
                node = l[node]
            else:
                node = rr[node]
            k = f[node]
        out[i] = node
    return out_np


# Candidate cell offsets for nearest-voxel patch sampling; must match the
# fallback's order exactly (containing cell first, then lexicographic).
cdef i64 _OFF[27][3]
cdef void _init_offsets() noexcept:
    cdef Py_ssize_t n = 1, dx, dy, dz
    _OFF[0][0] = 0; _OFF[0][1] = 0; _OFF[0][2] = 0
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                _OFF[n][0] = dx; _OFF[n][1] = dy; _OFF[n][2] = dz
                n += 1
_init_offsets()


def extract_patches(grid, origin_cell, double voxel_size, values, centres, axes1, axes2, Py_ssize_t n, double spacing, fill):
    """Sample square patches of per-voxel values on tangent-plane lattices."""
    cdef cnp.ndarray[i32, ndim=3] g = np.ascontiguousarray(grid, dtype=np.int32)
    cdef cnp.ndarray[i64, ndim=1] oc = np.ascontiguousarray(origin_cell, dtype=np.int64)
    cdef cnp.ndarray[f32, ndim=2] vals = np.ascontiguousarray(values, dtype=np.float32)
    cdef cnp.ndarray[f64, ndim=2] c = np.ascontiguousarray(centres, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] a1 = np.ascontiguousarray(axes1, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] a2 = np.ascontiguousarray(axes2, dtype=np.float64)
    cdef cnp.ndarray[f32, ndim=2] fil = np.ascontiguousarray(fill, dtype=np.float32)
    cdef Py_ssize_t nb = c.shape[0]
    cdef Py_ssize_t nc = vals.shape[1]
    out_np = np.empty((nb, n, n, nc), dtype=np.float32)
    cdef cnp.ndarray[f32, ndim=4] out = out_np

    cdef i64 sx = g.shape[0], sy = g.shape[1], sz = g.shape[2]
    cdef Py_ssize_t b, i, j, q, m, ch
    cdef Py_ssize_t half = n // 2
    cdef f64 io, jo
    cdef f64 gg[3]
    cdef i64 base[3]
    cdef i64 cx, cy, cz, lx, ly, lz
    cdef i32 idx, best
    cdef f64 dx, dy, dz, d2, bestd

    for b in range(nb):
        for i in range(n):
            io = i - half
            for j in range(n):
                jo = j - half
                for q in range(3):
                    gg[q] = ((jo * a1[b, q] + io * a2[b, q]) * spacing + c[b, q]) / voxel_size
                    base[q] = <i64>floor(gg[q])
                idx = -1
                lx = base[0] - oc[0]; ly = base[1] - oc[1]; lz = base[2] - oc[2]
                if 0 <= lx < sx and 0 <= ly < sy and 0 <= lz < sz:
                    idx = g[lx, ly, lz]
                if idx < 0:
                    best = -1
                    bestd = INFINITY
                    for m in range(1, 27):
                        cx = base[0] + _OFF[m][0]
                        cy = base[1] + _OFF[m][1]
                        cz = base[2] + _OFF[m][2]
                        lx = cx - oc[0]; ly = cy - oc[1]; lz = cz - oc[2]
                        if not (0 <= lx < sx and 0 <= ly < sy and 0 <= lz < sz):
                            continue
                        idx = g[lx, ly, lz]
                        if idx < 0:
                            continue
                        dx = gg[0] - (cx + 0.5)
                        dy = gg[1] - (cy + 0.5)
                        dz = gg[2] - (cz + 0.5)
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 <= 1.0 and d2 < bestd:
                            best = idx
                            bestd = d2
                    idx = best
                if idx >= 0:
                    for ch in range(nc):
                        out[b, i, j, ch] = vals[idx, ch]
                else:
                    for ch in range(nc):
                        out[b, i, j, ch] = fil[b, ch]
    return out_np


def propagate_candidates(
    hit_index,
    label_ids,
    centres,
    lab,
    normals,
    int current_label,
    int ring_radius,
    double max_position_dist,
    double max_colour_dist,
    double min_normal_dot,
    int min_neighbours,
):
    """Collect voxels adopting ``current_label`` in one propagation step."""
    cdef cnp.ndarray[i32, ndim=2] hit = np.ascontiguousarray(hit_index, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ids = np.ascontiguousarray(label_ids, dtype=np.uint8)
    cdef cnp.ndarray[f64, ndim=2] pos = np.ascontiguousarray(centres, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] col = np.ascontiguousarray(lab, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] nrm = np.ascontiguousarray(normals, dtype=np.float64)
    cdef Py_ssize_t h = hit.shape[0], w = hit.shape[1]
    cdef Py_ssize_t nvox = ids.shape[0]
    if nvox == 0:
        return np.empty(0, dtype=np.int32)
    voted_np = np.zeros(nvox, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] voted = voted_np

    cdef f64 max_d2 = max_position_dist * max_position_dist
    cdef f64 max_c2 = max_colour_dist * max_colour_dist
    cdef Py_ssize_t i, j, di, dj, ni, nj
    cdef i32 me, nb
    cdef int count, r = ring_radius
    cdef f64 dx, dy, dz

    for i in range(h):
        for j in range(w):
            me = hit[i, j]
            if me < 0 or ids[me] == <unsigned char>current_label:
                continue
            count = 0
            for di in range(-r, r + 1):
                ni = i + di
                if ni < 0 or ni >= h:
                    continue
                for dj in range(-r, r + 1):
                    if di != -r and di != r and dj != -r and dj != r:
                        continue
                    nj = j + dj
                    if nj < 0 or nj >= w:
                        continue
                    nb = hit[ni, nj]
                    if nb < 0 or ids[nb] != <unsigned char>current_label:
                        continue
                    dx = pos[me, 0] - pos[nb, 0]
                    dy = pos[me, 1] - pos[nb, 1]
                    dz = pos[me, 2] - pos[nb, 2]
                    if dx * dx + dy * dy + dz * dz > max_d2:
                        continue
                    dx = col[me, 0] - col[nb, 0]
                    dy = col[me, 1] - col[nb, 1]
                    dz = col[me, 2] - col[nb, 2]
                    if dx * dx + dy * dy + dz * dz > max_c2:
                        continue
                    if nrm[me, 0] * nrm[nb, 0] + nrm[me, 1] * nrm[nb, 1] + nrm[me, 2] * nrm[nb, 2] < min_normal_dot:
                        continue
                    count += 1
                    if count >= min_neighbours:
                        break
                if count >= min_neighbours:
                    break
            if count >= min_neighbours:
                voted[me] = 1
    return np.flatnonzero(voted_np).astype(np.int32)
