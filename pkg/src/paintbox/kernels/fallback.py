"""Pure-numpy implementations of the hot kernels.

Signatures and results match ``paintbox.kernels._core`` exactly.  These
run everywhere but are slower on large inputs; the compiled core is the
production path.
"""

import numpy as np

# Candidate cell offsets for nearest-voxel patch sampling: the containing
# cell first (its centre is always the nearest), then the 26 neighbours in
# lexicographic order.  Both backends must use this exact order so that
# distance ties resolve identically.
_PATCH_OFFSETS = np.array(
    [(0, 0, 0)]
    + [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ],
    dtype=np.int64,
)


def exclusive_scan(bits):
    """Exclusive prefix sum of an integer array, as int64."""
    bits = np.asarray(bits)
    out = np.empty(bits.shape[0], dtype=np.int64)
    if bits.shape[0] == 0:
        return out
    np.cumsum(bits, dtype=np.int64, out=out)
    out[1:] = out[:-1]
    out[0] = 0
    return out


def raycast_rays(grid, origin_cell, voxel_size, origins, dirs, near, far):
    """Trace rays through an occupancy-index grid.

    ``grid[ix, iy, iz]`` holds a voxel index or -1; cell ``i`` spans the
    half-open world box ``[(origin_cell + i) * s, (origin_cell + i + 1) * s)``.
    Rays are walked cell-by-cell from ``near`` to ``far`` (in units of the
    ray parameter); ties between axis crossings resolve to the lowest axis.

    Returns ``(hit_index, t_hit)``: the voxel index of the first occupied
    cell (or -1) and the ray parameter at which the ray entered that cell
    (inf on a miss).
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    nrays = origins.shape[0]
    shape = np.asarray(grid.shape, dtype=np.int64)
    ocell = np.asarray(origin_cell, dtype=np.float64)
    lo = ocell * voxel_size
    hi = (ocell + shape) * voxel_size

    hit = np.full(nrays, -1, dtype=np.int32)
    thit = np.full(nrays, np.inf, dtype=np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo[None, :] - origins) / dirs
        t1 = (hi[None, :] - origins) / dirs
    tnear_ax = np.minimum(t0, t1)
    tfar_ax = np.maximum(t0, t1)
    zero = dirs == 0.0
    tnear_ax[zero] = -np.inf
    tfar_ax[zero] = np.inf
    outside = zero & ((origins < lo[None, :]) | (origins >= hi[None, :]))

    t_enter = np.maximum(tnear_ax.max(axis=1), near)
    t_exit = np.minimum(tfar_ax.min(axis=1), far)
    t_exit[outside.any(axis=1)] = -np.inf
    active = np.flatnonzero(t_enter <= t_exit)
    if active.size == 0:
        return hit, thit

    oc_i = np.asarray(origin_cell, dtype=np.int64)
    point = origins[active] + t_enter[active, None] * dirs[active]
    cell = np.floor(point / voxel_size).astype(np.int64) - oc_i
    np.clip(cell, 0, shape - 1, out=cell)

    d = dirs[active]
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore"):
        tdelta = np.where(d != 0.0, voxel_size / np.abs(d), np.inf)
        bound = (oc_i + cell + (step > 0)) * voxel_size
        tmax = np.where(d != 0.0, (bound - origins[active]) / d, np.inf)

    tcur = t_enter[active].copy()
    texit = t_exit[active]
    rows = active.copy()
    max_steps = int(shape.sum()) * 2 + 8

    for _ in range(max_steps):
        if rows.size == 0:
            break
        occ = grid[cell[:, 0], cell[:, 1], cell[:, 2]]
        found = occ >= 0
        if found.any():
            hit[rows[found]] = occ[found]
            thit[rows[found]] = tcur[found]
            keep = ~found
            rows = rows[keep]
            cell = cell[keep]
            step = step[keep]
            tmax = tmax[keep]
            tdelta = tdelta[keep]
            tcur = tcur[keep]
            texit = texit[keep]
            if rows.size == 0:
                break
        axis = np.argmin(tmax, axis=1)
        ar = np.arange(rows.size)
        tcur = tmax[ar, axis]
        cell[ar, axis] += step[ar, axis]
        tmax[ar, axis] += tdelta[ar, axis]
        alive = (
            (tcur <= texit)
            & (cell[ar, axis] >= 0)
            & (cell[ar, axis] < shape[axis])
        )
        if not alive.all():
            rows = rows[alive]
            cell = cell[alive]
            step = step[alive]
            tmax = tmax[alive]
            tdelta = tdelta[alive]
            tcur = tcur[alive]
            texit = texit[alive]
    return hit, thit


def route_descriptors(feat, tau, left, right, descriptors):
    """Route descriptor rows through a flattened decision tree.

    ``feat[i] == -1`` marks node ``i`` as a leaf; interior nodes send a row
    left iff ``x[feat] < tau`` and right otherwise.  Returns the leaf node
    id reached by each row, starting from node 0.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    n = descriptors.shape[0]
    cur = np.zeros(n, dtype=np.int32)
    while True:
        k = feat[cur]
        pending = np.flatnonzero(k >= 0)
        if pending.size == 0:
            return cur
        nodes = cur[pending]
        vals = descriptors[pending, k[pending]]
        goes_left = vals < tau[nodes]
        cur[pending] = np.where(goes_left, left[nodes], right[nodes])


def _nearest_values(grid, oc_i, shape, values, g, fill_rows, fill):
    """Nearest-occupied-voxel lookup for a flat batch of lattice points."""
    m = g.shape[0]
    out = np.empty((m, values.shape[1]), dtype=np.float32)
    base = np.floor(g).astype(np.int64)
    loc = base - oc_i
    inb = ((loc >= 0) & (loc < shape)).all(axis=1)
    idx = np.full(m, -1, dtype=np.int64)
    safe = np.where(inb[:, None], loc, 0)
    idx[inb] = grid[safe[inb, 0], safe[inb, 1], safe[inb, 2]]
    done = idx >= 0
    out[done] = values[idx[done]]

    holes = np.flatnonzero(~done)
    if holes.size:
        gh = g[holes]
        bh = base[holes]
        best = np.full(holes.size, -1, dtype=np.int64)
        bestd = np.full(holes.size, np.inf)
        for off in _PATCH_OFFSETS[1:]:
            cand = bh + off
            lc = cand - oc_i
            ok = ((lc >= 0) & (lc < shape)).all(axis=1)
            if not ok.any():
                continue
            safe = np.where(ok[:, None], lc, 0)
            ci = np.where(ok, grid[safe[:, 0], safe[:, 1], safe[:, 2]], -1)
            centre = cand.astype(np.float64) + 0.5
            d2 = ((gh - centre) ** 2).sum(axis=1)
            better = (ci >= 0) & (d2 <= 1.0) & (d2 < bestd)
            best[better] = ci[better]
            bestd[better] = d2[better]
        got = best >= 0
        out[holes[got]] = values[best[got]]
        out[holes[~got]] = fill[fill_rows[holes[~got]]]
    return out


def extract_patches(grid, origin_cell, voxel_size, values, centres, axes1, axes2, n, spacing, fill):
    """Sample square patches of per-voxel values on tangent-plane lattices.

    Lattice point ``(i, j)`` of patch ``b`` lies at
    ``centres[b] + (j - n//2) * spacing * axes1[b] + (i - n//2) * spacing * axes2[b]``
    (world units).  Each point takes the value of the occupied voxel whose
    centre is nearest in grid space, provided that distance is at most one
    grid unit; otherwise the patch's ``fill`` row is used.
    """
    centres = np.asarray(centres, dtype=np.float64)
    axes1 = np.asarray(axes1, dtype=np.float64)
    axes2 = np.asarray(axes2, dtype=np.float64)
    values = np.asarray(values, dtype=np.float32)
    fill = np.asarray(fill, dtype=np.float32)
    nb = centres.shape[0]
    nc = values.shape[1]
    shape = np.asarray(grid.shape, dtype=np.int64)
    oc_i = np.asarray(origin_cell, dtype=np.int64)

    half = n // 2
    jj, ii = np.meshgrid(np.arange(n) - half, np.arange(n) - half, indexing="xy")
    # row i advances along axes2, column j along axes1
    out = np.empty((nb, n, n, nc), dtype=np.float32)
    chunk = max(1, 262144 // (n * n))
    for s in range(0, nb, chunk):
        e = min(nb, s + chunk)
        c = centres[s:e, None, None, :]
        a1 = axes1[s:e, None, None, :]
        a2 = axes2[s:e, None, None, :]
        pts = c + spacing * (jj[None, :, :, None] * a1 + ii[None, :, :, None] * a2)
        g = pts.reshape(-1, 3) / voxel_size
        fill_rows = np.repeat(np.arange(s, e), n * n)
        vals = _nearest_values(grid, oc_i, shape, values, g, fill_rows, fill)
        out[s:e] = vals.reshape(e - s, n, n, nc)
    return out


def propagate_candidates(
    hit_index,
    label_ids,
    centres,
    lab,
    normals,
    current_label,
    ring_radius,
    max_position_dist,
    max_colour_dist,
    min_normal_dot,
    min_neighbours,
):
    """Collect voxels adopting ``current_label`` in one propagation step.

    For every pixel whose voxel does not already carry ``current_label``,
    the pixels on the Chebyshev ring of radius ``ring_radius`` are examined;
    a ring pixel supports adoption when its voxel carries the label and lies
    within the position / colour / normal-angle gates.  Pixels with at least
    ``min_neighbours`` supporting ring pixels vote for their voxel.  Returns
    the sorted unique indices of voxels to mark; all reads are against the
    pre-step state.
    """
    h, w = hit_index.shape
    r = int(ring_radius)
    if label_ids.size == 0:
        return np.empty(0, dtype=np.int32)
    # gate arithmetic in float64 so both backends agree bit-for-bit
    centres = np.asarray(centres, dtype=np.float64)
    lab = np.asarray(lab, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    own = hit_index >= 0
    target = own & (label_ids[np.where(own, hit_index, 0)] != current_label)
    count = np.zeros((h, w), dtype=np.int32)

    max_d2 = float(max_position_dist) ** 2
    max_c2 = float(max_colour_dist) ** 2

    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if max(abs(di), abs(dj)) != r:
                continue
            src_r = slice(max(0, -di), min(h, h - di))
            dst_r = slice(max(0, di), min(h, h + di))
            src_c = slice(max(0, -dj), min(w, w - dj))
            dst_c = slice(max(0, dj), min(w, w + dj))
            tgt = target[dst_r, dst_c]
            nb = hit_index[src_r, src_c]
            me = hit_index[dst_r, dst_c]
            ok = tgt & (nb >= 0)
            if not ok.any():
                continue
            nb_s = np.where(ok, nb, 0)
            me_s = np.where(ok, me, 0)
            ok &= label_ids[nb_s] == current_label
            dp = centres[me_s] - centres[nb_s]
            ok &= (dp * dp).sum(axis=-1) <= max_d2
            dc = lab[me_s] - lab[nb_s]
            ok &= (dc * dc).sum(axis=-1) <= max_c2
            ok &= (normals[me_s] * normals[nb_s]).sum(axis=-1) >= min_normal_dot
            count[dst_r, dst_c] += ok
    voted = target & (count >= int(min_neighbours))
    if not voted.any():
        return np.empty(0, dtype=np.int32)
    return np.unique(hit_index[voted]).astype(np.int32)
