"""Compiled inner loops shared by the geometry and ray casting code.

All kernels are ``nogil`` so that thread pools get real parallelism.
"""

from __future__ import annotations

import numba
import numpy as np

T_MIN = 1e-9
BARY_EPS = 1e-12
T_TIE = 1e-12


@numba.njit(cache=True, nogil=True)
def ray_tri(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Moller-Trumbore. Returns t, or NaN for a miss."""
    e1x = bx - ax
    e1y = by - ay
    e1z = bz - az
    e2x = cx - ax
    e2y = cy - ay
    e2z = cz - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    scale = np.sqrt((e1x * e1x + e1y * e1y + e1z * e1z) * (e2x * e2x + e2y * e2y + e2z * e2z))
    if abs(det) <= 1e-14 * scale:
        return np.nan
    inv = 1.0 / det
    sx = ox - ax
    sy = oy - ay
    sz = oz - az
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return np.nan
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return np.nan
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= T_MIN:
        return np.nan
    return t


@numba.njit(cache=True, nogil=True)
def _slab(ox, oy, oz, ix, iy, iz, bmin, bmax):
    # returns entry distance, or inf when the box is missed
    t0 = -np.inf
    t1 = np.inf
    o = (ox, oy, oz)
    inv = (ix, iy, iz)
    for k in range(3):
        if np.isinf(inv[k]):
            if o[k] < bmin[k] or o[k] > bmax[k]:
                return np.inf
        else:
            a = (bmin[k] - o[k]) * inv[k]
            b = (bmax[k] - o[k]) * inv[k]
            if a > b:
                a, b = b, a
            if a > t0:
                t0 = a
            if b < t1:
                t1 = b
    if t0 > t1 or t1 < 0.0:
        return np.inf
    return max(t0, 0.0)


@numba.njit(cache=True, nogil=True)
def bvh_cast(origins, dirs, node_min, node_max, node_left, node_right,
             node_start, node_count, order, v0, v1, v2, face_ids):
    """Closest hit per ray.

    Returns (face_id, t) arrays; misses carry face_id -1 and t = inf.
    Among hits within ``T_TIE`` of each other the lowest face id wins.
    """
    n = origins.shape[0]
    out_face = np.full(n, -1, dtype=np.int64)
    out_t = np.full(n, np.inf)
    stack = np.empty(128, dtype=np.int64)
    for r in range(n):
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        best_t = np.inf
        best_f = -1
        sp = 0
        if _slab(ox, oy, oz, ix, iy, iz, node_min[0], node_max[0]) < np.inf:
            stack[0] = 0
            sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            cnt = node_count[node]
            if cnt > 0:
                s = node_start[node]
                for k in range(s, s + cnt):
                    f = order[k]
                    t = ray_tri(ox, oy, oz, dx, dy, dz,
                                v0[f, 0], v0[f, 1], v0[f, 2],
                                v1[f, 0], v1[f, 1], v1[f, 2],
                                v2[f, 0], v2[f, 1], v2[f, 2])
                    if np.isnan(t):
                        continue
                    fid = face_ids[f]
                    if t < best_t - T_TIE or (abs(t - best_t) <= T_TIE and fid < best_f):
                        best_t = t
                        best_f = fid
                continue
            l = node_left[node]
            rr = node_right[node]
            tl = _slab(ox, oy, oz, ix, iy, iz, node_min[l], node_max[l])
            tr = _slab(ox, oy, oz, ix, iy, iz, node_min[rr], node_max[rr])
            # missed boxes report inf, which would pass the test while best_t is inf
            bound = best_t + T_TIE
            go_l = tl < np.inf and tl <= bound
            go_r = tr < np.inf and tr <= bound
            # push the farther child first so the nearer one is popped first
            if tl <= tr:
                if go_r:
                    stack[sp] = rr
                    sp += 1
                if go_l:
                    stack[sp] = l
                    sp += 1
            else:
                if go_l:
                    stack[sp] = l
                    sp += 1
                if go_r:
                    stack[sp] = rr
                    sp += 1
        out_face[r] = best_f
        out_t[r] = best_t
    return out_face, out_t
