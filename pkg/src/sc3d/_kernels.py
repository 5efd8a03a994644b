"""Compiled per-ray loops: forward transmittance and the backward pass.

The lattice and padding rule are the same as :func:`sc3d.voxel.stencil`;
the test suite checks the two against each other. Rays are processed
sequentially inside a call, so accumulation order is fixed.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _locate(pv_flat, P, dim, wx, wy, wz):
    """Lower-corner padded index, fractions and the 8 corner values (or base -1)."""
    gx = (wx + 0.5) * dim - 0.5
    gy = (wy + 0.5) * dim - 0.5
    gz = (wz + 0.5) * dim - 0.5
    if not (-1.0 < gx < dim and -1.0 < gy < dim and -1.0 < gz < dim):
        return -1, 0.0, 0.0, 0.0
    bx, by, bz = np.floor(gx), np.floor(gy), np.floor(gz)
    base = ((int(bx) + 1) * P + int(by) + 1) * P + int(bz) + 1
    return base, gx - bx, gy - by, gz - bz


@njit(cache=True, nogil=True)
def forward_rays(pv, dim, dirs, depths, t, R):
    """Occupancy at every sample plus per-ray escape and total stop probability.

    ``dirs`` (n, 3) are camera-frame ray directions, ``depths`` (N,) the
    sample depths; sample i of ray r sits at ``R @ (dirs[r] * depths[i] + t)``.
    """
    n, m = dirs.shape[0], depths.shape[0]
    P = dim + 2
    flat = pv.ravel()
    occ = np.zeros((n, m))
    escape = np.empty(n)
    stop_sum = np.empty(n)
    for r in range(n):
        trans = 1.0
        acc = 0.0
        for i in range(m):
            cx = dirs[r, 0] * depths[i] + t[0]
            cy = dirs[r, 1] * depths[i] + t[1]
            cz = dirs[r, 2] * depths[i] + t[2]
            wx = R[0, 0] * cx + R[0, 1] * cy + R[0, 2] * cz
            wy = R[1, 0] * cx + R[1, 1] * cy + R[1, 2] * cz
            wz = R[2, 0] * cx + R[2, 1] * cy + R[2, 2] * cz
            b, fx, fy, fz = _locate(flat, P, dim, wx, wy, wz)
            y = 0.0
            if b >= 0:
                c00 = flat[b] + fz * (flat[b + 1] - flat[b])
                c01 = flat[b + P] + fz * (flat[b + P + 1] - flat[b + P])
                c10 = flat[b + P * P] + fz * (flat[b + P * P + 1] - flat[b + P * P])
                c11 = flat[b + P * P + P] + fz * (flat[b + P * P + P + 1] - flat[b + P * P + P])
                c0 = c00 + fy * (c01 - c00)
                c1 = c10 + fy * (c11 - c10)
                y = c0 + fx * (c1 - c0)
            occ[r, i] = y
            acc += y * trans
            trans *= 1.0 - y
        escape[r] = trans
        stop_sum[r] = acc
    return occ, escape, stop_sum


@njit(cache=True, nogil=True)
def backward_rays(pv, dim, dirs, depths, t, R, dR_az, dR_el, occ, g_escape, need_grid, need_pose):
    """Push d loss / d escape back to grid values and pose angles.

    Returns ``(d_padded_flat, d_azimuth, d_elevation)``.
    """
    n, m = dirs.shape[0], depths.shape[0]
    P = dim + 2
    flat = pv.ravel()
    out = np.zeros(P * P * P) if need_grid else np.zeros(1)
    suffix = np.empty(m)
    d_az = 0.0
    d_el = 0.0
    for r in range(n):
        ge = g_escape[r]
        if ge == 0.0:
            continue
        s = 1.0
        for i in range(m - 1, -1, -1):
            suffix[i] = s
            s *= 1.0 - occ[r, i]
        prefix = 1.0
        for i in range(m):
            # d escape / d y_i = -prod_{j != i} (1 - y_j)
            g = -ge * prefix * suffix[i]
            prefix *= 1.0 - occ[r, i]
            if g == 0.0:
                continue
            cx = dirs[r, 0] * depths[i] + t[0]
            cy = dirs[r, 1] * depths[i] + t[1]
            cz = dirs[r, 2] * depths[i] + t[2]
            wx = R[0, 0] * cx + R[0, 1] * cy + R[0, 2] * cz
            wy = R[1, 0] * cx + R[1, 1] * cy + R[1, 2] * cz
            wz = R[2, 0] * cx + R[2, 1] * cy + R[2, 2] * cz
            b, fx, fy, fz = _locate(flat, P, dim, wx, wy, wz)
            if b < 0:
                continue
            if need_grid:
                gx0, gx1 = g * (1 - fx), g * fx
                w00, w01 = (1 - fy) * (1 - fz), (1 - fy) * fz
                w10, w11 = fy * (1 - fz), fy * fz
                out[b] += gx0 * w00
                out[b + 1] += gx0 * w01
                out[b + P] += gx0 * w10
                out[b + P + 1] += gx0 * w11
                out[b + P * P] += gx1 * w00
                out[b + P * P + 1] += gx1 * w01
                out[b + P * P + P] += gx1 * w10
                out[b + P * P + P + 1] += gx1 * w11
            if need_pose:
                v000, v001 = flat[b], flat[b + 1]
                v010, v011 = flat[b + P], flat[b + P + 1]
                v100, v101 = flat[b + P * P], flat[b + P * P + 1]
                v110, v111 = flat[b + P * P + P], flat[b + P * P + P + 1]
                c00 = v000 + fz * (v001 - v000)
                c01 = v010 + fz * (v011 - v010)
                c10 = v100 + fz * (v101 - v100)
                c11 = v110 + fz * (v111 - v110)
                px = (c10 + fy * (c11 - c10)) - (c00 + fy * (c01 - c00))
                py = (1 - fx) * (c01 - c00) + fx * (c11 - c10)
                dz0 = (1 - fy) * (v001 - v000) + fy * (v011 - v010)
                dz1 = (1 - fy) * (v101 - v100) + fy * (v111 - v110)
                pz = (1 - fx) * dz0 + fx * dz1
                ax = dR_az[0, 0] * cx + dR_az[0, 1] * cy + dR_az[0, 2] * cz
                ay = dR_az[1, 0] * cx + dR_az[1, 1] * cy + dR_az[1, 2] * cz
                az = dR_az[2, 0] * cx + dR_az[2, 1] * cy + dR_az[2, 2] * cz
                ex = dR_el[0, 0] * cx + dR_el[0, 1] * cy + dR_el[0, 2] * cz
                ey = dR_el[1, 0] * cx + dR_el[1, 1] * cy + dR_el[1, 2] * cz
                ez = dR_el[2, 0] * cx + dR_el[2, 1] * cy + dR_el[2, 2] * cz
                d_az += g * dim * (px * ax + py * ay + pz * az)
                d_el += g * dim * (px * ex + py * ey + pz * ez)
    return out, d_az, d_el
