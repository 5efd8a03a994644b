"""Synthetic binary shapes for demos, tests and the acceptance harness."""

from __future__ import annotations

import numpy as np

from .voxel import VoxelGrid


def _coords(dim):
    c = -0.5 + (np.arange(dim) + 0.5) / dim
    return np.meshgrid(c, c, c, indexing="ij")


def sphere(dim: int = 32, radius: float = 0.3, center=(0.0, 0.0, 0.0)) -> VoxelGrid:
    x, y, z = _coords(dim)
    d2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return VoxelGrid((d2 <= radius**2).astype(np.float64))


def box(dim: int = 32, half_extent=0.125, center=(0.0, 0.0, 0.0)) -> VoxelGrid:
    """Axis-aligned box; voxels whose centres fall inside are occupied."""
    h = np.broadcast_to(np.asarray(half_extent, dtype=np.float64), (3,))
    x, y, z = _coords(dim)
    inside = (np.abs(x - center[0]) <= h[0]) & (np.abs(y - center[1]) <= h[1]) & (np.abs(z - center[2]) <= h[2])
    return VoxelGrid(inside.astype(np.float64))


def central_box(dim: int = 32, side: int = 8) -> VoxelGrid:
    """Solid ``side``^3 block of voxels in the middle of the grid."""
    v = np.zeros((dim,) * 3)
    a = (dim - side) // 2
    v[a:a + side, a:a + side, a:a + side] = 1.0
    return VoxelGrid(v)


def random_shape(rng: np.random.Generator, dim: int = 32, parts: tuple[int, int] = (2, 4)) -> VoxelGrid:
    """Union of a few random boxes and ellipsoids inside radius ~0.35."""
    x, y, z = _coords(dim)
    occ = np.zeros((dim,) * 3, dtype=bool)
    for _ in range(rng.integers(parts[0], parts[1] + 1)):
        c = rng.uniform(-0.15, 0.15, size=3)
        r = rng.uniform(0.06, 0.16, size=3)
        if rng.uniform() < 0.5:
            part = (np.abs(x - c[0]) <= r[0]) & (np.abs(y - c[1]) <= r[1]) & (np.abs(z - c[2]) <= r[2])
        else:
            part = ((x - c[0]) / r[0]) ** 2 + ((y - c[1]) / r[1]) ** 2 + ((z - c[2]) / r[2]) ** 2 <= 1.0
        occ |= part
    if not occ.any():
        occ[dim // 2, dim // 2, dim // 2] = True
    return VoxelGrid(occ.astype(np.float64))
