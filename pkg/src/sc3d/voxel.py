"""Occupancy grids on the world cube [-0.5, 0.5]^3 and trilinear sampling.

Voxel ``(i, j, k)`` has its centre at ``-0.5 + (index + 0.5) / V`` on each
axis; the interpolation lattice is anchored on these centres. Queries whose
interpolation stencil leaves the grid read the missing corners as 0, so the
sampled field decays to empty space over half a voxel outside the cube.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class VoxelGrid:
    """A V x V x V occupancy field with values in [0, 1].

    ``values[x, y, z]`` is stored C-contiguous, so the flat index is
    ``(x * V + y) * V + z``.
    """

    def __init__(self, values, check: bool = True):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 3 or len(set(values.shape)) != 1 or values.shape[0] < 1:
            raise ValueError(f"grid must be a non-empty cube, got shape {values.shape}")
        if check and values.size and (np.any(~np.isfinite(values)) or values.min() < 0 or values.max() > 1):
            raise ValueError("grid values must lie in [0, 1]")
        self.values = values

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "VoxelGrid":
        return cls(np.zeros((dim, dim, dim)))

    @classmethod
    def full(cls, dim: int, value: float = 1.0) -> "VoxelGrid":
        return cls(np.full((dim, dim, dim), value))

    @classmethod
    def from_flat(cls, flat, dim: int) -> "VoxelGrid":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != dim**3:
            raise ValueError(f"expected {dim**3} values, got {flat.size}")
        return cls(flat.reshape(dim, dim, dim))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def centers(self) -> np.ndarray:
        """World coordinates of voxel centres along one axis."""
        return -0.5 + (np.arange(self.dim) + 0.5) / self.dim

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0) | (self.values == 1)))

    def __eq__(self, other):
        return isinstance(other, VoxelGrid) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"VoxelGrid(dim={self.dim}, mass={self.values.sum():.4g})"


def world_to_grid(points, dim: int) -> np.ndarray:
    """Continuous lattice coordinates: voxel centres sit on integers."""
    return (np.asarray(points, dtype=np.float64) + 0.5) * dim - 0.5


# corner offsets in the order (dx, dy, dz), dz fastest
_OFFSETS = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)])


@dataclass
class TrilinearStencil:
    """Everything the backward pass needs for a batch of sample points.

    ``index`` addresses the zero-padded grid of side V + 2 (flat, C order);
    ``weight`` is the interpolation weight of each corner; ``value`` the
    sampled occupancy; ``d_point`` the derivative w.r.t. the world point.
    """

    index: np.ndarray  # (..., 8) int
    weight: np.ndarray  # (..., 8)
    value: np.ndarray  # (...)
    d_point: np.ndarray | None  # (..., 3)


def padded(grid: VoxelGrid) -> np.ndarray:
    return np.pad(grid.values, 1)


def stencil(grid: VoxelGrid, points, need_grad: bool = True, padded_values=None) -> TrilinearStencil:
    """Vectorised trilinear sampling with the zero-padding rule."""
    V = grid.dim
    g = world_to_grid(points, V)
    shape = g.shape[:-1]
    g = g.reshape(-1, 3)
    base = np.floor(g)
    frac = g - base
    inside = np.all((g > -1.0) & (g < V), axis=1)
    base = np.where(inside[:, None], base, -1.0).astype(np.int64)
    frac = np.where(inside[:, None], frac, 0.0)

    # padded lattice index of the lower corner
    lo = base + 1
    P = V + 2
    lo_flat = (lo[:, 0] * P + lo[:, 1]) * P + lo[:, 2]
    off_flat = (_OFFSETS[:, 0] * P + _OFFSETS[:, 1]) * P + _OFFSETS[:, 2]
    index = lo_flat[:, None] + off_flat[None, :]

    n = len(g)
    wx = np.stack([1.0 - frac[:, 0], frac[:, 0]], axis=1)
    wy = np.stack([1.0 - frac[:, 1], frac[:, 1]], axis=1)
    wz = np.stack([1.0 - frac[:, 2], frac[:, 2]], axis=1)
    wyz = (wy[:, :, None] * wz[:, None, :]).reshape(n, 4)
    weight = (wx[:, :, None] * wyz[:, None, :]).reshape(n, 8)

    pv = padded(grid) if padded_values is None else padded_values
    corner = pv.reshape(-1)[index]
    value = np.einsum("ij,ij->i", weight, corner)

    d_point = None
    if need_grad:
        c = corner.reshape(n, 2, 2, 2)
        # finite differences of corner values along each axis
        ex = c[:, 1] - c[:, 0]
        ey = c[:, :, 1] - c[:, :, 0]
        ez = c[:, :, :, 1] - c[:, :, :, 0]
        dgx = np.einsum("ij,ij->i", wyz, ex.reshape(n, 4))
        dgy = np.einsum("ij,ij->i", (wx[:, :, None] * wz[:, None, :]).reshape(n, 4), ey.reshape(n, 4))
        dgz = np.einsum("ij,ij->i", (wx[:, :, None] * wy[:, None, :]).reshape(n, 4), ez.reshape(n, 4))
        d_point = np.stack([dgx, dgy, dgz], axis=1) * V
        d_point[~inside] = 0.0
        d_point = d_point.reshape(shape + (3,))
    # Out-of-support points use corner (-1,-1,-1) with weight 1, which is padding.
    weight[~inside] = 0.0

    return TrilinearStencil(
        index.reshape(shape + (8,)),
        weight.reshape(shape + (8,)),
        value.reshape(shape),
        d_point,
    )


def unpad_index(index: np.ndarray, dim: int) -> np.ndarray:
    """Map padded flat indices to grid flat indices; padding maps to -1."""
    P = dim + 2
    x, rem = np.divmod(index, P * P)
    y, z = np.divmod(rem, P)
    x, y, z = x - 1, y - 1, z - 1
    ok = (x >= 0) & (x < dim) & (y >= 0) & (y < dim) & (z >= 0) & (z < dim)
    return np.where(ok, (x * dim + y) * dim + z, -1)


def scatter_to_grid(index: np.ndarray, contrib: np.ndarray, dim: int) -> np.ndarray:
    """Sum per-corner contributions into a (V, V, V) array, padding dropped."""
    P = dim + 2
    acc = np.bincount(index.reshape(-1), weights=contrib.reshape(-1), minlength=P**3)
    return acc.reshape(P, P, P)[1:-1, 1:-1, 1:-1].copy()


def trilinear_sample(grid: VoxelGrid, point):
    """Occupancy at world point(s); returns a float for a single 3-vector."""
    point = np.asarray(point, dtype=np.float64)
    v = stencil(grid, point, need_grad=False).value
    return float(v) if point.ndim == 1 else v


def trilinear_grad(grid: VoxelGrid, point):
    """Derivatives of ``trilinear_sample`` at a single world point.

    Returns ``(corner_weights, d_point)`` where ``corner_weights`` is a list
    of 8 ``(flat_index, weight)`` pairs; corners in the padding band carry
    index -1 and weight 0.
    """
    st = stencil(grid, np.asarray(point, dtype=np.float64)[None], need_grad=True)
    idx = unpad_index(st.index[0], grid.dim)
    w = np.where(idx >= 0, st.weight[0], 0.0)
    return [(int(i), float(x)) for i, x in zip(idx, w)], st.d_point[0]


def binarize(grid: VoxelGrid, threshold: float = 0.5) -> VoxelGrid:
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return VoxelGrid((grid.values >= threshold).astype(np.float64))


def voxel_iou(a: VoxelGrid, b: VoxelGrid) -> float:
    """Intersection over union of two binary grids (1.0 when both are empty)."""
    if a.dim != b.dim:
        raise ValueError(f"grid dims differ: {a.dim} vs {b.dim}")
    av, bv = a.values > 0.5, b.values > 0.5
    union = np.count_nonzero(av | bv)
    if union == 0:
        return 1.0
    return np.count_nonzero(av & bv) / union
