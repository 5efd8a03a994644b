"""Brute-force references used to check the fast paths.

Nothing here shares code with the renderer's recurrence or its backward
pass: stop probabilities are recomputed with explicit nested products,
silhouettes by nearest-voxel marching, and gradients by central differences.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .camera import CameraPose, Intrinsics, SamplingConfig, pixel_centers, rotation_matrix, sample_points
from .consistency import ConsistencyWeights, evaluate
from .voxel import VoxelGrid, world_to_grid

H_LOSS = 1e-4
H_POSE = 1e-5


def finite_diff(f, x, h: float = H_LOSS) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at flat vector ``x``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def naive_ray_probs(occupancies):
    """Stop and escape probabilities from the defining products, O(N^2)."""
    y = [float(a) for a in occupancies]
    stops = []
    for i in range(len(y)):
        p = y[i]
        for j in range(i):
            p *= 1.0 - y[j]
        stops.append(p)
    escape = 1.0
    for a in y:
        escape *= 1.0 - a
    return np.array(stops), escape


def discrete_ray_cast(grid: VoxelGrid, pose: CameraPose, k: Intrinsics, u, v,
                      fine_steps: int = 256, s: SamplingConfig | None = None):
    """Hit test by marching ``fine_steps`` points and reading the nearest voxel.

    ``u`` and ``v`` may be arrays; the result has their broadcast shape.
    """
    s = s or SamplingConfig()
    fine = SamplingConfig(fine_steps, s.depth_min, s.depth_max)
    cam = sample_points(u, v, k, fine) + np.asarray(pose.translation)
    g = world_to_grid(cam @ rotation_matrix(pose).T, grid.dim)
    idx = np.floor(g + 0.5).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < grid.dim), axis=-1)
    idx = np.where(inside[..., None], idx, 0)
    occupied = grid.values[idx[..., 0], idx[..., 1], idx[..., 2]] > 0.5
    hit = np.any(occupied & inside, axis=-1)
    return bool(hit) if hit.ndim == 0 else hit


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: str
    n_checked: int
    n_skipped_near_boundary: int

    def to_json(self) -> dict:
        return asdict(self)


def _crossings(grid_dim, pose, k, s, H, W, h):
    """Pose angles whose +-h perturbation moves a sample across a cell face."""
    u, v = pixel_centers(H, W)
    cam = sample_points(u, v, k, s) + np.asarray(pose.translation)
    crossed = []
    for name, (da, de) in (("azimuth", (h, 0.0)), ("elevation", (0.0, h))):
        lo = world_to_grid(cam @ rotation_matrix(pose.with_angles(pose.azimuth - da, pose.elevation - de)).T, grid_dim)
        hi = world_to_grid(cam @ rotation_matrix(pose.with_angles(pose.azimuth + da, pose.elevation + de)).T, grid_dim)
        support = np.all((lo > -1) & (lo < grid_dim), axis=-1) | np.all((hi > -1) & (hi < grid_dim), axis=-1)
        moved = np.any(np.floor(lo) != np.floor(hi), axis=-1)
        if np.any(moved & support):
            crossed.append(name)
    return crossed


def _rel(a, f, floor):
    return abs(a - f) / max(abs(a), abs(f), floor)


def gradcheck(
    seed: int = 0,
    grid_dim: int = 8,
    n_samples: int = 16,
    mask_size: int = 16,
    n_triples: int = 1,
    w: ConsistencyWeights | None = None,
    h_grid: float = H_LOSS,
    h_pose: float = H_POSE,
    min_grad: float = 1e-6,
    max_resample: int = 200,
    break_gradient: bool = False,
) -> GradCheckReport:
    """Compare analytic self-consistency gradients with central differences.

    Each triple draws a uniform random grid, a random binary mask and a
    random pose. Poses whose finite-difference stencil would carry a sample
    across a trilinear cell face are redrawn; each rejected angle counts as
    a skipped coordinate. Errors are relative, with magnitudes below
    ``min_grad`` measured on an absolute scale of ``min_grad``.

    ``break_gradient`` scales the analytic grid gradient by 1.01; it exists
    so the harness itself can be tested.
    """
    rng = np.random.default_rng(seed)
    w = w or ConsistencyWeights()
    s = SamplingConfig(n_samples)
    k = Intrinsics.default(mask_size, mask_size)
    worst, worst_at = 0.0, "none"
    n_checked = n_skipped = 0
    for t in range(n_triples):
        values = rng.uniform(0.0, 1.0, size=(grid_dim,) * 3)
        mask = (rng.uniform(size=(mask_size, mask_size)) < 0.5).astype(np.float64)
        for _ in range(max_resample):
            pose = CameraPose(rng.uniform(-math.pi, math.pi), rng.uniform(-math.pi / 3, math.pi / 3))
            crossed = _crossings(grid_dim, pose, k, s, mask_size, mask_size, h_pose)
            if not crossed:
                break
            n_skipped += len(crossed)
        else:
            raise RuntimeError("could not draw a pose clear of cell faces")

        grid = VoxelGrid(values)
        ev = evaluate(grid, pose, mask, k, s, w, need_grid=True, need_pose=True)
        d_grid = ev.grads.d_grid.reshape(-1) * (1.01 if break_gradient else 1.0)

        def loss_of_values(flat):
            return evaluate(VoxelGrid(flat.reshape(values.shape), check=False), pose, mask, k, s, w).loss

        fd_grid = finite_diff(loss_of_values, values.reshape(-1), h_grid)
        for i in range(d_grid.size):
            e = _rel(d_grid[i], fd_grid[i], min_grad)
            if e > worst:
                worst, worst_at = e, f"triple{t}:grid{tuple(int(j) for j in np.unravel_index(i, values.shape))}"
        n_checked += d_grid.size

        def loss_of_angles(x):
            return evaluate(grid, pose.with_angles(x[0], x[1]), mask, k, s, w).loss

        fd_pose = finite_diff(loss_of_angles, [pose.azimuth, pose.elevation], h_pose)
        for name, a, f in (("azimuth", ev.grads.d_azimuth, fd_pose[0]),
                           ("elevation", ev.grads.d_elevation, fd_pose[1])):
            e = _rel(a, f, min_grad)
            if e > worst:
                worst, worst_at = e, f"triple{t}:{name}"
        n_checked += 2
    return GradCheckReport(float(worst), worst_at, n_checked, n_skipped)
