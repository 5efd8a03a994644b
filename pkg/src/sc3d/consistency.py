"""Ray-consistency and projection losses with analytic gradients.

For a ray with sampled occupancies ``y_1..y_N`` the stop probability at the
i-th sample is ``q(i) = y_i * prod_{j<i} (1 - y_j)`` and the escape
probability is ``prod_i (1 - y_i)``. A rendered silhouette pixel is
``1 - escape``.

All image-level functions evaluate rays in fixed blocks of rows. Blocks can
be mapped over a thread pool, but partial sums are always reduced in block
order, so results do not depend on the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .camera import (
    CameraPose,
    Intrinsics,
    SamplingConfig,
    pixel_centers,
    rotation_matrix,
    ray_direction,
    rotation_matrix_grad,
)
from ._kernels import backward_rays, forward_rays
from .voxel import VoxelGrid, padded

BLOCK_ROWS = 8
IOU_DENOMINATORS = ("standard", "verbatim")


@dataclass(frozen=True)
class ConsistencyWeights:
    alpha1: float = 5.0
    alpha2: float = 0.125
    # "standard": sum(P + m - P*m); "verbatim": sum(P + m + P*m) as printed
    iou_denominator: str = "standard"

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.iou_denominator not in IOU_DENOMINATORS:
            raise ValueError(f"iou_denominator must be one of {IOU_DENOMINATORS}")


@dataclass
class RayProfile:
    occupancies: np.ndarray
    stop_probs: np.ndarray
    escape_prob: float


@dataclass
class GradBundle:
    d_grid: np.ndarray | None  # (V, V, V)
    d_azimuth: float
    d_elevation: float


@dataclass
class Evaluation:
    loss: float
    l_ray: float
    l_proj: float
    projection: np.ndarray
    grads: GradBundle | None = None


def check_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.size and (np.any(~np.isfinite(mask)) or mask.min() < 0 or mask.max() > 1):
        raise ValueError("mask values must lie in [0, 1]")
    return mask


def pmap(fn, items, threads: int = 1) -> list:
    """Ordered map, optionally over a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def stop_escape(occ: np.ndarray):
    """Stop probabilities and escape probability along the last axis.

    Returns ``(prefix, stop, escape)`` where ``prefix[..., i]`` is the
    transmittance before sample i.
    """
    one_minus = 1.0 - occ
    prefix = np.ones_like(occ)
    if occ.shape[-1] > 1:
        np.cumprod(one_minus[..., :-1], axis=-1, out=prefix[..., 1:])
    stop = occ * prefix
    escape = prefix[..., -1] * one_minus[..., -1]
    return prefix, stop, escape


class _Block:
    """One block of image rows: forward state kept for the backward pass."""

    def __init__(self, pv, dim, pose, R, k, s, u, v):
        self.pv, self.dim, self.R = pv, dim, R
        self.shape = u.shape
        self.dirs = np.ascontiguousarray(ray_direction(u, v, k).reshape(-1, 3))
        self.depths = s.depths()
        self.t = np.asarray(pose.translation)
        occ, escape, stop_sum = forward_rays(pv, dim, self.dirs, self.depths, self.t, R)
        self.occ = occ
        self.escape = escape.reshape(self.shape)
        self.stop_sum = stop_sum.reshape(self.shape)

    def backward(self, g_escape, dR_az, dR_el, need_grid, need_pose):
        flat, d_az, d_el = backward_rays(
            self.pv, self.dim, self.dirs, self.depths, self.t, self.R, dR_az, dR_el,
            self.occ, np.ascontiguousarray(g_escape, dtype=np.float64).reshape(-1), need_grid, need_pose,
        )
        d_grid = None
        if need_grid:
            P = self.dim + 2
            d_grid = flat.reshape(P, P, P)[1:-1, 1:-1, 1:-1]
        return d_grid, d_az, d_el


def _blocks(height, width):
    return [(r, min(r + BLOCK_ROWS, height)) for r in range(0, height, BLOCK_ROWS)]


def _defaults(k, s, width, height):
    return (k if k is not None else Intrinsics.default(width, height),
            s if s is not None else SamplingConfig())


def projection_loss_grad(P: np.ndarray, m: np.ndarray, denominator: str = "standard"):
    """IoU loss ``exp(1 - I/U) - 1`` and its gradient w.r.t. ``P``."""
    P = np.asarray(P, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if P.shape != m.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {m.shape}")
    if denominator not in IOU_DENOMINATORS:
        raise ValueError(f"unknown denominator {denominator!r}")
    sign = -1.0 if denominator == "standard" else 1.0
    inter = float(np.sum(P * m))
    union = float(np.sum(P + m + sign * P * m))
    if union == 0.0:
        # empty vs empty counts as perfect agreement
        return 0.0, np.zeros_like(P)
    ratio = inter / union
    e = math.exp(1.0 - ratio)
    d_ratio = (m - ratio * (1.0 + sign * m)) / union
    return e - 1.0, -e * d_ratio


def projection_loss(P, m, denominator: str = "standard") -> float:
    return projection_loss_grad(P, m, denominator)[0]


def evaluate(
    grid: VoxelGrid,
    pose: CameraPose,
    mask,
    k: Intrinsics | None = None,
    s: SamplingConfig | None = None,
    w: ConsistencyWeights | None = None,
    need_grid: bool = False,
    need_pose: bool = False,
    threads: int = 1,
) -> Evaluation:
    """Self-consistency loss for one view, optionally with gradients."""
    mask = check_mask(mask)
    H, W = mask.shape
    k, s = _defaults(k, s, W, H)
    w = w or ConsistencyWeights()
    u, v = pixel_centers(H, W)
    R = rotation_matrix(pose)
    pv = padded(grid)
    spans = _blocks(H, W)

    blocks = pmap(
        lambda span: _Block(pv, grid.dim, pose, R, k, s, u[span[0]:span[1]], v[span[0]:span[1]]),
        spans,
        threads,
    )
    escape = np.concatenate([b.escape for b in blocks], axis=0)
    stop_sum = np.concatenate([b.stop_sum for b in blocks], axis=0)
    P = 1.0 - escape

    n_pix = H * W
    l_ray = float(np.sum(mask * escape + (1.0 - mask) * stop_sum)) / n_pix if n_pix else 0.0
    l_proj, g_P = projection_loss_grad(P, mask, w.iou_denominator)
    loss = w.alpha1 * l_ray + w.alpha2 * l_proj
    ev = Evaluation(loss, l_ray, l_proj, P)
    if not (need_grid or need_pose):
        return ev

    # d(sum q)/d escape = -1, so the ray term has slope (2m - 1) / HW in escape
    g_escape = w.alpha1 * (2.0 * mask - 1.0) / n_pix - w.alpha2 * g_P
    dR_az, dR_el = rotation_matrix_grad(pose)
    parts = pmap(
        lambda i: blocks[i].backward(g_escape[spans[i][0]:spans[i][1]], dR_az, dR_el, need_grid, need_pose),
        range(len(blocks)),
        threads,
    )
    d_grid = None
    if need_grid:
        d_grid = np.zeros(grid.values.shape)
        for g, _, _ in parts:
            d_grid += g
    d_az = d_el = 0.0
    for _, a, e in parts:
        d_az += a
        d_el += e
    ev.grads = GradBundle(d_grid, d_az, d_el)
    return ev


def ray_profile(grid: VoxelGrid, pose: CameraPose, k: Intrinsics, u: float, v: float,
                s: SamplingConfig | None = None) -> RayProfile:
    s = s or SamplingConfig()
    b = _Block(padded(grid), grid.dim, pose, rotation_matrix(pose), k, s,
               np.array([[u]], dtype=np.float64), np.array([[v]], dtype=np.float64))
    occ = b.occ[0]
    _, stop, escape = stop_escape(occ)
    return RayProfile(occ, stop, float(escape))


def profile_from_occupancies(occ) -> RayProfile:
    occ = np.asarray(occ, dtype=np.float64)
    _, stop, escape = stop_escape(occ)
    return RayProfile(occ, stop, float(escape))


def ray_loss(profile: RayProfile, m_uv: float) -> float:
    return float(m_uv * profile.escape_prob + (1.0 - m_uv) * np.sum(profile.stop_probs))


def ray_consistency_loss(grid, pose, mask, k=None, s=None, threads: int = 1) -> float:
    return evaluate(grid, pose, mask, k, s, threads=threads).l_ray


def project(grid: VoxelGrid, pose: CameraPose, k: Intrinsics | None = None,
            height: int = 48, width: int = 48, s: SamplingConfig | None = None,
            threads: int = 1) -> np.ndarray:
    """Soft silhouette ``1 - escape`` at every pixel, shape (H, W)."""
    k, s = _defaults(k, s, width, height)
    u, v = pixel_centers(height, width)
    R = rotation_matrix(pose)
    pv = padded(grid)
    blocks = pmap(
        lambda span: _Block(pv, grid.dim, pose, R, k, s, u[span[0]:span[1]], v[span[0]:span[1]]),
        _blocks(height, width),
        threads,
    )
    if not blocks:
        return np.zeros((height, width))
    return 1.0 - np.concatenate([b.escape for b in blocks], axis=0)


def self_consistency_loss(grid, pose, mask, k=None, s=None, w=None, threads: int = 1) -> float:
    return evaluate(grid, pose, mask, k, s, w, threads=threads).loss


def self_consistency_grad(grid, pose, mask, k=None, s=None, w=None, threads: int = 1):
    """Loss and :class:`GradBundle` w.r.t. grid values and both pose angles."""
    ev = evaluate(grid, pose, mask, k, s, w, need_grid=True, need_pose=True, threads=threads)
    return ev.loss, ev.grads
