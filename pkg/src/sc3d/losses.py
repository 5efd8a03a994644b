"""Supervised and semi-supervised reconstruction losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consistency import projection_loss
from .voxel import VoxelGrid

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha3: float = 0.5  # L_3D
    alpha4: float = 0.5  # L_2D
    alpha5: float = 1.0  # self-consistency
    alpha6: float = 0.02  # KL
    alpha_p: float = 3.0  # positive-class weight in the voxel cross-entropy

    def __post_init__(self):
        for name in ("alpha3", "alpha4", "alpha5", "alpha6"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.alpha_p >= 1:
            raise ValueError(f"alpha_p must be >= 1, got {self.alpha_p}")


@dataclass(frozen=True)
class LatentGaussian:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.variance, dtype=np.float64))
        if mean.shape != var.shape:
            raise ValueError(f"mean and variance shapes differ: {mean.shape} vs {var.shape}")
        if np.any(~(var > 0)):
            raise ValueError("variance entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)


def _values(x):
    return x.values if isinstance(x, VoxelGrid) else np.asarray(x, dtype=np.float64)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def weighted_bce(pred, target, alpha_p: float = 1.0) -> float:
    """Mean of ``-alpha_p*y*log(p) - (1-y)*log(1-p)`` with p clamped to [EPS, 1-EPS]."""
    p = np.clip(pred, EPS, 1.0 - EPS)
    y = target
    return float(np.mean(-alpha_p * y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def pce_loss(pred, gt, alpha_p: float = 3.0) -> float:
    p, y = _values(pred), _values(gt)
    _same_shape(p, y)
    return weighted_bce(p, y, alpha_p)


def voxel_iou_loss(pred, gt, denominator: str = "standard") -> float:
    p, y = _values(pred), _values(gt)
    _same_shape(p, y)
    return projection_loss(p, y, denominator)


def l3d(pred, gt, alpha_p: float = 3.0, denominator: str = "standard") -> float:
    return pce_loss(pred, gt, alpha_p) + voxel_iou_loss(pred, gt, denominator)


def l2d(pred_mask, gt_mask) -> float:
    p, y = np.asarray(pred_mask, dtype=np.float64), np.asarray(gt_mask, dtype=np.float64)
    _same_shape(p, y)
    return weighted_bce(p, y, 1.0)


def kl_loss(z: LatentGaussian) -> float:
    """KL(N(mean, variance) || N(0, 1)) summed over dimensions."""
    mu, var = z.mean, z.variance
    return float(0.5 * np.sum(mu * mu + var - np.log(var) - 1.0))


def supervised_total(l_3d, l_2d, l_sc, l_kl, w: LossWeights = LossWeights()) -> float:
    return w.alpha3 * l_3d + w.alpha4 * l_2d + w.alpha5 * l_sc + w.alpha6 * l_kl


def semi_total(l_sc, l_kl, w: LossWeights = LossWeights()) -> float:
    return l_sc + w.alpha6 * l_kl
