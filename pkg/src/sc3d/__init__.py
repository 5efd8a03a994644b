"""Differentiable silhouette self-consistency for voxel grids and camera poses."""

__version__ = "0.1.0"

from .camera import CameraPose, Intrinsics, SamplingConfig, rotation_matrix, to_world
from .consistency import (
    ConsistencyWeights,
    GradBundle,
    RayProfile,
    evaluate,
    project,
    projection_loss,
    ray_consistency_loss,
    ray_loss,
    ray_profile,
    self_consistency_grad,
    self_consistency_loss,
)
from .losses import LatentGaussian, LossWeights, kl_loss, l2d, l3d, pce_loss, voxel_iou_loss
from .optim import OptimConfig, estimate_pose, joint_refine, moment_step, reconstruct
from .voxel import VoxelGrid, binarize, trilinear_sample, voxel_iou

__all__ = [
    "CameraPose", "Intrinsics", "SamplingConfig", "rotation_matrix", "to_world",
    "ConsistencyWeights", "GradBundle", "RayProfile", "evaluate", "project", "projection_loss",
    "ray_consistency_loss", "ray_loss", "ray_profile", "self_consistency_grad", "self_consistency_loss",
    "LatentGaussian", "LossWeights", "kl_loss", "l2d", "l3d", "pce_loss", "voxel_iou_loss",
    "OptimConfig", "estimate_pose", "joint_refine", "moment_step", "reconstruct",
    "VoxelGrid", "binarize", "trilinear_sample", "voxel_iou",
]
