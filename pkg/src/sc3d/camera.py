"""Camera model: pose angles, rotations, ray directions and depth samples.

Conventions used throughout the package:

* A pose is (azimuth, elevation) plus a translation expressed in the camera
  frame. The rotation is ``R = R_y(azimuth) @ R_x(elevation)``; ``y`` is the
  world up axis.
* A camera-frame point ``l`` maps to the world as ``R @ (l + t)``.
* Pixel ``(u, v)`` is (column, row). Rendering evaluates rays through pixel
  centres, i.e. ``u = col + 0.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TRANSLATION = (0.0, 0.0, -0.5)


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Intrinsics:
    f_u: float
    f_v: float
    u_0: float
    v_0: float

    def __post_init__(self):
        if not self.f_u > 0:
            raise ValueError(f"f_u must be positive, got {self.f_u}")
        if not self.f_v > 0:
            raise ValueError(f"f_v must be positive, got {self.f_v}")

    @classmethod
    def default(cls, width: int, height: int) -> "Intrinsics":
        # f = W/2: at the grid-centre depth the frustum just spans the unit cube
        return cls(width / 2.0, width / 2.0, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class CameraPose:
    azimuth: float = 0.0
    elevation: float = 0.0
    translation: tuple[float, float, float] = field(default=DEFAULT_TRANSLATION)

    def __post_init__(self):
        object.__setattr__(self, "azimuth", wrap_angle(float(self.azimuth)))
        object.__setattr__(self, "elevation", float(self.elevation))
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3:
            raise ValueError("translation must have 3 components")
        object.__setattr__(self, "translation", t)
        if not -math.pi / 2 <= self.elevation <= math.pi / 2:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")

    @classmethod
    def from_degrees(cls, azimuth_deg, elevation_deg, translation=DEFAULT_TRANSLATION):
        return cls(math.radians(azimuth_deg), math.radians(elevation_deg), translation)

    @property
    def azimuth_deg(self) -> float:
        return math.degrees(self.azimuth)

    @property
    def elevation_deg(self) -> float:
        return math.degrees(self.elevation)

    def with_angles(self, azimuth: float, elevation: float) -> "CameraPose":
        return CameraPose(azimuth, elevation, self.translation)

    def to_json(self) -> dict:
        return {
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "translation": list(self.translation),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CameraPose":
        unknown = set(obj) - {"azimuth_deg", "elevation_deg", "translation"}
        if unknown:
            raise ValueError(f"unknown pose keys: {sorted(unknown)}")
        return cls.from_degrees(
            float(obj.get("azimuth_deg", 0.0)),
            float(obj.get("elevation_deg", 0.0)),
            tuple(obj.get("translation", DEFAULT_TRANSLATION)),
        )


@dataclass(frozen=True)
class SamplingConfig:
    n_samples: int = 64
    depth_min: float = 0.0
    depth_max: float = 1.0

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError(f"n_samples must be an integer >= 1, got {self.n_samples}")
        if not 0 <= self.depth_min < self.depth_max:
            raise ValueError(
                f"need 0 <= depth_min < depth_max, got {self.depth_min}, {self.depth_max}"
            )

    def depths(self) -> np.ndarray:
        i = np.arange(1, self.n_samples + 1, dtype=np.float64)
        return self.depth_min + (i / self.n_samples) * (self.depth_max - self.depth_min)


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(e: float) -> np.ndarray:
    c, s = math.cos(e), math.sin(e)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _drot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drot_x(e: float) -> np.ndarray:
    c, s = math.cos(e), math.sin(e)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def rotation_matrix(pose: CameraPose) -> np.ndarray:
    return _rot_y(pose.azimuth) @ _rot_x(pose.elevation)


def rotation_matrix_grad(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Return (dR/d_azimuth, dR/d_elevation)."""
    ry, rx = _rot_y(pose.azimuth), _rot_x(pose.elevation)
    return _drot_y(pose.azimuth) @ rx, ry @ _drot_x(pose.elevation)


def ray_direction(u, v, k: Intrinsics) -> np.ndarray:
    """Camera-frame ray direction through pixel (u, v); z component is 1.

    Accepts scalars or broadcastable arrays; the result has a trailing axis of 3.
    """
    u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
    return np.stack([(u - k.u_0) / k.f_u, (v - k.v_0) / k.f_v, np.ones_like(u)], axis=-1)


def sample_points(u, v, k: Intrinsics, s: SamplingConfig) -> np.ndarray:
    """Camera-frame sample locations along the ray through (u, v).

    Shape is ``(..., N, 3)`` for inputs of shape ``(...)``.
    """
    d = ray_direction(u, v, k)
    return d[..., None, :] * s.depths()[:, None]


def to_world(pose: CameraPose, l) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    return (l + np.asarray(pose.translation)) @ rotation_matrix(pose).T


def pixel_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """(u, v) coordinates of every pixel centre, each of shape (H, W)."""
    v, u = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    return u, v
