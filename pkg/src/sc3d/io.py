"""File formats and run configuration.

* ``.binvox``: the standard run-length encoded binary voxel format. Its
  voxel order is x slowest, then z, then y fastest; grids are transposed to
  and from our (x, y, z) layout on write and read.
* ``.voxf``: ASCII header ``voxf <V>\\n`` followed by V^3 little-endian
  float64 values in (x, y, z) C order.
* ``.pgm``: binary greymap (P5, maxval 255); a pixel of value p reads as
  p / 255 and a mask value m is written as floor(255 m + 0.5).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .camera import DEFAULT_TRANSLATION, CameraPose, Intrinsics, SamplingConfig
from .consistency import ConsistencyWeights, check_mask
from .losses import LossWeights
from .optim import SHAPE_OPTIM, OptimConfig
from .voxel import VoxelGrid


class FormatError(ValueError):
    """Malformed or inconsistent file content."""


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the offending key."""


# -- binvox -----------------------------------------------------------------

def write_binvox(grid: VoxelGrid, translate=(-0.5, -0.5, -0.5), scale: float = 1.0) -> bytes:
    if not grid.is_binary():
        raise ValueError("binvox stores binary grids only; binarize first")
    V = grid.dim
    data = grid.values.transpose(0, 2, 1).reshape(-1).astype(np.uint8)
    out = bytearray()
    out += b"#binvox 1\n"
    out += f"dim {V} {V} {V}\n".encode()
    out += ("translate " + " ".join(repr(float(c)) for c in translate) + "\n").encode()
    out += f"scale {float(scale)!r}\n".encode()
    out += b"data\n"
    # run boundaries, then split runs longer than 255
    change = np.flatnonzero(np.diff(data)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [data.size]])
    for a, b in zip(starts, ends):
        value, n = int(data[a]), int(b - a)
        while n > 0:
            c = min(n, 255)
            out += bytes((value, c))
            n -= c
    return bytes(out)


def _header_line(buf: bytes, pos: int):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FormatError("malformed header: unexpected end of file")
    return buf[pos:end].strip(), end + 1


def read_binvox(buf: bytes) -> VoxelGrid:
    line, pos = _header_line(buf, 0)
    if not line.startswith(b"#binvox"):
        raise FormatError("malformed header: missing '#binvox' magic")
    dims = None
    while True:
        line, pos = _header_line(buf, pos)
        key, _, rest = line.partition(b" ")
        if key == b"data":
            break
        if key == b"dim":
            try:
                dims = [int(x) for x in rest.split()]
            except ValueError:
                raise FormatError(f"malformed header: bad dim line {line!r}") from None
            if len(dims) != 3:
                raise FormatError(f"malformed header: bad dim line {line!r}")
        elif key in (b"translate", b"scale"):
            pass
        else:
            raise FormatError(f"malformed header: unexpected line {line!r}")
    if dims is None:
        raise FormatError("malformed header: no dim line")
    if len(set(dims)) != 1 or dims[0] < 1:
        raise FormatError(f"non-cubic dims {dims}")
    V = dims[0]
    raw = np.frombuffer(buf, dtype=np.uint8, offset=pos)
    if raw.size % 2:
        raise FormatError("RLE payload has odd length")
    values, counts = raw[0::2], raw[1::2].astype(np.int64)
    total = int(counts.sum())
    if total > V**3:
        raise FormatError(f"RLE overrun: {total} voxels for a {V}^3 grid")
    if total < V**3:
        raise FormatError(f"RLE underrun: {total} voxels for a {V}^3 grid")
    data = np.repeat(values != 0, counts).astype(np.float64)
    return VoxelGrid(data.reshape(V, V, V).transpose(0, 2, 1))


# -- voxf -------------------------------------------------------------------

def write_voxf(grid: VoxelGrid) -> bytes:
    return f"voxf {grid.dim}\n".encode() + grid.values.astype("<f8").tobytes()


def read_voxf(buf: bytes) -> VoxelGrid:
    end = buf.find(b"\n")
    parts = buf[:end].split() if end >= 0 else []
    if len(parts) != 2 or parts[0] != b"voxf":
        raise FormatError("malformed header: expected 'voxf <V>'")
    try:
        V = int(parts[1])
    except ValueError:
        raise FormatError(f"malformed header: bad dimension {parts[1]!r}") from None
    if V < 1:
        raise FormatError(f"malformed header: bad dimension {V}")
    payload = buf[end + 1:]
    need = 8 * V**3
    if len(payload) < need:
        raise FormatError("truncated payload")
    if len(payload) > need:
        raise FormatError("payload longer than header dimension")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(V, V, V)
    if np.any(~np.isfinite(values)) or values.min() < 0 or values.max() > 1:
        raise FormatError("voxf values must lie in [0, 1]")
    return VoxelGrid(values)


# -- PGM masks ---------------------------------------------------------------

def quantize(mask) -> np.ndarray:
    m = check_mask(mask)
    return np.floor(m * 255.0 + 0.5).astype(np.uint8)


def write_mask_pgm(mask) -> bytes:
    q = quantize(mask)
    H, W = q.shape
    return f"P5\n{W} {H}\n255\n".encode() + q.tobytes()


def read_mask_pgm(buf: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("malformed PGM header")
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r}, expected b'P5')")
    try:
        W, H, maxval = (int(x) for x in tokens[1:])
    except ValueError:
        raise FormatError("malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}; expected 255")
    raster = buf[pos:pos + W * H]
    if len(raster) != W * H:
        raise FormatError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(H, W).astype(np.float64) / 255.0


# -- paths -------------------------------------------------------------------

def load_grid(path) -> VoxelGrid:
    path = Path(path)
    buf = path.read_bytes()
    if path.suffix == ".binvox":
        return read_binvox(buf)
    if path.suffix == ".voxf":
        return read_voxf(buf)
    raise FormatError(f"unknown grid format {path.suffix!r} (want .binvox or .voxf)")


def save_grid(path, grid: VoxelGrid) -> None:
    path = Path(path)
    if path.suffix == ".binvox":
        path.write_bytes(write_binvox(grid))
    elif path.suffix == ".voxf":
        path.write_bytes(write_voxf(grid))
    else:
        raise FormatError(f"unknown grid format {path.suffix!r} (want .binvox or .voxf)")


def load_mask(path) -> np.ndarray:
    return read_mask_pgm(Path(path).read_bytes())


def save_mask(path, mask) -> None:
    Path(path).write_bytes(write_mask_pgm(mask))


def load_views(path, default_translation=DEFAULT_TRANSLATION):
    """Read a JSON list of ``{"mask": file, "azimuth_deg", "elevation_deg"[, "translation"]}``.

    Mask paths are resolved relative to the list file. Returns a list of
    ``(mask, CameraPose)`` pairs.
    """
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise FormatError("view list must be a JSON array")
    views = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or "mask" not in e:
            raise FormatError(f"view {i}: expected an object with a 'mask' path")
        pose_obj = {key: val for key, val in e.items() if key != "mask"}
        pose_obj.setdefault("translation", list(default_translation))
        try:
            pose = CameraPose.from_json(pose_obj)
        except ValueError as exc:
            raise FormatError(f"view {i}: {exc}") from None
        views.append((load_mask(path.parent / e["mask"]), pose))
    return views


# -- run configuration -------------------------------------------------------

def _shape_optim_default():
    return SHAPE_OPTIM


@dataclass
class RunConfig:
    grid_dim: int = 32
    mask_height: int = 48
    mask_width: int = 48
    intrinsics: Intrinsics | None = None  # None: Intrinsics.default(W, H)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    translation: tuple = DEFAULT_TRANSLATION
    consistency: ConsistencyWeights = field(default_factory=ConsistencyWeights)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    shape_optim: OptimConfig = field(default_factory=_shape_optim_default)
    init_occupancy: float = 0.5
    init_noise: float = 0.1

    def resolved_intrinsics(self, width: int | None = None, height: int | None = None) -> Intrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        return Intrinsics.default(width or self.mask_width, height or self.mask_height)

    def pose(self, azimuth_deg: float, elevation_deg: float) -> CameraPose:
        return CameraPose.from_degrees(azimuth_deg, elevation_deg, self.translation)

    def to_json(self) -> dict:
        return {
            "grid_dim": self.grid_dim,
            "mask": {"height": self.mask_height, "width": self.mask_width},
            "intrinsics": asdict(self.resolved_intrinsics()),
            "sampling": asdict(self.sampling),
            "translation": list(self.translation),
            "alpha1": self.consistency.alpha1,
            "alpha2": self.consistency.alpha2,
            "iou_denominator": self.consistency.iou_denominator,
            **asdict(self.loss_weights),
            "optim": asdict(self.optim),
            "shape_optim": asdict(self.shape_optim),
            "init_occupancy": self.init_occupancy,
            "init_noise": self.init_noise,
        }


_TOP_KEYS = {
    "grid_dim", "mask", "intrinsics", "sampling", "translation", "alpha1", "alpha2",
    "iou_denominator", "alpha3", "alpha4", "alpha5", "alpha6", "alpha_p", "optim",
    "shape_optim", "init_occupancy", "init_noise",
}


def _build(cls, key, obj, base=None):
    """Construct dataclass ``cls`` from a JSON object, naming ``key`` on error."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{key}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise ConfigError(f"{key}: unknown key(s) {sorted(unknown)}")
    kwargs = asdict(base) if base is not None else {}
    kwargs.update(obj)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def read_run_config(text: str) -> RunConfig:
    """Parse a JSON run configuration; missing fields take the defaults."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError("<root>: expected a JSON object")
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}")
    cfg = RunConfig()

    def positive_int(key, value):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"{key}: must be an integer >= 1, got {value!r}")
        return value

    if "grid_dim" in obj:
        cfg.grid_dim = positive_int("grid_dim", obj["grid_dim"])
    if "mask" in obj:
        m = obj["mask"]
        if not isinstance(m, dict) or set(m) - {"height", "width"}:
            raise ConfigError("mask: expected an object with 'height' and/or 'width'")
        if "height" in m:
            cfg.mask_height = positive_int("mask.height", m["height"])
        if "width" in m:
            cfg.mask_width = positive_int("mask.width", m["width"])
    if obj.get("intrinsics") is not None:
        cfg.intrinsics = _build(Intrinsics, "intrinsics", obj["intrinsics"])
    if "sampling" in obj:
        cfg.sampling = _build(SamplingConfig, "sampling", obj["sampling"])
    if "translation" in obj:
        t = obj["translation"]
        if not (isinstance(t, list) and len(t) == 3 and all(isinstance(c, (int, float)) for c in t)):
            raise ConfigError("translation: expected a list of 3 numbers")
        cfg.translation = tuple(float(c) for c in t)
    cons = {key: obj[key] for key in ("alpha1", "alpha2", "iou_denominator") if key in obj}
    if cons:
        cfg.consistency = _build(ConsistencyWeights, "consistency", cons)
    lw = {key: obj[key] for key in ("alpha3", "alpha4", "alpha5", "alpha6", "alpha_p") if key in obj}
    if lw:
        cfg.loss_weights = _build(LossWeights, "loss_weights", lw)
    if "optim" in obj:
        cfg.optim = _build(OptimConfig, "optim", obj["optim"], cfg.optim)
    if "shape_optim" in obj:
        cfg.shape_optim = _build(OptimConfig, "shape_optim", obj["shape_optim"], cfg.shape_optim)
    for key in ("init_occupancy", "init_noise"):
        if key in obj:
            val = obj[key]
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
                raise ConfigError(f"{key}: expected a number")
            setattr(cfg, key, float(val))
    if not 0 < cfg.init_occupancy < 1:
        raise ConfigError("init_occupancy: must lie in (0, 1)")
    if cfg.init_noise < 0:
        raise ConfigError("init_noise: must be nonnegative")
    return cfg
