"""Adaptive-moment descent and the pose / shape applications built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraPose, Intrinsics, SamplingConfig, wrap_angle
from .consistency import ConsistencyWeights, evaluate
from .voxel import VoxelGrid

LOGIT_CLIP = 1e-6
HALF_PI = math.pi / 2


@dataclass(frozen=True)
class OptimConfig:
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 500
    tol: float = 1e-6
    # stop after this many iterations without a best-loss improvement > tol
    patience: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be nonnegative, got {self.tol}")
        if int(self.patience) != self.patience or self.patience < 1:
            raise ValueError(f"patience must be an integer >= 1, got {self.patience}")


# Shape fitting defaults: large steps in logit space and an eps well below
# the gradient scale of rays that cross many half-occupied samples.
SHAPE_OPTIM = OptimConfig(step_size=0.2, max_iters=300, eps=1e-16)


@dataclass
class MomentState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "MomentState":
        return cls(np.zeros(n), np.zeros(n), 0)


def moment_step(state: MomentState, params, grads, cfg: OptimConfig):
    """One bias-corrected Adam update. Returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new = params - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return MomentState(m, v, t), new


@dataclass
class PoseEstimate:
    pose: CameraPose
    final_loss: float
    trace: list[dict] = field(default_factory=list)


@dataclass
class ReconstructionResult:
    grid: VoxelGrid
    final_loss: float
    trace: list[dict] = field(default_factory=list)


def _pose_record(it, loss, az, el):
    return {"iter": it, "loss": loss, "azimuth_deg": math.degrees(az), "elevation_deg": math.degrees(el)}


def _clamp_elevation(e):
    return min(max(e, -HALF_PI), HALF_PI)


class _Plateau:
    """Best-so-far tracker with patience-based stopping."""

    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.best = math.inf
        self.best_at = 0
        self.ref = math.inf

    def update(self, it, loss) -> bool:
        improved = loss < self.best
        if improved:
            self.best = loss
        if loss < self.ref - self.cfg.tol:
            self.ref = loss
            self.best_at = it
        return improved

    def stalled(self, it) -> bool:
        return it - self.best_at >= self.cfg.patience


def _descend_pose(grid, mask, start: CameraPose, k, s, w, cfg, threads):
    az, el = start.azimuth, start.elevation
    state = MomentState.zeros(2)
    tracker = _Plateau(cfg)
    best = (math.inf, az, el)
    trace = []
    for it in range(cfg.max_iters):
        ev = evaluate(grid, start.with_angles(az, el), mask, k, s, w, need_pose=True, threads=threads)
        trace.append(_pose_record(it, ev.loss, az, el))
        if tracker.update(it, ev.loss):
            best = (ev.loss, az, el)
        if tracker.stalled(it) or it == cfg.max_iters - 1:
            break
        state, (az, el) = moment_step(state, [az, el], [ev.grads.d_azimuth, ev.grads.d_elevation], cfg)
        az, el = wrap_angle(az), _clamp_elevation(el)
    loss, az, el = best
    trace.append(_pose_record(len(trace), loss, az, el))
    return PoseEstimate(start.with_angles(az, el), loss, trace)


def estimate_pose(
    grid: VoxelGrid,
    mask,
    init: CameraPose,
    k: Intrinsics | None = None,
    s: SamplingConfig | None = None,
    w: ConsistencyWeights | None = None,
    cfg: OptimConfig | None = None,
    restarts: int = 1,
    threads: int = 1,
) -> PoseEstimate:
    """Fit (azimuth, elevation) so that ``grid`` seen from the pose explains ``mask``.

    The first run starts at ``init``; each further restart starts from a
    seeded random azimuth and a perturbed elevation. The lowest-loss run is
    returned, and its trace ends with a record of the returned pose.
    """
    cfg = cfg or OptimConfig()
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    starts = [init]
    for _ in range(restarts - 1):
        az = init.azimuth + rng.uniform(-math.pi, math.pi)
        el = _clamp_elevation(init.elevation + rng.uniform(-math.pi / 6, math.pi / 6))
        starts.append(init.with_angles(az, el))
    best = None
    for start in starts:
        est = _descend_pose(grid, mask, start, k, s, w, cfg, threads)
        if best is None or est.final_loss < best.final_loss:
            best = est
    return best


def _logits(values):
    y = np.clip(values, LOGIT_CLIP, 1.0 - LOGIT_CLIP)
    return np.log(y) - np.log1p(-y)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _mean_view_loss(grid, observations, k, s, w, threads, need_pose=False):
    total, d_grid = 0.0, np.zeros(grid.values.shape)
    d_az = d_el = 0.0
    for mask, pose in observations:
        ev = evaluate(grid, pose, mask, k, s, w, need_grid=True, need_pose=need_pose, threads=threads)
        total += ev.loss
        d_grid += ev.grads.d_grid
        d_az += ev.grads.d_azimuth
        d_el += ev.grads.d_elevation
    n = len(observations)
    return total / n, d_grid / n, d_az / n, d_el / n


def reconstruct(
    observations,
    grid_dim: int = 32,
    k: Intrinsics | None = None,
    s: SamplingConfig | None = None,
    w: ConsistencyWeights | None = None,
    cfg: OptimConfig | None = None,
    threads: int = 1,
    init_occupancy: float = 0.5,
    init_noise: float = 0.1,
) -> ReconstructionResult:
    """Shape from silhouettes: optimise grid logits against (mask, pose) views.

    Logits start at ``logit(init_occupancy)`` plus seeded Gaussian noise of
    scale ``init_noise``. The loss is the mean self-consistency loss over views.

    Starting undecided (0.5) lets background rays carve free space, much like
    a visual hull. Their gradients are products over many half-opaque samples
    and can be far below 1e-8, so ``cfg.eps`` must be correspondingly small
    (see :data:`SHAPE_OPTIM`). Starting nearly empty instead leaves voxels
    hidden behind an opaque shell with no gradient at all.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("reconstruct needs at least one observation")
    cfg = cfg or SHAPE_OPTIM
    rng = np.random.default_rng(cfg.seed)
    shape = (grid_dim,) * 3
    if not 0 < init_occupancy < 1:
        raise ValueError("init_occupancy must lie in (0, 1)")
    logits = np.full(grid_dim**3, math.log(init_occupancy / (1.0 - init_occupancy)))
    if init_noise > 0:
        logits += rng.normal(0.0, init_noise, size=logits.size)
    state = MomentState.zeros(logits.size)
    tracker = _Plateau(cfg)
    best_loss, best_values = math.inf, None
    trace = []
    for it in range(cfg.max_iters):
        y = _sigmoid(logits)
        grid = VoxelGrid(y.reshape(shape), check=False)
        loss, d_grid, _, _ = _mean_view_loss(grid, observations, k, s, w, threads)
        trace.append({"iter": it, "loss": loss})
        if tracker.update(it, loss):
            best_loss, best_values = loss, y
        if tracker.stalled(it) or it == cfg.max_iters - 1:
            break
        state, logits = moment_step(state, logits, d_grid.reshape(-1) * y * (1.0 - y), cfg)
    return ReconstructionResult(VoxelGrid(best_values.reshape(shape)), best_loss, trace)


def joint_refine(
    grid: VoxelGrid,
    mask,
    init_pose: CameraPose,
    k: Intrinsics | None = None,
    s: SamplingConfig | None = None,
    w: ConsistencyWeights | None = None,
    cfg: OptimConfig | None = None,
    threads: int = 1,
):
    """Descend jointly on grid logits and pose angles for a single view.

    Returns ``(ReconstructionResult, PoseEstimate)`` for the best iterate.
    Grid values are clipped to [1e-6, 1 - 1e-6] before taking logits.
    """
    cfg = cfg or OptimConfig()
    shape = grid.values.shape
    n = grid.values.size
    params = np.concatenate([_logits(grid.values.reshape(-1)), [init_pose.azimuth, init_pose.elevation]])
    state = MomentState.zeros(n + 2)
    tracker = _Plateau(cfg)
    best = None
    grid_trace, pose_trace = [], []
    for it in range(cfg.max_iters):
        y = _sigmoid(params[:n])
        az, el = params[n], params[n + 1]
        g = VoxelGrid(y.reshape(shape), check=False)
        pose = init_pose.with_angles(az, el)
        loss, d_grid, d_az, d_el = _mean_view_loss(g, [(mask, pose)], k, s, w, threads, need_pose=True)
        grid_trace.append({"iter": it, "loss": loss})
        pose_trace.append(_pose_record(it, loss, az, el))
        if tracker.update(it, loss):
            best = (loss, y, az, el)
        if tracker.stalled(it) or it == cfg.max_iters - 1:
            break
        grads = np.concatenate([d_grid.reshape(-1) * y * (1.0 - y), [d_az, d_el]])
        state, params = moment_step(state, params, grads, cfg)
        params[n] = wrap_angle(params[n])
        params[n + 1] = _clamp_elevation(params[n + 1])
    loss, y, az, el = best
    pose_trace.append(_pose_record(len(pose_trace), loss, az, el))
    return (
        ReconstructionResult(VoxelGrid(y.reshape(shape)), loss, grid_trace),
        PoseEstimate(init_pose.with_angles(az, el), loss, pose_trace),
    )
