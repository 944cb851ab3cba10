"""Swept-volume signed distance queries and continuous collision checking.

The SDF of the volume swept by the robot along an SE(2) trajectory, evaluated
at a world point x, is the minimum over time of the body SDF at the
pose-transformed point.  The minimum is located by Lipschitz-safe coarse time
sampling followed by golden-section refinement of each candidate bracket.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridmap import OccupancyGrid, extract_obstacles
from .minco import Trajectory
from .shape import RobotShape

_GOLDEN = (np.sqrt(5) - 1) / 2
_REFINE_T_TOL = 1e-9


@dataclass(frozen=True)
class SweptQueryResult:
    value: float  # signed meters: min over time of the body SDF
    t_star: float  # arg-min time (seconds)
    refined: bool


@dataclass(frozen=True)
class CollisionReport:
    verdict: str  # "clear" | "colliding"
    hits: tuple = field(default_factory=tuple)  # ((t_lo, t_hi), witness point, depth)

    @property
    def clear(self) -> bool:
        return self.verdict == "clear"


def body_point(traj: Trajectory, shape: RobotShape, x_obs, t: float) -> np.ndarray:
    state = traj.eval(t, 0)
    c, s = np.cos(state[2]), np.sin(state[2])
    dx, dy = x_obs[0] - state[0], x_obs[1] - state[1]
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def composed_sdf(traj: Trajectory, shape: RobotShape, x_obs, t: float) -> float:
    """Body SDF of x_obs at the trajectory pose at time t."""
    return float(shape.sdf(body_point(traj, shape, x_obs, t)))


def _lipschitz_bound(traj: Trajectory, shape: RobotShape, n_probe: int = 128) -> float:
    """Bound on |d/dt composed_sdf|: max speed + circumradius * max yaw rate."""
    ts = np.linspace(0.0, traj.total_duration, n_probe)
    vel = traj.eval_many(ts, order=1)
    v_max = float(np.max(np.linalg.norm(vel[:, :2], axis=1)))
    w_max = float(np.max(np.abs(vel[:, 2]))) if traj.dim >= 3 else 0.0
    return v_max + shape.circumradius * w_max


def _coarse_times(traj: Trajectory, shape: RobotShape, window, spacing_target: float,
                  max_samples: int = 4096) -> np.ndarray:
    t0, t1 = window
    lip = _lipschitz_bound(traj, shape)
    dt = spacing_target / (2 * max(lip, 1e-9)) if lip > 0 else (t1 - t0)
    n = int(np.ceil((t1 - t0) / max(dt, (t1 - t0) / max_samples))) + 1
    n = max(n, 8)
    return np.linspace(t0, t1, min(n, max_samples))


def _golden_refine(f, lo: float, hi: float) -> tuple[float, float]:
    """Golden-section minimization of f over [lo, hi]."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > _REFINE_T_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    t = (a + b) / 2
    return t, f(t)


def _batch_composed(traj: Trajectory, shape: RobotShape, points: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Composed SDF for all (time, point) pairs: shape (len(ts), len(points))."""
    states = traj.eval_many(ts, order=0)
    pos = states[:, :2]
    yaw = states[:, 2] if traj.dim >= 3 else np.zeros(len(ts))
    c, s = np.cos(yaw), np.sin(yaw)
    d = points[None, :, :] - pos[:, None, :]  # (T, P, 2)
    bx = c[:, None] * d[:, :, 0] + s[:, None] * d[:, :, 1]
    by = -s[:, None] * d[:, :, 0] + c[:, None] * d[:, :, 1]
    body = np.stack([bx, by], axis=-1)
    return shape.sdf(body)


def swept_sdf(traj: Trajectory, shape: RobotShape, esdf, x_obs, window=None,
              spacing_target: float | None = None) -> SweptQueryResult:
    """Minimum over time of the body SDF at x_obs; exact polygon distances.

    esdf supplies the refinement spacing target (its resolution) and is kept
    for interface symmetry with the grid-based gradient machinery; values are
    computed from the exact polygon so refinement is resolution-independent.
    """
    x_obs = np.asarray(x_obs, dtype=float)
    if window is None:
        window = (0.0, traj.total_duration)
    t0, t1 = window
    if t1 < t0 or t0 < -1e-12 or t1 > traj.total_duration + 1e-12:
        raise ValueError("window must lie inside [0, total duration]")
    if spacing_target is None:
        spacing_target = esdf.resolution if esdf is not None else 0.05
    if t1 - t0 < 1e-12:
        return SweptQueryResult(composed_sdf(traj, shape, x_obs, t0), t0, False)
    ts = _coarse_times(traj, shape, window, spacing_target)
    vals = _batch_composed(traj, shape, x_obs[None, :], ts)[:, 0]
    best = float(np.min(vals))
    # refine every local minimum that could beat the sampled best
    threshold = best + spacing_target
    candidates = []
    for i in range(len(ts)):
        left = vals[i - 1] if i > 0 else np.inf
        right = vals[i + 1] if i < len(ts) - 1 else np.inf
        if vals[i] <= left and vals[i] <= right and vals[i] <= threshold:
            candidates.append(i)
    f = lambda t: composed_sdf(traj, shape, x_obs, t)
    t_best, v_best = ts[int(np.argmin(vals))], best
    refined = False
    for i in candidates:
        lo = ts[max(i - 1, 0)]
        hi = ts[min(i + 1, len(ts) - 1)]
        t_r, v_r = _golden_refine(f, lo, hi)
        refined = True
        if v_r < v_best:
            t_best, v_best = t_r, v_r
    return SweptQueryResult(float(v_best), float(t_best), refined)


def swept_sdf_batch(traj: Trajectory, shape: RobotShape, points: np.ndarray,
                    spacing_target: float, refine_below: float = np.inf):
    """Vectorized swept SDF for many points.

    Coarse values are shared across points; golden refinement runs only for
    points whose sampled minimum is below refine_below + spacing_target.
    Returns (values (P,), t_stars (P,)).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    ts = _coarse_times(traj, shape, (0.0, traj.total_duration), spacing_target)
    vals = _batch_composed(traj, shape, points, ts)  # (T, P)
    arg = np.argmin(vals, axis=0)
    out_v = vals[arg, np.arange(points.shape[0])]
    out_t = ts[arg]
    need = np.nonzero(out_v <= refine_below + spacing_target)[0]
    if need.size:
        t_r, v_r = _golden_refine_batch(traj, shape, points[need],
                                        ts[np.maximum(arg[need] - 1, 0)],
                                        ts[np.minimum(arg[need] + 1, len(ts) - 1)])
        better = v_r < out_v[need]
        out_v[need[better]] = v_r[better]
        out_t[need[better]] = t_r[better]
    return out_v, out_t


def _golden_refine_batch(traj: Trajectory, shape: RobotShape, points: np.ndarray,
                         lo: np.ndarray, hi: np.ndarray):
    """Golden-section minimization of the composed SDF over per-point time
    brackets, iterated in lockstep for all points at once."""
    n = points.shape[0]
    idx = np.arange(n)

    def f(ts):
        states = traj.eval_many(ts, order=0)
        pos = states[:, :2]
        yaw = states[:, 2] if traj.dim >= 3 else np.zeros(n)
        c, s = np.cos(yaw), np.sin(yaw)
        d = points - pos
        body = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=-1)
        return shape.sdf(body)

    a, b = lo.astype(float).copy(), hi.astype(float).copy()
    c_pt = b - _GOLDEN * (b - a)
    d_pt = a + _GOLDEN * (b - a)
    fc, fd = f(c_pt), f(d_pt)
    span = float(np.max(b - a))
    n_iter = max(int(np.ceil(np.log(max(span, _REFINE_T_TOL) / _REFINE_T_TOL)
                             / -np.log(_GOLDEN))), 1)
    for _ in range(n_iter):
        left = fc < fd
        b[left] = d_pt[left]
        d_pt[left] = c_pt[left]
        fd[left] = fc[left]
        c_pt[left] = b[left] - _GOLDEN * (b[left] - a[left])
        right = ~left
        a[right] = c_pt[right]
        c_pt[right] = d_pt[right]
        fc[right] = fd[right]
        d_pt[right] = a[right] + _GOLDEN * (b[right] - a[right])
        fresh = np.where(left, c_pt, d_pt)
        f_fresh = f(fresh)
        fc[left] = f_fresh[left]
        fd[right] = f_fresh[right]
        if np.max(b - a) <= _REFINE_T_TOL:
            break
    t = (a + b) / 2
    return t, f(t)


def continuous_check(traj: Trajectory, shape: RobotShape, esdf, grid: OccupancyGrid,
                     margin: float = 0.0) -> CollisionReport:
    """Certify the whole trajectory against all occupied cells near its sweep.

    Reports every obstacle point whose swept SDF is below margin, grouped into
    time intervals by arg-min adjacency.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    ts = np.linspace(0.0, traj.total_duration, 256)
    pos = traj.eval_many(ts, order=0)[:, :2]
    pad = shape.circumradius + margin + grid.resolution
    lo = pos.min(axis=0) - pad
    hi = pos.max(axis=0) + pad
    center = (lo + hi) / 2
    half = float(np.max(hi - center))
    points = extract_obstacles(grid, center, half) if half > 0 else np.zeros((0, 2))
    if points.shape[0] == 0:
        return CollisionReport("clear")
    spacing = min(grid.resolution, esdf.resolution if esdf is not None else grid.resolution)
    vals, t_stars = swept_sdf_batch(traj, shape, points, spacing, refine_below=margin)
    bad = np.nonzero(vals < margin - 1e-12)[0]
    if bad.size == 0:
        return CollisionReport("clear")
    lip = _lipschitz_bound(traj, shape)
    dt_group = 2 * spacing / (2 * max(lip, 1e-9))
    order = bad[np.argsort(t_stars[bad], kind="stable")]
    hits = []
    group = [order[0]]
    for idx in order[1:]:
        if t_stars[idx] - t_stars[group[-1]] < dt_group:
            group.append(idx)
        else:
            hits.append(_make_hit(group, t_stars, vals, points, margin))
            group = [idx]
    hits.append(_make_hit(group, t_stars, vals, points, margin))
    return CollisionReport("colliding", tuple(hits))


def _make_hit(group, t_stars, vals, points, margin):
    g = np.array(group)
    worst = g[int(np.argmin(vals[g]))]
    interval = (float(np.min(t_stars[g])), float(np.max(t_stars[g])))
    return (interval, points[worst].copy(), float(margin - vals[worst]))


def swept_boundary_samples(traj: Trajectory, shape: RobotShape, n: int) -> list[np.ndarray]:
    """Robot polygon outlines at n uniformly spaced times (for rendering)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ts = np.linspace(0.0, traj.total_duration, n) if n > 1 else np.array([0.0])
    outlines = []
    for t in ts:
        state = traj.eval(t, 0)
        yaw = state[2] if traj.dim >= 3 else 0.0
        outlines.append(shape.outline_world(state[:2], yaw))
    return outlines
