"""Back-end trajectory optimization.

SE(2) sub-problems minimize smoothness + total time + swept-volume safety +
dynamic-limit penalties over MINCO waypoint/duration parameters; R^2
sub-problems replace the safety term with position/heading residuals against
the motion-sequence anchors.  All penalty terms go through the same C^2
smoothed ramp so gradients stay continuous.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import minco
from .gridmap import OccupancyGrid, extract_obstacles
from .minco import MincoSpline, Trajectory, basis_many
from .shape import BodyEsdf, RobotShape
from .sweep import continuous_check

_QUAD_NODES, _QUAD_WEIGHTS = np.polynomial.legendre.leggauss(16)


class DegenerateInputError(ValueError):
    """Raised when a sub-problem has no spatial extent to optimize."""


def smoothing(x: float, mu: float) -> float:
    """C^2 smoothed ramp: 0 for x <= 0, cubic blend on (0, mu), x - mu/2 after."""
    v, _ = smoothing_grad(x, mu)
    return v


def smoothing_grad(x, mu: float):
    """Value and derivative of the smoothed ramp (vectorized)."""
    if mu <= 0:
        raise ValueError("mu must be > 0")
    x = np.asarray(x, dtype=float)
    v = np.where(x <= 0, 0.0,
                 np.where(x < mu, (mu - x / 2) * (x / mu) ** 3, x - mu / 2))
    d = np.where(x <= 0, 0.0,
                 np.where(x < mu, 3 * x**2 / mu**2 - 2 * x**3 / mu**3, 1.0))
    if v.ndim == 0:
        return float(v), float(d)
    return v, d


@dataclass(frozen=True)
class Weights:
    """Cost weights, smoothing width, safety margin, and dynamic limits."""

    lam_m: float = 1.0
    lam_t: float = 20.0
    lam_s: float = 1e4
    lam_d: float = 1e3
    lam_p: float = 1e3
    lam_r: float = 1e3
    mu: float = 0.01
    d_safe: float = 0.02
    v_max: float = 1.0
    w_max: float = 1.5

    def __post_init__(self):
        for name in ("lam_m", "lam_t", "lam_s", "lam_d", "lam_p", "lam_r", "d_safe"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.mu <= 0:
            raise ValueError("mu must be > 0")


@dataclass
class OptOutcome:
    trajectory: Trajectory
    converged: bool
    terms: dict
    iterations: int
    collision_free: bool | None = None


def lbfgs(fun, x0: np.ndarray, max_iter: int = 200, g_tol: float = 1e-5,
          f_rel_tol: float = 1e-8, memory: int = 8):
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    fun(x) -> (f, grad).  Accepted steps never increase f.  Returns
    (x, f, iterations, converged).
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    it = 0
    stall = 0  # consecutive iterations with negligible relative decrease
    restarted = False
    converged = bool(np.max(np.abs(g)) < g_tol)
    while it < max_iter and not converged:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = np.dot(s_hist[-1], y_hist[-1]) / max(np.dot(y_hist[-1], y_hist[-1]), 1e-300)
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        d = -q
        slope = np.dot(g, d)
        if slope >= 0:
            d = -g
            slope = -np.dot(g, g)
        alpha = 1.0
        if not s_hist:  # first step: conservative scale for steep gradients
            alpha = min(1.0, 1.0 / max(float(np.linalg.norm(g)), 1.0))
        accepted = False
        for _ in range(40):
            x_new = x + alpha * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        it += 1
        if not accepted:
            if s_hist and not restarted:
                # stale curvature can poison the search direction; retry once
                # from a fresh steepest-descent state
                s_hist, y_hist, rho_hist = [], [], []
                restarted = True
                continue
            break
        s_vec = x_new - x
        y_vec = g_new - g
        sy = np.dot(s_vec, y_vec)
        if sy > 1e-12:
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        rel_drop = abs(f - f_new) / max(abs(f), 1.0)
        stall = stall + 1 if rel_drop < f_rel_tol else 0
        x, f, g = x_new, f_new, g_new
        if np.max(np.abs(g)) < g_tol or stall >= 3:
            converged = True
    return x, f, it, converged


def _dynamics_penalty(traj: Trajectory, weights: Weights):
    """Quadrature of the v/omega limit penalties with coefficient/duration
    partials (coefficients held fixed for the duration partial)."""
    mu = weights.mu
    m = traj.n_pieces
    grad_c = np.zeros_like(traj.coeffs)
    grad_t = np.zeros(m)
    value = 0.0
    for i in range(m):
        ti = traj.durations[i]
        taus = (_QUAD_NODES + 1) / 2 * ti
        c = traj.coeffs[i]
        b1 = basis_many(taus, 1)  # (Q, 6)
        b2 = basis_many(taus, 2)
        vel = b1 @ c  # (Q, m)
        acc = b2 @ c
        v2 = vel[:, 0] ** 2 + vel[:, 1] ** 2
        pv, dv = smoothing_grad(v2 - weights.v_max**2, mu)
        g_vals = pv
        dgdtau = dv * 2 * (vel[:, 0] * acc[:, 0] + vel[:, 1] * acc[:, 1])
        dg_dvel = np.zeros_like(vel)
        dg_dvel[:, 0] = dv * 2 * vel[:, 0]
        dg_dvel[:, 1] = dv * 2 * vel[:, 1]
        if traj.dim >= 3:
            w = vel[:, 2]
            pw, dw = smoothing_grad(w**2 - weights.w_max**2, mu)
            g_vals = g_vals + pw
            dgdtau = dgdtau + dw * 2 * w * acc[:, 2]
            dg_dvel[:, 2] = dw * 2 * w
        wq = _QUAD_WEIGHTS
        value += float(ti / 2 * np.sum(wq * g_vals))
        grad_c[i] += (ti / 2) * np.einsum("q,qj,qd->jd", wq, b1, dg_dvel)
        grad_t[i] += float(0.5 * np.sum(wq * g_vals)
                           + ti / 2 * np.sum(wq * dgdtau * (_QUAD_NODES + 1) / 2))
    return value, grad_c, grad_t


_SAFETY_SAMPLES = 16


def _safety_penalty(traj: Trajectory, weights: Weights, shape: RobotShape,
                    obstacles: np.ndarray, n_samples: int = _SAFETY_SAMPLES):
    """Time-integrated clearance penalty over fixed per-piece time fractions.

    J = sum_i (T_i / K) sum_j L_mu(d_safe - sdf(pose(s_j T_i), obstacle)) over
    all obstacles, with midpoint samples s_j.  Fixed relative sample locations
    keep the functional smooth in both waypoints and durations; formulations
    built on the minimum over time change their set of active grazing windows
    discontinuously, which the optimizer exploits by parking the trajectory
    exactly on a detection boundary where every step looks uphill."""
    m = traj.n_pieces
    grad_c = np.zeros_like(traj.coeffs)
    grad_t = np.zeros(m)
    if obstacles.shape[0] == 0:
        return 0.0, grad_c, grad_t
    fr = (np.arange(n_samples) + 0.5) / n_samples
    value = 0.0
    for i in range(m):
        ti = traj.durations[i]
        taus = fr * ti
        c = traj.coeffs[i]
        b0 = basis_many(taus, 0)  # (K, 6)
        b1 = basis_many(taus, 1)
        states = b0 @ c  # (K, 3)
        vel = b1 @ c
        pos, yaw = states[:, :2], states[:, 2]
        cs, sn = np.cos(yaw), np.sin(yaw)
        d = obstacles[None, :, :] - pos[:, None, :]  # (K, P, 2)
        body = np.stack([cs[:, None] * d[:, :, 0] + sn[:, None] * d[:, :, 1],
                         -sn[:, None] * d[:, :, 0] + cs[:, None] * d[:, :, 1]], axis=-1)
        val, g_body = shape.sdf_gradient(body)  # (K, P), (K, P, 2)
        pen, dpen = smoothing_grad(weights.d_safe - val, weights.mu)
        value += float(ti / n_samples * np.sum(pen))
        scale = -dpen  # (K, P): d pen / d sdf value
        if not np.any(dpen > 0):
            continue
        gx, gy = g_body[:, :, 0], g_body[:, :, 1]
        df_dpos = np.stack([-(cs[:, None] * gx - sn[:, None] * gy),
                            -(sn[:, None] * gx + cs[:, None] * gy)], axis=-1)
        # d body / d yaw = R(yaw)^T S (obstacle - pos), S = 90 deg rotation
        ux, uy = d[:, :, 1], -d[:, :, 0]
        df_dyaw = gx * (cs[:, None] * ux + sn[:, None] * uy) \
            + gy * (-sn[:, None] * ux + cs[:, None] * uy)
        df_dpose = np.concatenate([df_dpos, df_dyaw[:, :, None]], axis=-1)  # (K, P, 3)
        weighted = scale[:, :, None] * df_dpose
        grad_c[i] += ti / n_samples * np.einsum("kj,kpd->jd", b0, weighted)
        df_dt = np.einsum("kpd,kd->kp", df_dpose, vel)
        grad_t[i] += float(np.sum(pen) / n_samples
                           + ti / n_samples * np.sum(scale * df_dt * fr[:, None]))
    return value, grad_c, grad_t


def se2_cost(traj: Trajectory, weights: Weights, shape: RobotShape,
             esdf: BodyEsdf | None, obstacles: np.ndarray,
             n_safety_samples: int = _SAFETY_SAMPLES):
    """Weighted SE(2) cost and its partials w.r.t. coefficients and durations.

    Returns (cost, terms, grad_c (M,6,m), grad_T (M,)).
    """
    jm, gc_m, gt_m = minco.control_effort_gradients(traj)
    jt = traj.total_duration
    js, gc_s, gt_s = _safety_penalty(traj, weights, shape,
                                     np.asarray(obstacles, dtype=float).reshape(-1, 2),
                                     n_safety_samples)
    jd, gc_d, gt_d = _dynamics_penalty(traj, weights)
    cost = weights.lam_m * jm + weights.lam_t * jt + weights.lam_s * js + weights.lam_d * jd
    grad_c = weights.lam_m * gc_m + weights.lam_s * gc_s + weights.lam_d * gc_d
    grad_t = weights.lam_m * gt_m + weights.lam_t + weights.lam_s * gt_s + weights.lam_d * gt_d
    terms = {"J_m": jm, "J_t": jt, "J_s": js, "J_d": jd}
    return cost, terms, grad_c, grad_t


def r2_cost(traj: Trajectory, weights: Weights, anchor_positions: np.ndarray,
            anchor_yaws: np.ndarray, anchor_fractions: np.ndarray):
    """Weighted R^2 cost: smoothness, time, and position/heading residuals
    against anchors placed at fixed arc-length fractions of the timeline.

    Returns (cost, terms, grad_c, grad_T).
    """
    jm, gc_m, gt_m = minco.control_effort_gradients(traj)
    jt = traj.total_duration
    mu = weights.mu
    # the position residual is a squared distance, so the ramp width must be
    # much tighter than mu: a dead band of mu on dist^2 would let the
    # trajectory drift sqrt(mu) (centimeters) off anchors routed along
    # tight-clearance corridors
    mu_p = weights.mu / 10
    anchor_times = anchor_fractions * traj.total_duration
    m = traj.n_pieces
    gp_total = 0.0
    gr_total = 0.0
    grad_c = np.zeros_like(traj.coeffs)
    grad_t = np.zeros(m)
    for i in range(m):
        ti = traj.durations[i]
        t0 = traj.start_times[i]
        taus = (_QUAD_NODES + 1) / 2 * ti
        c = traj.coeffs[i]
        b0 = basis_many(taus, 0)
        b1 = basis_many(taus, 1)
        states = b0 @ c
        vel = b1 @ c
        idx = np.argmin(np.abs((t0 + taus)[:, None] - anchor_times[None, :]), axis=1)
        dp = states[:, :2] - anchor_positions[idx]
        dist2 = np.sum(dp * dp, axis=1)
        pv, dv = smoothing_grad(dist2, mu_p)
        dyaw = states[:, 2] - anchor_yaws[idx]
        rot_res = 4 * (1 - np.cos(dyaw))
        pr, dr = smoothing_grad(rot_res, mu)
        wq = _QUAD_WEIGHTS
        gp_total += float(ti / 2 * np.sum(wq * pv))
        gr_total += float(ti / 2 * np.sum(wq * pr))
        dg_dstate = np.zeros_like(states)
        dg_dstate[:, :2] = weights.lam_p * (dv * 2)[:, None] * dp
        dg_dstate[:, 2] = weights.lam_r * dr * 4 * np.sin(dyaw)
        grad_c[i] += (ti / 2) * np.einsum("q,qj,qd->jd", wq, b0, dg_dstate)
        g_vals = weights.lam_p * pv + weights.lam_r * pr
        dgdtau = np.sum(dg_dstate * vel, axis=1)
        grad_t[i] += float(0.5 * np.sum(wq * g_vals)
                           + ti / 2 * np.sum(wq * dgdtau * (_QUAD_NODES + 1) / 2))
    cost = weights.lam_m * jm + weights.lam_t * jt + weights.lam_p * gp_total + weights.lam_r * gr_total
    grad_c_total = weights.lam_m * gc_m + grad_c
    grad_t_total = weights.lam_m * gt_m + weights.lam_t + grad_t
    terms = {"J_m": jm, "J_t": jt, "G_p": gp_total, "G_R": gr_total}
    return cost, terms, grad_c_total, grad_t_total


_T_FLOOR = 1e-3


def _softplus(tau):
    return np.logaddexp(0.0, tau) + _T_FLOOR


def _softplus_inv(t):
    t = np.maximum(t - _T_FLOOR, 1e-6)
    return np.where(t > 30, t, np.log(np.expm1(t)))


def _decimate_indices(n: int, max_points: int) -> np.ndarray:
    if n <= max_points:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, max_points)).astype(int))


def _prune_loops(positions: np.ndarray) -> np.ndarray:
    """Kept indices after removing out-and-back excursions: whenever the
    polyline wanders far and returns next to an earlier point, skip the
    excursion.  Segment-repair pushes can leave such loops in the state
    sequence, and seeding a spline with them strands the optimizer in a
    self-intersecting local minimum."""
    n = len(positions)
    gaps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    if n < 4 or not np.any(gaps > 0):
        return np.arange(n)
    tol = 1.5 * float(np.median(gaps[gaps > 0]))
    arc = np.concatenate([[0.0], np.cumsum(gaps)])
    keep = []
    i = 0
    while i < n:
        keep.append(i)
        nxt = i + 1
        for j in range(n - 1, i + 1, -1):
            if (np.linalg.norm(positions[j] - positions[i]) < tol
                    and arc[j] - arc[i] > 4 * tol):
                nxt = j
                break
        i = nxt
    return np.array(keep)


def _arc_fractions(positions: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] > 1e-12:
        return arc / arc[-1]
    return np.linspace(0.0, 1.0, len(positions))


def _junction_yaw_ramp(positions: np.ndarray, yaws_raw: np.ndarray) -> np.ndarray:
    dy = (yaws_raw[-1] - yaws_raw[0] + np.pi) % (2 * np.pi) - np.pi
    return yaws_raw[0] + _arc_fractions(positions) * dy


def _sub_geometry(sub, kernel_step: float, v_max: float, max_waypoints: int):
    """Initial (boundary states, waypoints, durations, yaw series) for a
    sub-problem: positions from decimated states, yaw unwrapped from the
    kernel orientation indices, durations from arc length at half v_max."""
    positions = np.array([s.position for s in sub.states])
    yaws_raw = np.array([s.orientation * kernel_step for s in sub.states])
    if sub.kind == "R2":
        # translation-dominant slice: interior orientation picks are per-point
        # and can flip between symmetric aliases, so only the junction yaws
        # are meaningful; take the shortest rotation between them
        yaws = _junction_yaw_ramp(positions, yaws_raw)
    else:
        # High-risk orientations are placeholders (no collision-free kernel
        # yaw exists there); seed them by interpolating between the
        # surrounding trusted yaws instead
        trusted = np.array([s.risk != "HighRisk" for s in sub.states])
        if trusted.any() and not trusted.all():
            idx_all = np.arange(len(yaws_raw))
            yaws = np.interp(idx_all, idx_all[trusted], np.unwrap(yaws_raw[trusted]))
        else:
            yaws = np.unwrap(yaws_raw)
    kept = _prune_loops(positions)
    positions, yaws = positions[kept], yaws[kept]
    idx = _decimate_indices(len(positions), max_waypoints)
    pts = positions[idx]
    yw = yaws[idx]
    # drop coincident nodes
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-9 or i == len(pts) - 1:
            keep.append(i)
    pts, yw = pts[keep], yw[keep]
    if len(pts) < 2 or np.linalg.norm(pts[-1] - pts[0]) < 1e-9 and len(pts) == 2:
        raise DegenerateInputError("sub-problem has no spatial extent")
    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    durations = np.maximum(seg_len / (v_max / 2), 0.1)
    q = np.column_stack([pts, yw])
    start = np.zeros((3, 3))
    end = np.zeros((3, 3))
    start[0] = q[0]
    end[0] = q[-1]
    return start, end, q[1:-1], durations


def _run_solver(spline: MincoSpline, waypoints0, durations0, stages, budget: int,
                accept=None):
    """Solve min cost over (waypoints, durations) through one or more cost
    stages, warm-starting each stage from the previous solution.  When an
    `accept` predicate is given, later stages (typically with escalated
    penalty weights) run only while it rejects the current trajectory.
    Reported terms always come from the first stage's cost."""
    m = spline.n_pieces
    dim = spline.dim
    nq = (m - 1) * dim

    def unpack(x):
        q = x[:nq].reshape(m - 1, dim)
        t = _softplus(x[nq:])
        return q, t

    def make_objective(cost_fn):
        def objective(x):
            q, t = unpack(x)
            traj = spline.set_params(q, t)
            cost, _, grad_c, grad_t = cost_fn(traj)
            gq, gt = spline.gradients(grad_c, grad_t)
            sig = expit(x[nq:])  # d softplus / d tau
            return cost, np.concatenate([gq.ravel(), gt * sig])
        return objective

    x = np.concatenate([np.asarray(waypoints0, dtype=float).ravel(),
                        _softplus_inv(np.asarray(durations0, dtype=float))])
    iters = 0
    converged = False
    traj = None
    for cost_fn in stages:
        x, _, it, converged = lbfgs(make_objective(cost_fn), x, max_iter=budget)
        iters += it
        q, t = unpack(x)
        traj = spline.set_params(q, t)
        if accept is not None and accept(traj):
            break
    _, terms, _, _ = stages[0](traj)
    return traj, terms, iters, converged


def se2_optimize(sub, weights: Weights, shape: RobotShape, esdf: BodyEsdf,
                 kernel, grid: OccupancyGrid, budget: int = 150,
                 max_waypoints: int = 9, obstacle_cap: int = 512) -> OptOutcome:
    """Optimize one high-risk sub-problem in full SE(2) with swept-volume
    safety; the outcome's collision_free flag is set by an independent
    continuous collision check at zero margin."""
    kernel_step = kernel.angular_step if kernel is not None else 2 * np.pi / 18
    start, end, wps, durs = _sub_geometry(sub, kernel_step, weights.v_max, max_waypoints)
    positions = np.array([s.position for s in sub.states])
    pad = shape.circumradius + weights.d_safe + 2 * grid.resolution
    lo = positions.min(axis=0) - pad
    hi = positions.max(axis=0) + pad
    center = (lo + hi) / 2
    obstacles = extract_obstacles(grid, center, float(np.max(hi - center)))
    obstacles = farthest_point_subsample(obstacles, obstacle_cap)
    spline = MincoSpline(start, end, len(durs))

    def make_stage(w):
        def cost_fn(traj):
            # quadrature guidance only; the continuous check below stays strict
            return se2_cost(traj, w, shape, esdf, obstacles)
        return cost_fn

    # escalate the safety weight while the strict check keeps failing; the
    # millimetric residual penetrations a balanced optimum leaves behind
    # vanish once safety dominates the smoothness trade-off
    stages = [make_stage(weights)]
    for boost in (10.0, 100.0):
        stages.append(make_stage(replace(weights, lam_s=weights.lam_s * boost)))

    def accept(traj):
        return continuous_check(traj, shape, esdf, grid, margin=0.0).clear

    traj, terms, iters, converged = _run_solver(spline, wps, durs, stages, budget,
                                                accept=accept)
    report = continuous_check(traj, shape, esdf, grid, margin=0.0)
    return OptOutcome(traj, converged, terms, iters, collision_free=report.clear)


def r2_optimize(sub, weights: Weights, kernel=None, budget: int = 100,
                max_waypoints: int = 9) -> OptOutcome:
    """Optimize a low-risk sub-problem with residual tracking only; final
    safety is certified later by the pipeline's whole-trajectory check."""
    kernel_step = kernel.angular_step if kernel is not None else 2 * np.pi / 18
    start, end, wps, durs = _sub_geometry(sub, kernel_step, weights.v_max, max_waypoints)
    positions = np.array([s.position for s in sub.states])
    yaws_raw = np.array([s.orientation * kernel_step for s in sub.states])
    yaws = _junction_yaw_ramp(positions, yaws_raw)
    fractions = _arc_fractions(positions)
    spline = MincoSpline(start, end, len(durs))

    def cost_fn(traj):
        return r2_cost(traj, weights, positions, yaws, fractions)

    traj, terms, iters, converged = _run_solver(spline, wps, durs, [cost_fn], budget)
    return OptOutcome(traj, converged, terms, iters, collision_free=None)


def farthest_point_subsample(points: np.ndarray, cap: int) -> np.ndarray:
    """Deterministic farthest-point subsampling to at most cap points."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = points.shape[0]
    if n <= cap:
        return points
    chosen = [0]
    d = np.linalg.norm(points - points[0], axis=1)
    for _ in range(cap - 1):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(points - points[nxt], axis=1))
    return points[np.sort(chosen)]
