"""Piecewise-quintic minimum-jerk trajectory representation.

A trajectory is M quintic pieces with durations T_i and coefficient matrices
c_i (6 x m); the spline interpolating given waypoints with C4 junctions is
the unique minimizer of the integrated squared jerk among all interpolants,
so construction reduces to one banded linear solve.  Gradients of downstream
costs with respect to coefficients and durations are pulled back to
(waypoint, duration) space through the adjoint of that solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

DEGREE = 5  # quintic: N = 2s - 1 with jerk control effort (s = 3)
NCOEF = DEGREE + 1

# falling-factorial table: _DERIV_FACT[r][j] = j!/(j-r)! for t^j derivative r
_DERIV_FACT = np.zeros((NCOEF, NCOEF))
for _r in range(NCOEF):
    for _j in range(_r, NCOEF):
        _DERIV_FACT[_r, _j] = np.prod(np.arange(_j - _r + 1, _j + 1)) if _r else 1.0


def basis(t: float, order: int) -> np.ndarray:
    """Derivative of the natural basis [1, t, ..., t^5] of the given order."""
    out = np.zeros(NCOEF)
    if order > DEGREE:
        return out
    for j in range(order, NCOEF):
        out[j] = _DERIV_FACT[order, j] * t ** (j - order)
    return out


def basis_many(ts, order: int) -> np.ndarray:
    """Vectorized basis rows: (len(ts), 6) with basis(ts[i], order) per row."""
    ts = np.asarray(ts, dtype=float)
    out = np.zeros((ts.shape[0], NCOEF))
    if order > DEGREE:
        return out
    for j in range(order, NCOEF):
        out[:, j] = _DERIV_FACT[order, j] * ts ** (j - order)
    return out


@dataclass(frozen=True)
class Trajectory:
    """Piecewise polynomial p(t) with M pieces of local quintics.

    coeffs has shape (M, 6, m): coeffs[i, j, d] multiplies (t - start_i)^j in
    dimension d.  durations has shape (M,).
    """

    durations: np.ndarray  # (M,)
    coeffs: np.ndarray  # (M, 6, m)

    def __post_init__(self):
        dur = np.asarray(self.durations, dtype=float)
        co = np.asarray(self.coeffs, dtype=float)
        if np.any(dur <= 0):
            raise ValueError("piece durations must be positive")
        if co.ndim != 3 or co.shape[0] != dur.shape[0] or co.shape[1] != NCOEF:
            raise ValueError(f"coefficients must have shape (M, {NCOEF}, m)")
        dur.flags.writeable = False
        co.flags.writeable = False
        object.__setattr__(self, "durations", dur)
        object.__setattr__(self, "coeffs", co)

    @property
    def n_pieces(self) -> int:
        return self.durations.shape[0]

    @property
    def dim(self) -> int:
        return self.coeffs.shape[2]

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))

    @property
    def start_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)[:-1]])

    def piece_index(self, t: float) -> int:
        edges = np.cumsum(self.durations)
        i = int(np.searchsorted(edges, t, side="right"))
        return min(i, self.n_pieces - 1)

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        """Evaluate the trajectory (or a time derivative) at global time t."""
        total = self.total_duration
        if t < -1e-12 or t > total + 1e-12:
            raise ValueError(f"t={t} outside [0, {total}]")
        t = min(max(t, 0.0), total)
        i = self.piece_index(t)
        local = t - self.start_times[i]
        return basis(local, order) @ self.coeffs[i]

    def eval_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        """Vectorized evaluation at sorted or unsorted times, shape (len(ts), m)."""
        ts = np.asarray(ts, dtype=float)
        total = self.total_duration
        tc = np.clip(ts, 0.0, total)
        edges = np.cumsum(self.durations)
        idx = np.minimum(np.searchsorted(edges, tc, side="right"), self.n_pieces - 1)
        local = tc - self.start_times[idx]
        powers = np.zeros((len(tc), NCOEF))
        for j in range(order, NCOEF):
            powers[:, j] = _DERIV_FACT[order, j] * local ** (j - order)
        return np.einsum("nj,njd->nd", powers, self.coeffs[idx])

    def arc_length(self, samples_per_piece: int = 64) -> float:
        """Translational (x, y) path length by fixed-node quadrature."""
        nodes, weights = np.polynomial.legendre.leggauss(samples_per_piece)
        total = 0.0
        for i in range(self.n_pieces):
            t0 = self.start_times[i]
            ti = self.durations[i]
            ts = t0 + (nodes + 1) / 2 * ti
            v = self.eval_many(ts, order=1)[:, :2]
            total += float(np.sum(weights * np.linalg.norm(v, axis=1)) * ti / 2)
        return total

    def to_text(self) -> str:
        """Lossless text serialization (17 significant digits)."""
        lines = [f"pieces: {self.n_pieces}", f"dim: {self.dim}"]
        for i in range(self.n_pieces):
            lines.append(f"T: {self.durations[i]:.17g}")
            for j in range(NCOEF):
                row = " ".join(f"{c:.17g}" for c in self.coeffs[i, j])
                lines.append(f"c: {row}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "Trajectory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        m_pieces = int(lines[0].split(":")[1])
        dim = int(lines[1].split(":")[1])
        durations = []
        coeffs = []
        pos = 2
        for _ in range(m_pieces):
            durations.append(float(lines[pos].split(":")[1]))
            pos += 1
            rows = []
            for _ in range(NCOEF):
                rows.append([float(x) for x in lines[pos].split(":")[1].split()])
                pos += 1
            coeffs.append(rows)
        traj = Trajectory(np.array(durations), np.array(coeffs))
        if traj.dim != dim:
            raise ValueError("dimension mismatch in trajectory document")
        return traj


def _jerk_gram(t: float) -> np.ndarray:
    """Gram matrix Q of third-derivative basis products over [0, t]:
    integral of p'''(u)^2 du = c^T Q c per dimension."""
    q = np.zeros((NCOEF, NCOEF))
    for j in range(3, NCOEF):
        for k in range(3, NCOEF):
            cj = _DERIV_FACT[3, j]
            ck = _DERIV_FACT[3, k]
            q[j, k] = cj * ck * t ** (j + k - 5) / (j + k - 5)
    return q


def control_effort(traj: Trajectory) -> float:
    """Integrated squared jerk over the whole trajectory, all dimensions."""
    total = 0.0
    for i in range(traj.n_pieces):
        q = _jerk_gram(traj.durations[i])
        c = traj.coeffs[i]
        total += float(np.einsum("jd,jk,kd->", c, q, c))
    return total


def control_effort_gradients(traj: Trajectory):
    """(value, dJ/dc (M,6,m), dJ/dT (M,)) for the squared-jerk integral."""
    m = traj.n_pieces
    grad_c = np.zeros_like(traj.coeffs)
    grad_t = np.zeros(m)
    value = 0.0
    for i in range(m):
        ti = traj.durations[i]
        q = _jerk_gram(ti)
        c = traj.coeffs[i]
        value += float(np.einsum("jd,jk,kd->", c, q, c))
        grad_c[i] = 2 * q @ c
        jerk_end = basis(ti, 3) @ c
        grad_t[i] = float(np.dot(jerk_end, jerk_end))
    return value, grad_c, grad_t


class MincoSpline:
    """Minimum-jerk spline parameterized by interior waypoints and durations.

    Boundary position/velocity/acceleration are fixed at construction;
    set_params() solves the banded interpolation system for the coefficients,
    and gradients() back-propagates coefficient/duration cost gradients to the
    (waypoint, duration) parameters through the adjoint of that solve.
    """

    def __init__(self, start_state: np.ndarray, end_state: np.ndarray, n_pieces: int):
        start_state = np.asarray(start_state, dtype=float)
        end_state = np.asarray(end_state, dtype=float)
        if start_state.shape != end_state.shape or start_state.ndim != 2 or start_state.shape[0] != 3:
            raise ValueError("boundary states must both be (3, m): position, velocity, acceleration")
        if n_pieces < 1:
            raise ValueError("need at least one piece")
        self.start_state = start_state
        self.end_state = end_state
        self.n_pieces = n_pieces
        self.dim = start_state.shape[1]
        self._traj = None
        self._lu = None
        self._waypoints = None

    @property
    def trajectory(self) -> Trajectory:
        if self._traj is None:
            raise RuntimeError("set_params() has not been called")
        return self._traj

    def set_params(self, waypoints: np.ndarray, durations: np.ndarray) -> Trajectory:
        m = self.n_pieces
        waypoints = np.asarray(waypoints, dtype=float).reshape(m - 1, self.dim) if m > 1 else np.zeros((0, self.dim))
        durations = np.asarray(durations, dtype=float)
        if durations.shape != (m,):
            raise ValueError(f"expected {m} durations")
        if np.any(durations <= 0):
            raise ValueError("durations must be positive")
        n = NCOEF * m
        mat = np.zeros((n, n))
        rhs = np.zeros((n, self.dim))
        # start boundary: p, v, a of piece 0 at local 0
        for r in range(3):
            mat[r, 0:NCOEF] = basis(0.0, r)
            rhs[r] = self.start_state[r]
        row = 3
        for j in range(1, m):
            tj = durations[j - 1]
            colL = NCOEF * (j - 1)
            colR = NCOEF * j
            # left piece hits the waypoint
            mat[row, colL : colL + NCOEF] = basis(tj, 0)
            rhs[row] = waypoints[j - 1]
            row += 1
            # right piece starts at the waypoint
            mat[row, colR : colR + NCOEF] = basis(0.0, 0)
            rhs[row] = waypoints[j - 1]
            row += 1
            # C1..C4 continuity
            for r in range(1, 5):
                mat[row, colL : colL + NCOEF] = basis(tj, r)
                mat[row, colR : colR + NCOEF] = -basis(0.0, r)
                row += 1
        tm = durations[m - 1]
        colL = NCOEF * (m - 1)
        for r in range(3):
            mat[row, colL : colL + NCOEF] = basis(tm, r)
            rhs[row] = self.end_state[r]
            row += 1
        self._lu = lu_factor(mat)
        coef = lu_solve(self._lu, rhs)
        self._waypoints = waypoints
        self._traj = Trajectory(durations.copy(), coef.reshape(m, NCOEF, self.dim))
        return self._traj

    def gradients(self, grad_c: np.ndarray, grad_t: np.ndarray):
        """Pull back (dJ/dc, dJ/dT_partial) to (dJ/dwaypoints, dJ/dT).

        grad_c has shape (M, 6, m); grad_t is the direct duration gradient of
        the cost (M,).  Returns (grad_waypoints (M-1, m), grad_durations (M,)).
        """
        if self._traj is None:
            raise RuntimeError("set_params() has not been called")
        m = self.n_pieces
        grad_c = np.asarray(grad_c, dtype=float).reshape(NCOEF * m, self.dim)
        lam = lu_solve(self._lu, grad_c, trans=1)  # solve mat^T lam = grad_c
        grad_q = np.zeros((max(m - 1, 0), self.dim))
        grad_dur = np.asarray(grad_t, dtype=float).copy()
        coef = self._traj.coeffs.reshape(NCOEF * m, self.dim)
        durations = self._traj.durations
        for j in range(1, m):
            base = 3 + 6 * (j - 1)
            # rhs rows carrying waypoint j-1: left-hit and right-start rows
            grad_q[j - 1] = lam[base] + lam[base + 1]
            # rows of junction j depend on T_{j-1} through basis(T_{j-1}, r);
            # d basis(t, r)/dt = basis(t, r + 1)
            tj = durations[j - 1]
            colL = NCOEF * (j - 1)
            cL = coef[colL : colL + NCOEF]
            total = np.sum((basis(tj, 1) @ cL) * lam[base])
            for r in range(1, 5):
                total += np.sum((basis(tj, r + 1) @ cL) * lam[base + 1 + r])
            grad_dur[j - 1] = grad_t[j - 1] - float(total)
        # final boundary rows depend on T_M
        tm = durations[m - 1]
        colL = NCOEF * (m - 1)
        cL = coef[colL : colL + NCOEF]
        base = 3 + 6 * (m - 1)
        total = 0.0
        for r in range(3):
            total += np.sum((basis(tm, r + 1) @ cL) * lam[base + r])
        grad_dur[m - 1] = grad_t[m - 1] - float(total)
        return grad_q, grad_dur


def construct(start_state, end_state, waypoints, durations) -> tuple[MincoSpline, Trajectory]:
    """Convenience wrapper: build the spline and solve it in one call."""
    durations = np.asarray(durations, dtype=float)
    spline = MincoSpline(np.asarray(start_state, dtype=float), np.asarray(end_state, dtype=float), len(durations))
    traj = spline.set_params(waypoints, durations)
    return spline, traj
