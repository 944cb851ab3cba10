"""Robot geometry: simple-polygon footprint, signed distance queries,
body-frame signed distance grid, and the per-orientation rasterized kernel
used for fast occupancy convolution checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridmap import OccupancyGrid


class GeometryError(ValueError):
    """Raised for invalid robot shapes."""


class OutOfWindowError(ValueError):
    """Raised when a body-frame query falls outside the ESDF window."""


_BOUNDARY_TOL = 1e-12


def _segments(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return vertices, np.roll(vertices, -1, axis=0)


def polygon_sdf(vertices: np.ndarray, q) -> np.ndarray:
    """Signed distance from points q (..., 2) to the polygon boundary.

    Negative strictly inside (nonzero winding number), positive outside,
    exactly-on-boundary points report +0.0.
    """
    f, _ = polygon_sdf_gradient(vertices, q)
    return f


def polygon_sdf_gradient(vertices: np.ndarray, q):
    """Signed distance and its steepest-ascent gradient.

    The gradient points from the closest boundary point toward the query when
    outside, and toward the boundary when inside.  Returns (f, g) with shapes
    (...,) and (..., 2).
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    pts = q.reshape(-1, 2)
    a, b = _segments(vertices)
    e = b - a  # (V, 2)
    e_len2 = np.maximum(np.sum(e * e, axis=1), 1e-300)
    rel = pts[:, None, :] - a[None, :, :]  # (P, V, 2)
    t = np.clip(np.einsum("pvk,vk->pv", rel, e) / e_len2, 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * e[None, :, :]
    diff = pts[:, None, :] - closest
    d2 = np.sum(diff * diff, axis=2)
    best = np.argmin(d2, axis=1)
    idx = np.arange(pts.shape[0])
    d = np.sqrt(d2[idx, best])
    cp = closest[idx, best]
    # winding number (crossing form); nonzero => inside
    x, y = pts[:, 0], pts[:, 1]
    ax, ay = a[None, :, 0], a[None, :, 1]
    bx, by = b[None, :, 0], b[None, :, 1]
    left = (bx - ax) * (y[:, None] - ay) - (x[:, None] - ax) * (by - ay)
    up = (ay <= y[:, None]) & (by > y[:, None]) & (left > 0)
    down = (ay > y[:, None]) & (by <= y[:, None]) & (left < 0)
    wn = np.sum(up.astype(int) - down.astype(int), axis=1)
    inside = (wn != 0) & (d > _BOUNDARY_TOL)
    sign = np.where(inside, -1.0, 1.0)
    f = sign * d
    f[d <= _BOUNDARY_TOL] = 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        g = sign[:, None] * (pts - cp) / np.maximum(d, 1e-300)[:, None]
    g[d <= _BOUNDARY_TOL] = 0.0
    if single:
        return float(f[0]), g[0]
    return f.reshape(q.shape[:-1]), g.reshape(q.shape)


def _edges_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


@dataclass(frozen=True)
class RobotShape:
    """Simple-polygon robot footprint in the body frame.

    reference is the rotation center; it must lie strictly inside the polygon.
    """

    vertices: np.ndarray  # (V, 2)
    reference: np.ndarray  # (2,)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
            raise GeometryError("polygon needs at least 3 (x, y) vertices")
        a, b = _segments(verts)
        n = verts.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                if _edges_intersect(a[i], b[i], a[j], b[j]):
                    raise GeometryError("polygon is self-intersecting")
        ref = np.asarray(self.reference, dtype=float)
        if polygon_sdf(verts, ref) >= 0:
            raise GeometryError("reference point must lie strictly inside the polygon")
        verts.flags.writeable = False
        ref.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "reference", ref)

    @property
    def circumradius(self) -> float:
        """Max distance from the reference point to any vertex."""
        return float(np.max(np.linalg.norm(self.vertices - self.reference, axis=1)))

    def sdf(self, q):
        """Signed distance (meters) from body-frame point(s) q to the boundary."""
        return polygon_sdf(self.vertices, q)

    def sdf_gradient(self, q):
        return polygon_sdf_gradient(self.vertices, q)

    def outline_world(self, position, yaw: float) -> np.ndarray:
        """Polygon vertices placed at a world pose (reference at `position`)."""
        rel = self.vertices - self.reference
        return np.asarray(position, dtype=float) + rel @ rotation(yaw).T


def rotation(yaw: float) -> np.ndarray:
    """Body-to-world rotation matrix."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


def parse_shape(text: str) -> RobotShape:
    """Parse a shape document of ``vertex: <x> <y>`` lines plus an optional
    ``reference: <x> <y>`` line (default: vertex centroid)."""
    verts = []
    ref = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("vertex:"):
            parts = line.split(":", 1)[1].split()
            if len(parts) != 2:
                raise GeometryError(f"bad vertex line: {line!r}")
            verts.append([float(parts[0]), float(parts[1])])
        elif line.startswith("reference:"):
            parts = line.split(":", 1)[1].split()
            if len(parts) != 2:
                raise GeometryError(f"bad reference line: {line!r}")
            ref = np.array([float(parts[0]), float(parts[1])])
        else:
            raise GeometryError(f"unknown shape line: {line!r}")
    verts = np.array(verts, dtype=float)
    if ref is None:
        ref = verts.mean(axis=0)
    return RobotShape(vertices=verts, reference=ref)


def rectangle(length: float, width: float, reference=None) -> RobotShape:
    """Axis-aligned rectangle centered on the origin (long axis = body x)."""
    hl, hw = length / 2, width / 2
    verts = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    if reference is None:
        reference = np.zeros(2)
    return RobotShape(vertices=verts, reference=np.asarray(reference, dtype=float))


def inscribed_radius(shape: RobotShape) -> float:
    """Largest disc radius around the reference point contained in the polygon."""
    d = polygon_sdf(shape.vertices, shape.reference)
    if d >= 0:
        raise GeometryError("reference point is not inside the polygon")
    return float(-d)


def body_sdf(shape: RobotShape, q):
    """Signed distance in the body frame; negative inside the robot."""
    return shape.sdf(q)


@dataclass(frozen=True)
class BodyEsdf:
    """Signed distance sampled on a body-frame grid covering the polygon plus
    padding.  values[iy, ix] is the SDF at the center of cell (ix, iy);
    window_origin is the world... body-frame coordinate of the corner of
    cell (0, 0)."""

    resolution: float
    window_origin: np.ndarray  # (2,)
    values: np.ndarray  # (H, W)

    def __post_init__(self):
        object.__setattr__(self, "window_origin", np.asarray(self.window_origin, dtype=float))
        vals = np.asarray(self.values, dtype=float)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def shape_hw(self) -> tuple[int, int]:
        return self.values.shape

    def _frac_index(self, q) -> np.ndarray:
        # continuous index into the cell-center lattice
        return (np.asarray(q, dtype=float) - self.window_origin) / self.resolution - 0.5

    def contains(self, q) -> np.ndarray:
        """True where bilinear interpolation at q is supported (inside the
        convex hull of cell centers)."""
        u = self._frac_index(q)
        h, w = self.values.shape
        return np.all((u >= 0) & (u <= [w - 1, h - 1]), axis=-1)

    def interp(self, q):
        """Bilinearly interpolated SDF value at body-frame point(s) q."""
        v, _ = self.interp_with_gradient(q)
        return v

    def interp_with_gradient(self, q):
        """Bilinear value and the in-cell gradient of the interpolant.

        The gradient is the exact derivative of the interpolated value, so it
        is consistent with finite differences of interp() at sub-cell steps.
        """
        q = np.asarray(q, dtype=float)
        single = q.ndim == 1
        u = self._frac_index(q).reshape(-1, 2)
        h, w = self.values.shape
        if np.any((u < -1e-9) | (u > [w - 1 + 1e-9, h - 1 + 1e-9])):
            raise OutOfWindowError("query outside the body ESDF window")
        ix = np.clip(np.floor(u[:, 0]).astype(int), 0, w - 2)
        iy = np.clip(np.floor(u[:, 1]).astype(int), 0, h - 2)
        fx = u[:, 0] - ix
        fy = u[:, 1] - iy
        v00 = self.values[iy, ix]
        v10 = self.values[iy, ix + 1]
        v01 = self.values[iy + 1, ix]
        v11 = self.values[iy + 1, ix + 1]
        val = v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy) + v01 * (1 - fx) * fy + v11 * fx * fy
        gx = ((v10 - v00) * (1 - fy) + (v11 - v01) * fy) / self.resolution
        gy = ((v01 - v00) * (1 - fx) + (v11 - v10) * fx) / self.resolution
        g = np.stack([gx, gy], axis=-1)
        if single:
            return float(val[0]), g[0]
        return val.reshape(q.shape[:-1]), g.reshape(q.shape)


def build_body_esdf(shape: RobotShape, resolution: float, padding: float) -> BodyEsdf:
    """Sample the polygon SDF on a grid over the AABB expanded by padding."""
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    if padding < resolution:
        raise ValueError("padding must be >= resolution")
    lo = shape.vertices.min(axis=0) - padding
    hi = shape.vertices.max(axis=0) + padding
    nx = int(np.ceil((hi[0] - lo[0]) / resolution))
    ny = int(np.ceil((hi[1] - lo[1]) / resolution))
    xs = lo[0] + (np.arange(nx) + 0.5) * resolution
    ys = lo[1] + (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    vals = polygon_sdf(shape.vertices, pts).reshape(ny, nx)
    return BodyEsdf(resolution=resolution, window_origin=lo, values=vals)


def sdf_gradient_world(esdf: BodyEsdf, x_obs, position, yaw: float):
    """Composed SDF value and world-frame gradient at an obstacle point.

    Transforms x_obs into the body frame at (position, yaw), interpolates the
    body grid, and rotates the body gradient back to the world frame, so the
    returned vector is the steepest-ascent direction of the composed world SDF
    as x_obs moves.
    """
    r = rotation(yaw)
    body = r.T @ (np.asarray(x_obs, dtype=float) - np.asarray(position, dtype=float))
    value, g_body = esdf.interp_with_gradient(body)
    return value, r @ g_body


@dataclass(frozen=True)
class RobotKernel:
    """Rasterized footprints at n_orientations evenly spaced yaws.

    offsets[k] is an (N_k, 2) int array of (dx, dy) cell offsets relative to
    the reference cell, covering yaw k * 2*pi / n_orientations.
    """

    n_orientations: int
    resolution: float
    offsets: tuple = field(repr=False)

    @property
    def angular_step(self) -> float:
        return 2 * np.pi / self.n_orientations

    def yaw_of(self, k: int) -> float:
        return k * self.angular_step

    def index_of(self, yaw: float) -> int:
        """Nearest orientation index for a yaw."""
        return int(np.round(yaw / self.angular_step)) % self.n_orientations


def build_kernel(shape: RobotShape, n_orientations: int, resolution: float) -> RobotKernel:
    """Rasterize the polygon at each orientation: a cell offset belongs to the
    footprint iff its center lies inside the rotated polygon (reference at the
    reference-cell center).  An empty rasterization keeps the reference cell
    so checks are never vacuously safe."""
    if n_orientations < 1:
        raise ValueError("n_orientations must be >= 1")
    rel = shape.vertices - shape.reference
    offsets = []
    for k in range(n_orientations):
        verts = rel @ rotation(k * 2 * np.pi / n_orientations).T
        lo = np.floor(verts.min(axis=0) / resolution).astype(int) - 1
        hi = np.ceil(verts.max(axis=0) / resolution).astype(int) + 1
        dx, dy = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1))
        cand = np.stack([dx.ravel(), dy.ravel()], axis=1)
        inside = polygon_sdf(verts, cand * resolution) < 0
        cells = cand[inside]
        if cells.shape[0] == 0:
            cells = np.zeros((1, 2), dtype=int)
        cells = np.ascontiguousarray(cells)
        cells.flags.writeable = False
        offsets.append(cells)
    return RobotKernel(n_orientations=n_orientations, resolution=resolution, offsets=tuple(offsets))


def kernel_collides(kernel: RobotKernel, grid: OccupancyGrid, p, k: int) -> bool:
    """Boolean convolution check: True iff any footprint cell (translated to
    the cell containing p) is occupied or out of bounds."""
    if not 0 <= k < kernel.n_orientations:
        raise ValueError(f"orientation index {k} out of range")
    ix, iy = grid.world_to_cell(p)
    cells = kernel.offsets[k] + [ix, iy]
    oob = (cells[:, 0] < 0) | (cells[:, 0] >= grid.width) | (cells[:, 1] < 0) | (cells[:, 1] >= grid.height)
    if np.any(oob):
        return True
    return bool(np.any(grid.cells[cells[:, 1], cells[:, 0]]))
