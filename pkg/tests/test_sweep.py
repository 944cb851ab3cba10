import numpy as np
import pytest

from se2plan.minco import construct
from se2plan.shape import RobotShape, build_body_esdf, rectangle
from se2plan.sweep import (composed_sdf, continuous_check, swept_boundary_samples,
                           swept_sdf)

from conftest import grid_from_cells


def regular_polygon(n=16, radius=0.3, top_vertex=True):
    offset = np.pi / 2 if top_vertex else 0.0
    ang = offset + 2 * np.pi * np.arange(n) / n
    verts = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    return RobotShape(verts, np.zeros(2))


def straight_se2_trajectory(start_xy, end_xy, yaw=0.0, T=2.0):
    start = np.zeros((3, 3))
    end = np.zeros((3, 3))
    start[0] = [start_xy[0], start_xy[1], yaw]
    end[0] = [end_xy[0], end_xy[1], yaw]
    _, traj = construct(start, end, np.zeros((0, 3)), [T])
    return traj


def random_se2_trajectory(rng, n_pieces=2, box=1.0):
    start = np.zeros((3, 3))
    end = np.zeros((3, 3))
    start[0] = rng.uniform(-box, box, 3)
    end[0] = rng.uniform(-box, box, 3)
    waypoints = rng.uniform(-box, box, (n_pieces - 1, 3))
    durations = rng.uniform(0.5, 1.5, n_pieces)
    _, traj = construct(start, end, waypoints, durations)
    return traj


def test_stationary_swept_equals_body_sdf(unit_square):
    traj = straight_se2_trajectory((0.3, 0.2), (0.3, 0.2), yaw=0.0)
    for x_obs in ((1.2, 0.2), (0.3, 0.2), (0.3, 1.5)):
        res = swept_sdf(traj, unit_square, None, x_obs, spacing_target=0.05)
        direct = composed_sdf(traj, unit_square, np.asarray(x_obs, float), 0.0)
        assert res.value == pytest.approx(direct, abs=1e-9)


def test_capsule_translation_analytic():
    shape = regular_polygon(16, radius=0.3)
    traj = straight_se2_trajectory((0.0, 0.0), (2.0, 0.0))
    for d in (0.5, 0.8, 1.1):
        res = swept_sdf(traj, shape, None, (1.0, d), spacing_target=0.02)
        assert res.value == pytest.approx(d - 0.3, abs=1e-6)


def test_swept_point_on_start_boundary(unit_square):
    traj = straight_se2_trajectory((0.0, 0.0), (2.0, 0.0))
    res = swept_sdf(traj, unit_square, None, (-0.5, 0.0), spacing_target=0.02)
    assert res.value == pytest.approx(0.0, abs=1e-6)


def test_min_property_upper_bound(rng, slim_rect):
    for _ in range(10):
        traj = random_se2_trajectory(rng)
        x_obs = rng.uniform(-1.5, 1.5, 2)
        res = swept_sdf(traj, slim_rect, None, x_obs, spacing_target=0.05)
        ts = rng.uniform(0, traj.total_duration, 64)
        for t in ts:
            assert res.value <= composed_sdf(traj, slim_rect, x_obs, t) + 1e-9


def test_refinement_monotone_in_sampling(rng, slim_rect):
    for _ in range(5):
        traj = random_se2_trajectory(rng)
        x_obs = rng.uniform(-1.5, 1.5, 2)
        coarse = swept_sdf(traj, slim_rect, None, x_obs, spacing_target=0.1)
        fine = swept_sdf(traj, slim_rect, None, x_obs, spacing_target=0.05)
        assert fine.value <= coarse.value + 1e-6


def test_time_reversal_symmetry(rng, slim_rect):
    start = np.zeros((3, 3))
    end = np.zeros((3, 3))
    start[0] = [0.0, 0.0, 0.0]
    end[0] = [1.0, 0.8, 1.2]
    waypoints = rng.uniform(-0.5, 1.0, (2, 3))
    durations = rng.uniform(0.5, 1.5, 3)
    _, fwd = construct(start, end, waypoints, durations)
    _, rev = construct(end, start, waypoints[::-1], durations[::-1])
    for _ in range(10):
        x_obs = rng.uniform(-1.0, 2.0, 2)
        a = swept_sdf(fwd, slim_rect, None, x_obs, spacing_target=0.05)
        b = swept_sdf(rev, slim_rect, None, x_obs, spacing_target=0.05)
        assert a.value == pytest.approx(b.value, abs=1e-6)


def test_swept_window_validation(unit_square):
    traj = straight_se2_trajectory((0, 0), (1, 0), T=1.0)
    with pytest.raises(ValueError):
        swept_sdf(traj, unit_square, None, (0, 0), window=(0.5, 2.0))


def test_continuous_check_empty_grid(unit_square):
    traj = straight_se2_trajectory((1.0, 1.0), (2.0, 1.0))
    grid = grid_from_cells(np.zeros((30, 30), dtype=bool))
    esdf = build_body_esdf(unit_square, 0.05, padding=0.2)
    report = continuous_check(traj, unit_square, esdf, grid)
    assert report.clear and report.hits == ()


def test_continuous_check_through_wall(slim_rect):
    cells = np.zeros((30, 30), dtype=bool)
    cells[:, 15] = True
    grid = grid_from_cells(cells)
    esdf = build_body_esdf(slim_rect, 0.05, padding=0.2)
    traj = straight_se2_trajectory((0.7, 1.5), (2.3, 1.5))
    report = continuous_check(traj, slim_rect, esdf, grid)
    assert not report.clear
    (interval, witness, depth), *_ = report.hits
    assert depth > 0
    assert witness[0] == pytest.approx(1.55, abs=1e-9)
    # dense time-grid oracle confirms a real penetration at the witness
    ts = np.linspace(0, traj.total_duration, 2000)
    dense = min(composed_sdf(traj, slim_rect, witness, t) for t in ts)
    assert dense < 0


def test_continuous_check_clear_with_clearance(slim_rect):
    cells = np.zeros((30, 30), dtype=bool)
    cells[27, :] = True  # wall well above the motion
    grid = grid_from_cells(cells)
    esdf = build_body_esdf(slim_rect, 0.05, padding=0.2)
    traj = straight_se2_trajectory((0.7, 1.0), (2.3, 1.0))
    margin = 0.1
    report = continuous_check(traj, slim_rect, esdf, grid, margin=margin)
    assert report.clear
    with pytest.raises(ValueError):
        continuous_check(traj, slim_rect, esdf, grid, margin=-0.1)


def test_swept_boundary_samples(unit_square):
    stationary = straight_se2_trajectory((0.5, 0.5), (0.5, 0.5))
    outlines = swept_boundary_samples(stationary, unit_square, 5)
    assert len(outlines) == 5
    for outline in outlines[1:]:
        assert np.allclose(outline, outlines[0], atol=1e-9)
    translated = swept_boundary_samples(
        straight_se2_trajectory((0.0, 0.0), (1.0, 0.0)), unit_square, 3)
    shift = translated[-1] - translated[0]
    assert np.allclose(shift, shift[0], atol=1e-9)  # rigid translation
    single = swept_boundary_samples(stationary, unit_square, 1)
    assert len(single) == 1
    with pytest.raises(ValueError):
        swept_boundary_samples(stationary, unit_square, 0)
