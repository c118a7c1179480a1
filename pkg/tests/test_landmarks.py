import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lunarsim.attitude import AttitudeState
from lunarsim.config import NoiseSigmas, WorldConfig
from lunarsim.fusion import homing_update, initial_state
from lunarsim.landmarks import (DegenerateInputError, NoFitError, estimate_plant_center, fit_circle,
                                register_plant)
from lunarsim.world import ServiceExhaustedError, build_world, raycast_lidar, terrain_of


def arc_points(center, radius, arc_deg, n, start=0.0):
    a = start + np.linspace(0.0, math.radians(arc_deg), n)
    return np.column_stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)])


def place(world, name, xy, yaw):
    rv = world.rover(name)
    rv.x, rv.y, rv.yaw = float(xy[0]), float(xy[1]), yaw
    rv.spawn_yaw = yaw
    rv.z, rv.roll, rv.pitch = terrain_of(world).attitude(rv.x, rv.y, yaw)
    return rv


def world_facing_plant(seed=3, distance=5.0, bearing=0.4, lidar_sigma=0.0):
    cfg = WorldConfig(seed=seed, n_obstacles=0, noise_sigmas=NoiseSigmas(lidar=lidar_sigma))
    world = build_world(cfg)
    xy = world.plant_center + distance * np.array([math.cos(bearing), math.sin(bearing)])
    rv = place(world, "scout", xy, bearing + math.pi)
    return world, rv


def test_exact_circle():
    c, r, rms = fit_circle(arc_points((2, 3), 1.8, 360, 20, 0.1)[:-1])
    assert np.allclose(c, [2, 3], atol=1e-9)
    assert abs(r - 1.8) < 1e-9
    assert rms < 1e-9


def test_noisy_short_arc_monte_carlo():
    rng = np.random.default_rng(5)
    good = 0
    for _ in range(1000):
        pts = arc_points((2, 3), 1.8, 120, 20, rng.uniform(0, 2 * math.pi)) + rng.normal(0, 0.01, (20, 2))
        good += np.hypot(*(fit_circle(pts).center - [2, 3])) < 0.05
    assert good >= 950


def test_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        fit_circle([[0, 0], [1, 1], [2, 2]])
    with pytest.raises(DegenerateInputError):
        fit_circle([[0, 0], [1, 1]])


def test_geometric_refinement_agrees_on_exact_data():
    pts = arc_points((-4, 1), 2.5, 90, 30)
    assert np.allclose(fit_circle(pts, geometric=True).center, [-4, 1], atol=1e-8)


coords = st.floats(-100, 100, allow_nan=False)


@given(coords, coords, st.floats(0.5, 10), st.floats(60, 360), st.floats(-50, 50), st.floats(-50, 50))
def test_translation_equivariance(cx, cy, r, arc, tx, ty):
    pts = arc_points((cx, cy), r, arc, 25) + np.random.default_rng(0).normal(0, 0.01, (25, 2))
    a = fit_circle(pts)
    b = fit_circle(pts + [tx, ty])
    assert np.allclose(b.center, a.center + [tx, ty], atol=1e-8)
    assert abs(a.radius - b.radius) < 1e-8


@given(st.floats(-math.pi, math.pi), st.floats(0.5, 10), st.floats(60, 360))
def test_rotation_equivariance(angle, r, arc):
    pts = arc_points((3, -2), r, arc, 25) + np.random.default_rng(1).normal(0, 0.01, (25, 2))
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    a = fit_circle(pts)
    b = fit_circle(pts @ R.T)
    assert np.allclose(b.center, R @ a.center, atol=1e-8)


@given(st.floats(0.001, 0.2))
def test_residual_zero_iff_on_circle(bump):
    pts = arc_points((0, 0), 2.0, 300, 30)
    assert fit_circle(pts).rms_residual < 1e-12
    pts[5] *= 1.0 + bump
    assert fit_circle(pts).rms_residual > 1e-6


def test_register_plant_noiseless_and_once_only():
    world, rv = world_facing_plant()
    scan = raycast_lidar(world, rv)
    reg = register_plant(scan, world.truth_service, "scout", AttitudeState(rv.roll, rv.pitch, 0.0),
                         world.plant_radius)
    assert np.allclose(reg.pp_center_global, world.plant_center, atol=1e-6)
    assert abs(math.remainder(reg.yaw_offset - rv.yaw, 2 * math.pi)) < 1e-12
    with pytest.raises(ServiceExhaustedError):
        register_plant(scan, world.truth_service, "scout", None, world.plant_radius)


def test_register_plant_without_plant_in_view():
    world, rv = world_facing_plant()
    rv.yaw += math.pi  # plant behind, outside the 270 degree fan
    scan = raycast_lidar(world, rv)
    with pytest.raises(NoFitError):
        register_plant(scan, world.truth_service, "scout", None, world.plant_radius)


def test_estimate_is_rigidly_offset_by_position_error():
    world, rv = world_facing_plant(seed=8, bearing=2.0)
    scan = raycast_lidar(world, rv)
    att = AttitudeState(rv.roll, rv.pitch, rv.yaw)
    exact = estimate_plant_center(scan, att, (rv.x, rv.y), world.plant_radius)
    assert np.allclose(exact, world.plant_center, atol=1e-6)
    shifted = estimate_plant_center(scan, att, (rv.x + 1, rv.y - 2), world.plant_radius)
    assert np.allclose(shifted, world.plant_center + [1, -2], atol=1e-6)


def test_estimate_with_scan_noise_p95():
    errs = []
    for k in range(40):
        world, rv = world_facing_plant(seed=k, bearing=0.3 * k, lidar_sigma=0.02)
        rng = np.random.default_rng(k)
        scan = raycast_lidar(world, rv, rng)
        att = AttitudeState(rv.roll, rv.pitch, rv.yaw)
        c = estimate_plant_center(scan, att, (rv.x, rv.y), world.plant_radius, seed=k)
        errs.append(np.hypot(*(c - world.plant_center)))
    assert np.percentile(errs, 95) < 0.1


@pytest.mark.parametrize("drift", [(0.5, -0.2), (5.0, 3.0), (-20.0, 12.0)])
def test_homing_loop_closure_independent_of_drift(drift):
    """After homing the position error equals the centre-fit error, whatever
    drift had accumulated."""
    world, rv = world_facing_plant(seed=4, bearing=1.0)
    scan = raycast_lidar(world, rv, np.random.default_rng(0))
    att = AttitudeState(rv.roll, rv.pitch, rv.yaw)
    est_pos = np.array([rv.x, rv.y]) + drift
    fit_err = estimate_plant_center(scan, att, (rv.x, rv.y), world.plant_radius) - world.plant_center
    pp_hat = estimate_plant_center(scan, att, est_pos, world.plant_radius)
    s = homing_update(initial_state([*est_pos, 0.0], pos_sigma=30.0), world.plant_center, pp_hat, sigma=1e-6)
    assert np.allclose(s.position[:2] - [rv.x, rv.y], fit_err, atol=1e-6)
