import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lunarsim.config import WorldConfig
from lunarsim.drive import (BodyCommand, InfeasibleTurnError, LocomotionMode, RoverGeometry, brake,
                            command_wheels, compute_wheel_commands, select_mode, wheel_speed_control)
from lunarsim.world import build_world, step_world

GEOM = RoverGeometry(0.5, 0.5, 0.17)
DA = LocomotionMode.DOUBLE_ACKERMANN


def icr_miss(wc, geom, icr):
    """Largest distance from ``icr`` to the lines through each wheel along its axle."""
    miss = 0.0
    for p, d in zip(geom.wheel_positions, wc.steering):
        axle = np.array([-math.sin(d), math.cos(d)])
        rel = np.asarray(icr) - p
        miss = max(miss, abs(rel[0] * axle[1] - rel[1] * axle[0]))
    return miss


def feasible_commands():
    def build(radius, v):
        return BodyCommand(v, v / radius)
    radius = st.one_of(st.floats(0.51, 50.0), st.floats(-50.0, -0.51))
    return st.builds(build, radius, st.one_of(st.floats(0.02, 1.5), st.floats(-1.5, -0.02)))


def test_mode_selection():
    assert select_mode(BodyCommand(1.0, 0.3)) is DA
    assert select_mode(BodyCommand(0.0, 0.5)) is LocomotionMode.POINT_TURN
    assert select_mode(BodyCommand(0.5, 0.0)) is LocomotionMode.CRAB
    assert select_mode(BodyCommand(0.0, 0.0)) is LocomotionMode.STOP
    assert select_mode(BodyCommand(0.005, 0.005)) is LocomotionMode.STOP


def test_double_ackermann_left_turn_radius_two():
    wc = compute_wheel_commands(DA, BodyCommand(1.0, 0.5), GEOM)
    deg = np.degrees(wc.steering)
    assert np.allclose(deg, [18.43494882, 11.30993247, -18.43494882, -11.30993247], atol=1e-8)
    assert icr_miss(wc, GEOM, (0.0, 2.0)) < 1e-9


@given(feasible_commands())
def test_icr_consistency(cmd):
    wc = compute_wheel_commands(DA, cmd, GEOM)
    icr = (0.0, cmd.v / cmd.omega)
    assert icr_miss(wc, GEOM, icr) < 1e-9
    # each wheel rolls at omega times its distance to the ICR
    dist = np.hypot(*(GEOM.wheel_positions - icr).T)
    assert np.allclose(np.abs(wc.wheel_speed), abs(cmd.omega) * dist / GEOM.wheel_radius, rtol=1e-12)


def test_turn_inside_track_is_infeasible_with_fallback():
    with pytest.raises(InfeasibleTurnError) as err:
        compute_wheel_commands(DA, BodyCommand(0.2, 1.0), GEOM)
    fb = err.value.fallback
    assert np.all(np.abs(fb.steering) <= math.pi / 2)


def test_crab_mode():
    wc = compute_wheel_commands(LocomotionMode.CRAB, BodyCommand(1.0, 0.0, math.radians(30)), GEOM)
    assert np.allclose(wc.steering, math.radians(30))
    assert np.allclose(wc.wheel_speed, wc.wheel_speed[0])


def test_point_turn_square_layout():
    wc = compute_wheel_commands(LocomotionMode.POINT_TURN, BodyCommand(0.0, 0.5), GEOM)
    assert np.allclose(np.abs(wc.steering), math.pi / 4)
    assert np.allclose(np.abs(wc.wheel_speed), 0.5 * math.hypot(0.5, 0.5) / GEOM.wheel_radius)
    # left wheels roll backwards, right wheels forwards for a left turn
    assert wc.wheel_speed[0] * wc.wheel_speed[1] < 0


@given(st.floats(0.05, 1.5))
def test_mode_continuity_toward_straight(v):
    straight = compute_wheel_commands(LocomotionMode.CRAB, BodyCommand(v, 0.0), GEOM)
    prev = math.inf
    for w in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7):
        dev = np.abs(compute_wheel_commands(DA, BodyCommand(v, w), GEOM).steering - straight.steering).max()
        assert dev <= prev
        prev = dev
    assert prev < 1e-5


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-4, 4), st.floats(-50, 150))
def test_outputs_always_saturated(v, w, crab, brake_pct):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        wc = command_wheels(BodyCommand(v, w, crab, brake_pct), GEOM)
    assert np.all(np.abs(wc.steering) <= math.pi / 2 + 1e-12)
    assert 0.0 <= wc.brake_torque_limit <= 500.0
    assert np.all(np.abs(wc.wheel_speed) * GEOM.wheel_radius <= 1.5 + abs(w) * math.hypot(0.5, 0.5) + 1e-9)


def test_p_controller():
    assert wheel_speed_control(1.0, 1.0, 5.0) == 0.0
    assert wheel_speed_control(2.0, 1.0, 10.0) == 10.0
    assert wheel_speed_control(2.0, 1.0, 10.0, torque_limit=4.0) == 4.0
    with pytest.raises(ValueError):
        wheel_speed_control(1.0, 0.0, 0.0)


def test_brake_map():
    assert brake(100).brake_torque_limit == 500.0
    assert brake(0).brake_torque_limit == 0.0
    assert brake(50).brake_torque_limit == 250.0
    assert np.all(brake(50).wheel_speed == 0)
    with pytest.warns(UserWarning):
        assert brake(150).brake_torque_limit == 500.0


def flat_world():
    cfg = WorldConfig(seed=1, n_obstacles=0, n_volatiles=0, slip_zones=())
    return build_world(cfg)


def test_closed_loop_speed_tracking():
    world = flat_world()
    cmd = {"scout": command_wheels(BodyCommand(1.0, 0.0), world.config.geometry)}
    for _ in range(300):
        step_world(world, cmd, 0.01)
    assert abs(world.rover("scout").ground_speed - 1.0) < 0.02


def test_crab_motion_does_not_rotate():
    world = flat_world()
    rv = world.rover("scout")
    yaw0 = rv.yaw
    cmd = {"scout": command_wheels(BodyCommand(0.8, 0.0, math.radians(30)), world.config.geometry)}
    for _ in range(1000):
        step_world(world, cmd, 0.01)
    assert abs(math.remainder(rv.yaw - yaw0, 2 * math.pi)) < 1e-6
    assert rv.odometer > 5.0
