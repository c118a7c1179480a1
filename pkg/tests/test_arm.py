import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lunarsim import arm
from lunarsim.arm import (ArmGeometry, ConfigName, Elbow, EndEffectorPose, JointAngles, JointLimits,
                          SearchExhaustedError, TrajectoryConstraintError, UnreachableError, collision_free,
                          dig_search_pattern, ee_global_position, forward_kinematics, inverse_kinematics,
                          named_config, plan_arm_trajectory)
from lunarsim.config import WorldConfig
from lunarsim.fusion import initial_state, volatile_pseudo_update
from lunarsim.world import build_world, dig_at

UNIT = ArmGeometry(1.0, 1.0, 1.0, 1.0, 0.0)
GEOM = ArmGeometry()
LIMITS = JointLimits()


def _rx(alpha):
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1.0]])


def _rz(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])


def _trans(x, z):
    T = np.eye(4)
    T[0, 3], T[2, 3] = x, z
    return T


def dh_oracle(q, g):
    """Homogeneous chain built straight from the link table: a = -l_i for the
    three pitch links, twist pi/2 on joint 2, base offset l1, and the pi zero
    offset that points the negative link lengths forward. Each link applies
    its twist before the joint rotation. Returns (x, y, z, bucket pitch)
    in the base frame, z measured from the ground (adds h0)."""
    rows = [(0.0, 0.0, g.l1, q[0]), (-g.l2, math.pi / 2, 0.0, q[1] + math.pi),
            (-g.l3, 0.0, 0.0, q[2]), (-g.l4, 0.0, 0.0, q[3])]
    T = np.eye(4)
    for a, alpha, d, theta in rows:
        T = T @ _rx(alpha) @ _rz(theta) @ _trans(a, d)
    pitch = math.atan2(-T[2, 0], -T[2, 1])
    return np.array([T[0, 3], T[1, 3], T[2, 3] + g.h0, pitch])


def random_q(rng, n):
    lo, hi = np.array(LIMITS.lower), np.array(LIMITS.upper)
    return rng.uniform(lo, hi, size=(n, 4))


def pose_error(a, b):
    a, b = a.as_array(), b.as_array()
    return np.abs(a[:3] - b[:3]).max(), abs(math.remainder(a[3] - b[3], 2 * math.pi))


def test_fk_zero_angles_unit_links():
    assert np.allclose(forward_kinematics(JointAngles(0, 0, 0, 0), UNIT).as_array(), [3, 0, 1, 0], atol=1e-15)
    assert np.allclose(forward_kinematics(JointAngles(math.pi / 2, 0, 0, 0), UNIT).as_array(), [0, 3, 1, 0],
                       atol=1e-15)


def test_fk_matches_dh_chain():
    rng = np.random.default_rng(0)
    for geom in (GEOM, UNIT, ArmGeometry(0.4, 0.9, 1.3, 0.25, 0.35)):
        for q in random_q(rng, 300):
            fk = forward_kinematics(JointAngles(*q), geom).as_array()
            dh = dh_oracle(q, geom)
            assert np.abs(fk[:3] - dh[:3]).max() < 1e-9
            assert abs(math.remainder(fk[3] - dh[3], 2 * math.pi)) < 1e-9


def test_ik_full_extension_unit_links():
    for elbow in Elbow:
        q = inverse_kinematics(EndEffectorPose(3, 0, 1, 0), UNIT, elbow)
        assert np.allclose(q.as_array(), 0, atol=1e-7)


def test_ik_unreachable():
    with pytest.raises(UnreachableError):
        inverse_kinematics(EndEffectorPose(5, 0, 1, 0), UNIT)


def test_ik_singular_yaw_convention():
    q = inverse_kinematics(EndEffectorPose(0.0, 0.0, 2.5, math.pi / 2), UNIT)
    assert q.singular and q.q1 == 0.0


@pytest.mark.parametrize("elbow", list(Elbow))
def test_round_trip_random_poses(elbow):
    rng = np.random.default_rng(1 if elbow is Elbow.UP else 2)
    worst_p = worst_a = 0.0
    for q in random_q(rng, 2000):
        pose = forward_kinematics(JointAngles(*q), GEOM)
        back = forward_kinematics(inverse_kinematics(pose, GEOM, elbow), GEOM)
        dp, da = pose_error(pose, back)
        worst_p, worst_a = max(worst_p, dp), max(worst_a, da)
    assert worst_p < 1e-9 and worst_a < 1e-9


def test_branches_coincide_on_annulus_boundary():
    for rho_dir in np.linspace(-1.2, 1.2, 9):
        # wrist centre exactly at full reach l2 + l3
        r_s, z_s = (GEOM.l2 + GEOM.l3) * math.cos(rho_dir), (GEOM.l2 + GEOM.l3) * math.sin(rho_dir)
        pose = EndEffectorPose(r_s + GEOM.l4, 0.0, z_s + GEOM.h0 + GEOM.l1, 0.0)
        up = inverse_kinematics(pose, GEOM, Elbow.UP).as_array()
        down = inverse_kinematics(pose, GEOM, Elbow.DOWN).as_array()
        assert np.allclose(up, down, atol=1e-6)


def test_named_configs_are_collision_free_and_within_limits():
    for name in ConfigName:
        for heading in (0.0, math.pi / 2, -math.pi / 2):
            nc = named_config(name, heading)
            assert LIMITS.contains(nc.q), name
            assert collision_free(JointAngles(*nc.q), GEOM), name


def test_trajectory_same_config_is_static():
    home = named_config(ConfigName.HOME)
    traj = plan_arm_trajectory(home, home, 3.0)
    assert len(traj.q) == 1 and traj.duration == 0.0


def test_dig_to_drop_routes_through_home():
    traj = plan_arm_trajectory(named_config(ConfigName.DIG_SCOOP), named_config(ConfigName.DROP_ROTATE), 4.0)
    assert traj.waypoints == (ConfigName.DIG_SCOOP, ConfigName.HOME, ConfigName.DROP_ROTATE)
    mid = np.argmin(np.abs(traj.times - 2.0))
    assert np.allclose(traj.q[mid], named_config(ConfigName.HOME).q, atol=1e-12)


def test_trajectory_continuity_at_junctions():
    traj = plan_arm_trajectory(named_config(ConfigName.DIG_LOWER),
                               named_config(ConfigName.EXTEND_TO_HAULER, math.pi / 2), 4.0, rate_hz=400)
    dq = np.diff(traj.q, axis=0) / np.diff(traj.times)[:, None]
    assert np.abs(np.diff(traj.q, axis=0)).max() < 0.02          # positions continuous
    assert np.abs(np.diff(dq, axis=0)).max() < 0.05              # velocities continuous
    assert np.allclose(dq[0], 0, atol=1e-2) and np.allclose(dq[-1], 0, atol=1e-2)


def test_loaded_trajectory_respects_pitch_band():
    band = (math.radians(-10), math.radians(60))
    traj = plan_arm_trajectory(named_config(ConfigName.HOME),
                               named_config(ConfigName.EXTEND_TO_HAULER, math.pi / 2), 4.0, loaded=True,
                               pitch_band=band)
    pitch = traj.bucket_pitch()
    assert len(pitch) >= 400
    excess = np.maximum(band[0] - pitch, 0) + np.maximum(pitch - band[1], 0)
    assert excess.max() == 0.0


def test_loaded_violation_reports_sample():
    with pytest.raises(TrajectoryConstraintError) as err:
        plan_arm_trajectory(named_config(ConfigName.HOME), named_config(ConfigName.DROP_ROTATE), 4.0,
                            loaded=True)
    assert err.value.sample_index > 0


def test_dig_search_pattern():
    center = (1.8, 0.2)
    first = dig_search_pattern(center, 0, GEOM)
    assert (first.x_xi, first.y_xi) == pytest.approx(center)
    targets = []
    k = 0
    while True:
        try:
            targets.append(dig_search_pattern(center, k, GEOM))
        except SearchExhaustedError:
            break
        k += 1
    xy = np.array([[t.x_xi, t.y_xi] for t in targets])
    assert len(targets) > 8
    assert len({tuple(np.round(p, 9)) for p in xy}) == len(xy)
    assert all(arm.reachable(t, GEOM) for t in targets)
    with pytest.raises(ValueError):
        dig_search_pattern(center, -1, GEOM)


def _dig_trial(world, offset_xy, yaw, standoff=1.7):
    """Excavator aims from an estimated pose that is off by ``offset_xy``.
    Returns (attempts used, pre-dig error, post-dig error) or None."""
    v = world.volatiles[0]
    truth = v.position - standoff * np.array([math.cos(yaw), math.sin(yaw)])
    est = truth + offset_xy
    c, s = math.cos(yaw), math.sin(yaw)
    d = v.position - est
    base = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
    for k in range(64):
        try:
            target = dig_search_pattern(base, k, GEOM)
        except SearchExhaustedError:
            return None
        q = inverse_kinematics(target, GEOM)
        mass, vid = dig_at(world, ee_global_position(q, GEOM, (*truth, yaw)), 0.5)
        if mass > 0:
            tip_est = ee_global_position(q, GEOM, (*est, yaw))
            fs = volatile_pseudo_update(initial_state([*est, 0.0]), v.position, tip_est, mass)
            return k + 1, float(np.hypot(*offset_xy)), float(np.hypot(*(fs.position[:2] - truth)))
    return None


def _one_volatile_world(seed):
    world = build_world(WorldConfig(seed=seed, n_obstacles=0, n_volatiles=1))
    return world


def test_search_finds_offset_volatile_within_eight_attempts():
    rng = np.random.default_rng(7)
    for i in range(100):
        ang = rng.uniform(0, 2 * math.pi)
        res = _dig_trial(_one_volatile_world(i), 0.3 * np.array([math.cos(ang), math.sin(ang)]),
                         rng.uniform(-math.pi, math.pi))
        assert res is not None and res[0] <= 8


def test_dig_update_reduces_error_when_found_off_nominal():
    rng = np.random.default_rng(8)
    better = 0
    for i in range(100):
        ang = rng.uniform(0, 2 * math.pi)
        attempts, pre, post = _dig_trial(_one_volatile_world(i), 0.55 * np.array([math.cos(ang), math.sin(ang)]),
                                         rng.uniform(-math.pi, math.pi))
        assert attempts > 1
        better += post < pre
    assert better >= 90


def test_ee_global_position():
    q = JointAngles(0.3, 0.2, -0.4, 0.1)
    fk = forward_kinematics(q, GEOM)
    assert np.allclose(ee_global_position(q, GEOM, (0, 0, 0)), [fk.x_xi, fk.y_xi], atol=1e-15)
    q0 = JointAngles(0, 0, 0, 0)
    assert np.allclose(ee_global_position(q0, UNIT, (10, 0, math.pi / 2)), [10, 3], atol=1e-12)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-math.pi, math.pi),
       st.lists(st.floats(-1.3, 1.3), min_size=4, max_size=4))
def test_ee_position_matches_truth_frame_oracle(x, y, yaw, q):
    """Base-frame tip from the link chain, placed with an explicit rotation."""
    mount = (0.5, 0.1)
    tip_base = arm.link_points(JointAngles(*q), GEOM)[-1]
    R = np.array([[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]])
    oracle = np.array([x, y]) + R @ (np.array(mount) + tip_base[:2])
    assert np.allclose(ee_global_position(JointAngles(*q), GEOM, (x, y, yaw), mount), oracle, atol=1e-9)
