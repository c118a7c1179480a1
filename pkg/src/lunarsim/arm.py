"""Excavator 4R arm: forward/inverse kinematics, named configurations,
joint-space trajectories and the bucket search pattern.

Joint 1 is shoulder yaw; joints 2-4 pitch the shoulder, elbow and wrist in the
vertical r-z plane selected by joint 1. The end-effector pose is
(x, y, z, bucket pitch) in the mobile-base frame.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .frames import wrap_angle


class UnreachableError(ValueError):
    pass


class TrajectoryConstraintError(ValueError):
    def __init__(self, message, sample_index: int, time: float):
        super().__init__(message)
        self.sample_index = sample_index
        self.time = time


class SearchExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArmGeometry:
    l1: float = 0.3
    l2: float = 1.2
    l3: float = 1.0
    l4: float = 0.4
    h0: float = 0.2

    def __post_init__(self):
        if min(self.l1, self.l2, self.l3, self.l4) <= 0 or self.h0 < 0:
            raise ValueError("link lengths must be positive and h0 non-negative")

    def dh_table(self, q):
        """Rows (a, alpha, d, theta) as tabulated; joint 2 carries a pi zero
        offset so the tabulated negative link lengths point the arm forward."""
        q1, q2, q3, q4 = q
        return [
            (0.0, 0.0, self.l1, q1),
            (-self.l2, math.pi / 2, 0.0, q2 + math.pi),
            (-self.l3, 0.0, 0.0, q3),
            (-self.l4, 0.0, 0.0, q4),
        ]


@dataclass(frozen=True)
class JointLimits:
    lower: tuple = (math.radians(-175), math.radians(-80), math.radians(-80), math.radians(-80))
    upper: tuple = (math.radians(175), math.radians(80), math.radians(80), math.radians(80))

    def contains(self, q) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= np.array(self.lower) - 1e-12) and np.all(q <= np.array(self.upper) + 1e-12))


@dataclass(frozen=True)
class JointAngles:
    q1: float
    q2: float
    q3: float
    q4: float
    singular: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3, self.q4])

    @classmethod
    def from_array(cls, q, singular=False) -> "JointAngles":
        q = wrap_angle(np.asarray(q, dtype=float))
        return cls(float(q[0]), float(q[1]), float(q[2]), float(q[3]), singular)


@dataclass(frozen=True)
class EndEffectorPose:
    x_xi: float
    y_xi: float
    z_xi: float
    phi_xi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_xi, self.y_xi, self.z_xi, self.phi_xi])


class Elbow(enum.Enum):
    UP = +1
    DOWN = -1


def forward_kinematics(q: JointAngles, geom: ArmGeometry = ArmGeometry()) -> EndEffectorPose:
    q1, q2, q3, q4 = q.q1, q.q2, q.q3, q.q4
    phi = q2 + q3 + q4
    r = geom.l2 * math.cos(q2) + geom.l3 * math.cos(phi - q4) + geom.l4 * math.cos(phi)
    z = geom.h0 + geom.l1 + geom.l2 * math.sin(q2) + geom.l3 * math.sin(phi - q4) + geom.l4 * math.sin(phi)
    return EndEffectorPose(r * math.cos(q1), r * math.sin(q1), z, phi)


def _planar_ik(r: float, z: float, phi: float, geom: ArmGeometry, elbow: Elbow, tol: float):
    """Shoulder, elbow and wrist pitch for a target at signed reach ``r``."""
    r_s = r - geom.l4 * math.cos(phi)
    z_s = z - geom.h0 - geom.l1 - geom.l4 * math.sin(phi)
    rho = math.hypot(r_s, z_s)
    if rho == 0.0:
        raise UnreachableError("wrist centre at the shoulder")
    c = -(rho**2 + geom.l2**2 - geom.l3**2) / (2.0 * geom.l2 * rho)
    if abs(c) > 1.0 + tol:
        raise UnreachableError(f"target outside the arm annulus (acos argument {c:.6f})")
    c = min(1.0, max(-1.0, c))
    q2 = math.atan2(-z_s / rho, -r_s / rho) + elbow.value * math.acos(c)
    q3 = math.atan2((z_s - geom.l2 * math.sin(q2)) / geom.l3, (r_s - geom.l2 * math.cos(q2)) / geom.l3) - q2
    return q2, q3, phi - (q2 + q3)


def inverse_kinematics(pose: EndEffectorPose, geom: ArmGeometry = ArmGeometry(), elbow: Elbow = Elbow.UP,
                       tol: float = 1e-12) -> JointAngles:
    """Closed-form IK. Joint 1 points the arm plane at the target; when the
    wrist centre is only reachable folded back over the shoulder (negative
    reach), joint 1 is turned by pi instead."""
    x, y, z, phi = pose.x_xi, pose.y_xi, pose.z_xi, pose.phi_xi
    singular = False
    r = math.hypot(x, y)
    if r == 0.0:
        q1 = 0.0
        singular = True
    else:
        q1 = math.atan2(y, x)
    try:
        q2, q3, q4 = _planar_ik(r, z, phi, geom, elbow, tol)
    except UnreachableError:
        if r == 0.0:
            raise
        q2, q3, q4 = _planar_ik(-r, z, phi, geom, elbow, tol)
        q1 += math.pi
    return JointAngles.from_array([q1, q2, q3, q4], singular)


def reachable(pose: EndEffectorPose, geom: ArmGeometry = ArmGeometry()) -> bool:
    try:
        inverse_kinematics(pose, geom)
    except UnreachableError:
        return False
    return True


def dh_transform(a, alpha, d, theta) -> np.ndarray:
    """Link transform with the twist applied before the joint rotation:
    Rx(alpha) Rz(theta) Tz(d) Tx(a)."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    ct, st = math.cos(theta), math.sin(theta)
    Rx = np.array([[1, 0, 0, 0], [0, ca, -sa, 0], [0, sa, ca, 0], [0, 0, 0, 1.0]])
    Rz = np.array([[ct, -st, 0, 0], [st, ct, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])
    T = np.eye(4)
    T[2, 3] = d
    T[0, 3] = a
    return Rx @ Rz @ T


def link_points(q: JointAngles, geom: ArmGeometry = ArmGeometry()) -> np.ndarray:
    """Base-frame positions of shoulder, elbow, wrist and bucket tip."""
    c, s = math.cos(q.q1), math.sin(q.q1)
    zs = geom.h0 + geom.l1
    a2 = q.q2
    a3 = q.q2 + q.q3
    a4 = a3 + q.q4
    r = np.cumsum([0.0, geom.l2 * math.cos(a2), geom.l3 * math.cos(a3), geom.l4 * math.cos(a4)])
    z = zs + np.cumsum([0.0, geom.l2 * math.sin(a2), geom.l3 * math.sin(a3), geom.l4 * math.sin(a4)])
    return np.column_stack([r * c, r * s, z])


# ---------------------------------------------------------------- configurations

class ConfigName(enum.Enum):
    HOME = "Home"
    DIG_LOWER = "DigLower"
    DIG_SCOOP = "DigScoop"
    EXTEND_TO_HAULER = "ExtendToHauler"
    DROP_ROTATE = "DropRotate"


DIG_SIDE = {ConfigName.DIG_LOWER, ConfigName.DIG_SCOOP}
DROP_SIDE = {ConfigName.EXTEND_TO_HAULER, ConfigName.DROP_ROTATE}

_NAMED_Q = {
    ConfigName.HOME: (0.0, math.radians(60), math.radians(-70), math.radians(30)),
    ConfigName.DIG_LOWER: (0.0, math.radians(5), math.radians(-45), math.radians(-35)),
    ConfigName.DIG_SCOOP: (0.0, math.radians(0), math.radians(-40), math.radians(60)),
    ConfigName.EXTEND_TO_HAULER: (0.0, math.radians(35), math.radians(-20), math.radians(5)),
    ConfigName.DROP_ROTATE: (0.0, math.radians(35), math.radians(-20), math.radians(-75)),
}


@dataclass(frozen=True)
class NamedConfig:
    name: ConfigName
    angles: JointAngles
    heading_offset: float = 0.0

    @property
    def q(self) -> np.ndarray:
        q = self.angles.as_array().copy()
        q[0] = wrap_angle(q[0] + self.heading_offset)
        return q


def named_config(name: ConfigName, heading_offset: float = 0.0) -> NamedConfig:
    return NamedConfig(name, JointAngles(*_NAMED_Q[name]), heading_offset)


@dataclass(frozen=True)
class RoverBody:
    """Axis-aligned box of the rover chassis in the arm base frame."""
    x: tuple = (-1.5, -0.2)
    y: tuple = (-0.6, 0.6)
    z: tuple = (-0.1, 0.45)

    def contains(self, p) -> bool:
        return (self.x[0] <= p[0] <= self.x[1] and self.y[0] <= p[1] <= self.y[1]
                and self.z[0] <= p[2] <= self.z[1])


def collision_free(q: JointAngles, geom: ArmGeometry = ArmGeometry(), body: RoverBody = RoverBody(),
                   samples_per_link: int = 10) -> bool:
    pts = link_points(q, geom)
    for a, b in zip(pts[:-1], pts[1:]):
        for t in np.linspace(0.0, 1.0, samples_per_link):
            if body.contains(a + t * (b - a)):
                return False
    return True


# ---------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class ArmTrajectory:
    times: np.ndarray
    q: np.ndarray            # (n, 4)
    waypoints: tuple          # ConfigName sequence
    loaded: bool = False

    def bucket_pitch(self) -> np.ndarray:
        return self.q[:, 1] + self.q[:, 2] + self.q[:, 3]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.q[min(max(idx, 0), len(self.q) - 1)]


def waypoint_sequence(start: ConfigName, goal: ConfigName) -> list:
    if start == goal:
        return [start]
    if (start in DIG_SIDE and goal in DROP_SIDE) or (start in DROP_SIDE and goal in DIG_SIDE):
        return [start, ConfigName.HOME, goal]
    return [start, goal]


def plan_arm_trajectory(start: NamedConfig, goal: NamedConfig, duration: float, *, loaded: bool = False,
                        pitch_band=(math.radians(-10), math.radians(60)), rover_pitch: float = 0.0,
                        rate_hz: float = 100.0) -> ArmTrajectory:
    """Cubic joint interpolation with zero velocity at every waypoint.

    ``duration`` is split evenly over the segments. When ``loaded`` the bucket
    pitch in the global frame must stay inside ``pitch_band`` at every sample.
    """
    names = waypoint_sequence(start.name, goal.name)
    heading = goal.heading_offset
    qs = [start.q]
    for n in names[1:-1]:
        qs.append(named_config(n, heading).q)
    if len(names) > 1:
        qs.append(goal.q)
    if len(qs) == 1:
        return ArmTrajectory(np.zeros(1), np.array([qs[0]]), tuple(names), loaded)
    seg_t = duration / (len(qs) - 1)
    n_seg = max(int(round(seg_t * rate_hz)), 1)
    times, samples = [0.0], [qs[0]]
    for k, (qa, qb) in enumerate(zip(qs[:-1], qs[1:])):
        dq = wrap_angle(qb - qa)
        s = np.linspace(0.0, 1.0, n_seg + 1)[1:]
        blend = 3 * s**2 - 2 * s**3
        for j, b in enumerate(blend):
            samples.append(qa + b * dq)
            times.append(k * seg_t + (j + 1) * seg_t / n_seg)
    traj = ArmTrajectory(np.array(times), np.array(samples), tuple(names), loaded)
    if loaded:
        pitch = traj.bucket_pitch() + rover_pitch
        bad = np.flatnonzero((pitch < pitch_band[0] - 1e-12) | (pitch > pitch_band[1] + 1e-12))
        if len(bad):
            i = int(bad[0])
            raise TrajectoryConstraintError(
                f"loaded bucket pitch {math.degrees(pitch[i]):.1f} deg outside band at t={traj.times[i]:.2f} s",
                i, float(traj.times[i]))
    return traj


# ---------------------------------------------------------------- digging

@dataclass(frozen=True)
class DigSearchConfig:
    dq1: float = math.radians(10.0)
    dr: float = 0.15
    max_rings: int = 3
    depth: float = -0.25
    pitch: float = math.radians(-60.0)


def _search_offsets(max_rings: int):
    out = [(0, 0)]
    for k in range(1, max_rings + 1):
        out += [(0, k), (0, -k), (k, 0), (-k, 0), (k, k), (k, -k), (-k, k), (-k, -k)]
    return out


def dig_search_pattern(center_xy_base, attempt_index: int, geom: ArmGeometry = ArmGeometry(),
                       cfg: DigSearchConfig = DigSearchConfig()) -> EndEffectorPose:
    """Bucket target for a dig attempt: the nominal centre first, then rings
    of +-dr radial and +-dq1 yaw steps around it. Unreachable candidates are
    skipped; running past the last ring raises SearchExhaustedError."""
    if attempt_index < 0:
        raise ValueError("attempt_index must be non-negative")
    cx, cy = center_xy_base
    r0 = math.hypot(cx, cy)
    a0 = math.atan2(cy, cx)
    seen = -1
    for ring_r, ring_a in _search_offsets(cfg.max_rings):
        r = r0 + ring_r * cfg.dr
        a = a0 + ring_a * cfg.dq1
        pose = EndEffectorPose(r * math.cos(a), r * math.sin(a), cfg.depth, cfg.pitch)
        if not reachable(pose, geom):
            continue
        seen += 1
        if seen == attempt_index:
            return pose
    raise SearchExhaustedError(f"dig search exhausted after {seen + 1} reachable targets")


def ee_global_position(q: JointAngles, geom: ArmGeometry, rover_pose, mount_offset=(0.0, 0.0)) -> np.ndarray:
    """Bucket reference point in the global xy plane.

    ``rover_pose`` is (x, y, yaw); ``mount_offset`` locates the arm base in the
    rover body frame.
    """
    ee = forward_kinematics(q, geom)
    x, y, yaw = rover_pose[0], rover_pose[1], rover_pose[2]
    bx = mount_offset[0] + ee.x_xi
    by = mount_offset[1] + ee.y_xi
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([x + c * bx - s * by, y + s * bx + c * by])
