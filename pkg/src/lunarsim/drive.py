"""Four-wheel-steering driving controller.

Wheel order everywhere is FL, FR, RL, RR. Steering angles are measured from
the body x axis, positive counter-clockwise, and always lie in [-pi/2, pi/2];
a wheel that has to roll "backwards" gets a negative speed instead of a
steering angle beyond 90 degrees.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

MAX_SPEED = 1.5
MAX_STEER = math.pi / 2
MAX_BRAKE_TORQUE = 500.0
EPS_V = 0.01
EPS_OMEGA = 0.01


class LocomotionMode(enum.Enum):
    DOUBLE_ACKERMANN = "double_ackermann"
    CRAB = "crab"
    POINT_TURN = "point_turn"
    STOP = "stop"


@dataclass(frozen=True)
class RoverGeometry:
    half_wheelbase: float = 0.5
    half_track: float = 0.5
    wheel_radius: float = 0.17

    def __post_init__(self):
        if min(self.half_wheelbase, self.half_track, self.wheel_radius) <= 0:
            raise ValueError("rover geometry must be positive")

    @property
    def wheel_positions(self) -> np.ndarray:
        L, W = self.half_wheelbase, self.half_track
        return np.array([[L, W], [L, -W], [-L, W], [-L, -W]])


@dataclass(frozen=True)
class BodyCommand:
    v: float = 0.0
    omega: float = 0.0
    crab_direction: float = 0.0
    brake_percent: float = 0.0

    def clamped(self) -> "BodyCommand":
        return replace(self, v=float(np.clip(self.v, -MAX_SPEED, MAX_SPEED)))


@dataclass
class WheelCommand:
    steering: np.ndarray = field(default_factory=lambda: np.zeros(4))
    wheel_speed: np.ndarray = field(default_factory=lambda: np.zeros(4))
    brake_torque_limit: float = 0.0

    def __post_init__(self):
        self.steering = np.asarray(self.steering, dtype=float)
        self.wheel_speed = np.asarray(self.wheel_speed, dtype=float)


class InfeasibleTurnError(ValueError):
    """Raised when a wheel would need more than 90 degrees of steering.

    ``fallback`` holds the command with the offending wheels flipped into
    range and driven in reverse.
    """

    def __init__(self, message: str, fallback: WheelCommand):
        super().__init__(message)
        self.fallback = fallback


def select_mode(cmd: BodyCommand, eps_v: float = EPS_V, eps_omega: float = EPS_OMEGA) -> LocomotionMode:
    moving = abs(cmd.v) > eps_v
    turning = abs(cmd.omega) > eps_omega
    if moving and turning:
        return LocomotionMode.DOUBLE_ACKERMANN
    if moving:
        return LocomotionMode.CRAB
    if turning:
        return LocomotionMode.POINT_TURN
    return LocomotionMode.STOP


def _fold(vx: np.ndarray, vy: np.ndarray, radius: float):
    """Steering angle and signed wheel speed for per-wheel contact velocities,
    folded into [-pi/2, pi/2]."""
    speed = np.hypot(vx, vy) / radius
    angle = np.arctan2(vy, vx)
    back = np.abs(angle) > MAX_STEER
    angle = np.where(back, angle - np.sign(angle) * math.pi, angle)
    speed = np.where(back, -speed, speed)
    return angle, speed


def compute_wheel_commands(mode: LocomotionMode, cmd: BodyCommand, geom: RoverGeometry) -> WheelCommand:
    cmd = cmd.clamped()
    pos = geom.wheel_positions
    rw = geom.wheel_radius
    if mode is LocomotionMode.STOP:
        return WheelCommand()

    if mode is LocomotionMode.CRAB:
        c = cmd.crab_direction
        vx = np.full(4, cmd.v * math.cos(c))
        vy = np.full(4, cmd.v * math.sin(c))
        angle, speed = _fold(vx, vy, rw)
        out = WheelCommand(angle, speed)
        if abs(wrap_pi(c)) > MAX_STEER + 1e-12:
            raise InfeasibleTurnError(f"crab direction {c:.3f} rad beyond steering limit", out)
        return out

    # rigid-body contact velocity of each wheel for twist (v, 0, omega)
    v = cmd.v if mode is LocomotionMode.DOUBLE_ACKERMANN else 0.0
    w = cmd.omega
    vx = v - w * pos[:, 1]
    vy = w * pos[:, 0]
    angle, speed = _fold(vx, vy, rw)
    out = WheelCommand(angle, speed)
    if mode is LocomotionMode.DOUBLE_ACKERMANN and np.any(vx * math.copysign(1.0, v) < 0):
        raise InfeasibleTurnError(
            f"turn radius {v / w:.3f} m inside the track; wheels would exceed 90 deg", out)
    return out


def wrap_pi(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def command_wheels(cmd: BodyCommand, geom: RoverGeometry) -> WheelCommand:
    """select_mode + compute_wheel_commands, taking the clamped fallback on
    infeasible turns and honouring the brake request."""
    if cmd.brake_percent > 0:
        return brake(cmd.brake_percent)
    mode = select_mode(cmd)
    try:
        return compute_wheel_commands(mode, cmd, geom)
    except InfeasibleTurnError as exc:
        return exc.fallback


def body_twist_from_wheels(steering: np.ndarray, wheel_speed: np.ndarray, geom: RoverGeometry):
    """Least-squares body twist (vx, vy, omega) from per-wheel rolling
    velocities. Closed form because the wheel layout is centred."""
    pos = geom.wheel_positions
    s = wheel_speed * geom.wheel_radius
    u = s * np.cos(steering)
    w = s * np.sin(steering)
    vx = u.mean()
    vy = w.mean()
    omega = (pos[:, 0] @ w - pos[:, 1] @ u) / float(np.sum(pos * pos))
    return float(vx), float(vy), float(omega)


def wheel_speed_control(target_speed, measured_speed, kp: float, torque_limit: float | None = None):
    """Proportional wheel-speed law; works on scalars or per-wheel arrays."""
    if kp <= 0:
        raise ValueError("kp must be positive")
    torque = kp * (np.asarray(target_speed, dtype=float) - np.asarray(measured_speed, dtype=float))
    if torque_limit is not None:
        torque = np.clip(torque, -torque_limit, torque_limit)
    return float(torque) if np.ndim(torque) == 0 else torque


def brake(percent: float) -> WheelCommand:
    """Zero the wheel-speed targets and apply 5 N*m/rad of brake per percent."""
    if not 0.0 <= percent <= 100.0:
        warnings.warn(f"brake percent {percent} outside [0, 100]; clamped", stacklevel=2)
        percent = min(max(percent, 0.0), 100.0)
    return WheelCommand(np.zeros(4), np.zeros(4), MAX_BRAKE_TORQUE * percent / 100.0)


@dataclass(frozen=True)
class WheelMotorModel:
    """First-order wheel plant J*dw/dt = tau - c*w - b*w driven by the P law.

    The update is implicit in the linear terms so large brake gains stay
    stable at the simulation step.
    """
    inertia: float = 1.0
    viscous_drag: float = 0.2
    kp: float = 50.0
    torque_limit: float = 60.0

    def step(self, speed: np.ndarray, target: np.ndarray, dt: float, brake_torque: float = 0.0) -> np.ndarray:
        J = self.inertia
        new = (J * speed + dt * self.kp * target) / (J + dt * (self.kp + self.viscous_drag + brake_torque))
        tau = self.kp * (target - new)
        sat = np.abs(tau) > self.torque_limit
        if np.any(sat):
            tau_s = np.clip(tau, -self.torque_limit, self.torque_limit)
            explicit = (J * speed + dt * tau_s) / (J + dt * (self.viscous_drag + brake_torque))
            new = np.where(sat, explicit, new)
        return new
