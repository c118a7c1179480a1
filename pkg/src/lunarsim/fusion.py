"""Position/velocity EKF fusing wheel and visual odometry velocities.

State: global position (3) and navigation-frame velocity (3). The process
model is constant velocity with the white-noise-acceleration style Q
(sigma^2 dt^4 on position, sigma^2 dt^2 on velocity, no cross terms).
Homing and dig pseudo-measurements are position updates on x, y.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class OdometryKind(enum.Enum):
    WO = "wo"
    VO = "vo"


class PlantNotRegisteredError(RuntimeError):
    pass


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class OdometryMeasurement:
    kind: OdometryKind
    body_velocity: np.ndarray
    C_b_n: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        C = np.asarray(self.C_b_n, dtype=float)
        if C.shape != (3, 3) or np.linalg.norm(C @ C.T - np.eye(3)) >= 1e-9:
            raise ValueError("C_b_n must be a 3x3 rotation matrix")


@dataclass(frozen=True)
class GateConfig:
    velocity: float = 2.0      # m/s per axis
    position: float = 25.0     # m per axis

    def __post_init__(self):
        if not (self.velocity > 0 and self.position > 0):
            raise ValueError("gate limits must be positive")


@dataclass(frozen=True)
class FusionState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    covariance: np.ndarray = field(default_factory=lambda: np.eye(6))
    frame_initialized: bool = False
    last_rejected: bool = False
    consecutive_rejections: int = 0
    total_rejections: int = 0

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    def with_vector(self, x, P, **kw) -> "FusionState":
        return replace(self, position=np.array(x[:3]), velocity=np.array(x[3:6]), covariance=P, **kw)


def initial_state(position, pos_sigma=0.05, vel_sigma=0.05) -> FusionState:
    P = np.diag([pos_sigma**2] * 3 + [vel_sigma**2] * 3)
    return FusionState(np.array(position, dtype=float), np.zeros(3), P, frame_initialized=True)


def gate(innovation, limits) -> bool:
    """True (accept) unless some |component| exceeds its limit."""
    innovation = np.abs(np.asarray(innovation, dtype=float))
    return bool(np.all(innovation <= np.asarray(limits, dtype=float)))


def fusion_predict(state: FusionState, dt: float, sigma: float) -> FusionState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return state
    x = state.x
    x[:3] += x[3:] * dt
    P = state.covariance
    # F = [[I, dt I], [0, I]] applied blockwise
    Ppp, Ppv, Pvv = P[:3, :3], P[:3, 3:], P[3:, 3:]
    new = np.empty((6, 6))
    new[:3, :3] = Ppp + dt * (Ppv + Ppv.T) + dt * dt * Pvv
    new[:3, 3:] = Ppv + dt * Pvv
    new[3:, :3] = new[:3, 3:].T
    new[3:, 3:] = Pvv
    s2 = sigma * sigma
    idx = np.arange(3)
    new[idx, idx] += s2 * dt**4
    new[idx + 3, idx + 3] += s2 * dt**2
    return state.with_vector(x, new)


def _kalman(state: FusionState, rows: np.ndarray, innovation: np.ndarray, R: np.ndarray, **kw) -> FusionState:
    """Linear update with a row-selection H."""
    P = state.covariance
    PHt = P[:, rows]
    S = PHt[rows, :] + R
    K = np.linalg.solve(S, PHt.T).T
    x = state.x + K @ innovation
    P = P - K @ PHt.T
    P = 0.5 * (P + P.T)
    return state.with_vector(x, P, **kw)


_VEL = np.array([3, 4, 5])
_POS2 = np.array([0, 1])


def velocity_update(state: FusionState, meas: OdometryMeasurement, R_sigma: float,
                    limits: GateConfig | None = None, force: bool = False) -> FusionState:
    z = np.asarray(meas.C_b_n, dtype=float) @ np.asarray(meas.body_velocity, dtype=float)
    innovation = z - state.velocity
    if limits is not None and not force and not gate(innovation, limits.velocity):
        return replace(state, last_rejected=True, consecutive_rejections=state.consecutive_rejections + 1,
                       total_rejections=state.total_rejections + 1)
    return _kalman(state, _VEL, innovation, np.eye(3) * R_sigma**2, last_rejected=False, consecutive_rejections=0)


def position_update(state: FusionState, target_xy, sigma: float) -> FusionState:
    innovation = np.asarray(target_xy, dtype=float) - state.position[:2]
    return _kalman(state, _POS2, innovation, np.eye(2) * sigma**2)


def homing_update(state: FusionState, registered_pp, estimated_pp, sigma: float = 0.05,
                  full_state: bool = False, other_sigma: float = 0.05) -> FusionState:
    """Loop-closure correction from re-observing the registered plant.

    The pseudo-measurement is z = (R_x + dPP_x, R_y + dPP_y) with
    dPP = registered - estimated plant centre. With ``full_state`` the update
    also carries zero innovations on z and the velocities.
    """
    if registered_pp is None:
        raise PlantNotRegisteredError("no registered plant centre for homing")
    shift = np.asarray(registered_pp, dtype=float)[:2] - np.asarray(estimated_pp, dtype=float)[:2]
    if not full_state:
        return position_update(state, state.position[:2] + shift, sigma)
    innovation = np.concatenate([shift, np.zeros(4)])
    R = np.diag([sigma**2, sigma**2] + [other_sigma**2] * 4)
    return _kalman(state, np.arange(6), innovation, R)


def volatile_pseudo_update(state: FusionState, known_volatile_xy, estimated_ee_global_xy,
                           collected_mass: float, sigma: float = 0.1) -> FusionState:
    if not collected_mass > 0:
        raise ContractViolation("dig pseudo-measurement requires a successful dig")
    shift = np.asarray(known_volatile_xy, dtype=float)[:2] - np.asarray(estimated_ee_global_xy, dtype=float)[:2]
    return position_update(state, state.position[:2] + shift, sigma)


def horizontal_error(state: FusionState, truth_xy) -> float:
    return math.hypot(state.position[0] - truth_xy[0], state.position[1] - truth_xy[1])
