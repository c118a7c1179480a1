"""Attitude EKF over (phi, theta, psi, p, q, r).

The gyro rates drive the propagation: each predict overwrites the rate states
with the new measurement and then integrates the Euler-angle kinematics

    angles' = angles + rate_sign * dt * E(phi, theta) @ (p, q, r)

The default ``rate_sign = -1`` is the coupling sign of the printed transition
matrix (its zero-state form is [[I, -dt*I], [0, I]]); the simulated IMU uses
the same convention. Orientation measurements are absolute in the spawn frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .frames import euler_rate_matrix, wrap_angle

GIMBAL_GUARD = math.radians(80.0)
_H = np.hstack([np.eye(3), np.zeros((3, 3))])


class GimbalLockError(ArithmeticError):
    pass


@dataclass(frozen=True)
class AttitudeNoiseConfig:
    sigma_m: float = 0.005
    sigma_p: float = 0.001
    dt_imu: float = 0.01
    sigma_gyro: float = 0.002

    def __post_init__(self):
        if min(self.sigma_m, self.sigma_p, self.dt_imu, self.sigma_gyro) <= 0:
            raise ValueError("attitude noise parameters must be positive")


@dataclass(frozen=True)
class AttitudeState:
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0
    p: float = 0.0
    q: float = 0.0
    r: float = 0.0
    covariance: np.ndarray = field(default_factory=lambda: np.eye(6) * 1e-4)
    last_update_time: float = 0.0
    rejected: bool = False

    @property
    def x(self) -> np.ndarray:
        return np.array([self.phi, self.theta, self.psi, self.p, self.q, self.r])

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.phi, self.theta, self.psi])

    @classmethod
    def from_vector(cls, x, covariance, **kw) -> "AttitudeState":
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]), float(x[4]), float(x[5]),
                   covariance, **kw)


def propagate(x: np.ndarray, dt: float, rate_sign: float = -1.0) -> np.ndarray:
    """Euler-angle propagation map with the rate states held constant."""
    phi, theta = x[0], x[1]
    out = np.array(x, dtype=float)
    out[:3] = x[:3] + rate_sign * dt * (euler_rate_matrix(phi, theta) @ x[3:6])
    return out


def transition_jacobian(x: np.ndarray, dt: float, rate_sign: float = -1.0) -> np.ndarray:
    """Analytic Jacobian of :func:`propagate`."""
    phi, theta = float(x[0]), float(x[1])
    q, r = float(x[4]), float(x[5])
    sf, cf = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    tt = st / ct
    a = sf * q + cf * r
    b = cf * q - sf * r
    k = rate_sign * dt
    F = np.eye(6)
    F[0, 0] += k * b * tt
    F[0, 1] = k * a / ct**2
    F[1, 0] = -k * a
    F[2, 0] = k * b / ct
    F[2, 1] = k * a * st / ct**2
    F[0:3, 3:6] = k * euler_rate_matrix(phi, theta)
    return F


def printed_transition_matrix(x: np.ndarray, dt: float) -> np.ndarray:
    """The transition matrix entry-for-entry as published, with a unit diagonal.

    Kept for the consistency study only; it is not the Jacobian of any
    propagation map (e.g. the q coupling of the roll row uses tan(phi)).
    """
    phi, theta = float(x[0]), float(x[1])
    q, r = float(x[4]), float(x[5])
    sf, cf = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    tt = st / ct
    A = np.zeros((6, 6))
    A[0] = [cf * tt * q - sf * tt * r, sf / ct**2 * q + cf / ct**2 * r, 0, -1, -sf * math.tan(phi), -sf]
    A[1] = [sf * q + cf * r, 0, 0, 0, -cf, sf]
    A[2] = [cf / ct * q - sf / ct * r, sf / ct**2 * q + cf * st * r, 0, -sf / ct, 0, -cf / ct]
    return np.eye(6) + dt * A


def att_predict(state: AttitudeState, rates, dt_imu: float, noise: AttitudeNoiseConfig = AttitudeNoiseConfig(),
                rate_sign: float = -1.0, jacobian: str = "analytic") -> AttitudeState:
    if not dt_imu > 0:
        raise ValueError("dt_imu must be positive")
    if abs(state.theta) >= GIMBAL_GUARD:
        raise GimbalLockError(f"pitch {math.degrees(state.theta):.1f} deg at gimbal guard")
    x = state.x
    x[3:6] = rates
    P = state.covariance.copy()
    P[3:6, :] = 0.0
    P[:, 3:6] = 0.0
    P[3:6, 3:6] = np.eye(3) * noise.sigma_gyro**2
    if jacobian == "analytic":
        F = transition_jacobian(x, dt_imu, rate_sign)
    elif jacobian == "printed":
        F = printed_transition_matrix(x, dt_imu)
    else:
        raise ValueError(f"unknown jacobian {jacobian!r}")
    x = propagate(x, dt_imu, rate_sign)
    x[:3] = wrap_angle(x[:3])
    P = F @ P @ F.T + np.eye(6) * noise.sigma_p**2
    P = 0.5 * (P + P.T)
    return AttitudeState.from_vector(x, P, last_update_time=state.last_update_time + dt_imu)


def att_update(state: AttitudeState, rel_orientation_meas, noise: AttitudeNoiseConfig = AttitudeNoiseConfig()) -> AttitudeState:
    z = np.asarray(rel_orientation_meas, dtype=float)
    if z.shape != (3,) or not np.all(np.isfinite(z)):
        return replace(state, rejected=True)
    x = state.x
    P = state.covariance
    y = wrap_angle(z - x[:3])
    S = P[:3, :3] + np.eye(3) * noise.sigma_m**2
    K = np.linalg.solve(S, P[:3, :]).T  # P H^T S^-1, S symmetric
    x = x + K @ y
    x[:3] = wrap_angle(x[:3])
    P = P - K @ P[:3, :]
    P = 0.5 * (P + P.T)
    return AttitudeState.from_vector(x, P, last_update_time=state.last_update_time)
