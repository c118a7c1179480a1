"""Rotation and angle helpers shared by the world model and the estimators.

Conventions: global frame x east, y north, z up; body frame x forward,
y left, z up; Euler angles are ZYX (yaw about z, then pitch about y, then
roll about x).
"""
from __future__ import annotations

import math

import numpy as np


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    if isinstance(a, (float, int)):
        w = (a + math.pi) % (2.0 * math.pi) - math.pi
        return math.pi if w == -math.pi else float(w)
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def rot_body_to_nav(phi: float, theta: float, psi: float) -> np.ndarray:
    """C_b^n for ZYX Euler angles."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def rot2(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s], [s, c]])


def euler_rate_matrix(phi: float, theta: float) -> np.ndarray:
    """Maps body rates (p, q, r) to ZYX Euler angle rates."""
    sf, cf = math.sin(phi), math.cos(phi)
    tt, ct = math.tan(theta), math.cos(theta)
    return np.array([
        [1.0, sf * tt, cf * tt],
        [0.0, cf, -sf],
        [0.0, sf / ct, cf / ct],
    ])


def inverse_euler_rate_matrix(phi: float, theta: float) -> np.ndarray:
    """Maps ZYX Euler angle rates to body rates (p, q, r)."""
    sf, cf = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    return np.array([
        [1.0, 0.0, -st],
        [0.0, cf, sf * ct],
        [0.0, -sf, cf * ct],
    ])
