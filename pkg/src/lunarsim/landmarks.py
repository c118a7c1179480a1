"""Circle fitting of planar LiDAR returns off the cylindrical processing plant,
plant registration and plant-centre estimation for homing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .frames import rot_body_to_nav, wrap_angle


class DegenerateInputError(ValueError):
    pass


class NoFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    radius: float
    rms_residual: float

    def __iter__(self):
        return iter((self.center, self.radius, self.rms_residual))


@dataclass(frozen=True)
class LandmarkRegistry:
    pp_center_global: np.ndarray
    pp_radius: float
    registration_time: float
    registration_residual: float
    yaw_offset: float = 0.0  # global yaw minus spawn-frame yaw
    registration_pose: tuple | None = None  # true (x, y, z, roll, pitch, yaw) used for the scan


def fit_circle(points, geometric: bool = False) -> CircleFit:
    """Algebraic (Kasa) least-squares circle fit.

    Minimizes sum((|p - c|^2 - r^2)^2). Points are centred first, which keeps
    the fit translation-equivariant in floating point. ``geometric`` refines
    the algebraic answer by minimizing orthogonal distances.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateInputError("need at least 3 two-dimensional points")
    mean = pts.mean(axis=0)
    d = pts - mean
    A = np.column_stack([2.0 * d, np.ones(len(d))])
    scale = max(float(np.abs(d).max()), 1e-300)
    sv = np.linalg.svd(A / np.array([scale, scale, 1.0]), compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateInputError("points are collinear or coincident")
    b = np.sum(d * d, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c = sol[:2]
    r = math.sqrt(max(sol[2] + c @ c, 0.0))
    if geometric:
        def resid(p):
            return np.hypot(d[:, 0] - p[0], d[:, 1] - p[1]) - p[2]
        res = optimize.least_squares(resid, np.array([c[0], c[1], r]), method="lm")
        c, r = res.x[:2], abs(float(res.x[2]))
    rms = float(np.sqrt(np.mean((np.hypot(d[:, 0] - c[0], d[:, 1] - c[1]) - r) ** 2)))
    return CircleFit(c + mean, float(r), rms)


def scan_to_global(scan, position, phi: float, theta: float, psi: float) -> np.ndarray:
    """Global xy of finite returns of a planar scan taken at the given pose."""
    finite = np.isfinite(scan.ranges)
    ang = scan.angles[finite]
    rng = scan.ranges[finite]
    C = rot_body_to_nav(phi, theta, psi)
    body = np.vstack([rng * np.cos(ang), rng * np.sin(ang)])
    origin = np.asarray(position, dtype=float)[:2] + C[:2, 2] * scan.mount_height
    return (C[:2, :2] @ body).T + origin


def _segments(scan, jump: float = 0.5):
    """Index runs of consecutive finite returns without range jumps."""
    r = scan.ranges
    segs, cur = [], []
    for i in range(len(r)):
        if not np.isfinite(r[i]):
            if cur:
                segs.append(cur)
            cur = []
            continue
        if cur and abs(r[i] - r[cur[-1]]) > jump:
            segs.append(cur)
            cur = []
        cur.append(i)
    if cur:
        segs.append(cur)
    return segs


def _circle_through(p1, p2, p3):
    A = np.array([p2 - p1, p3 - p1]) * 2.0
    b = np.array([p2 @ p2 - p1 @ p1, p3 @ p3 - p1 @ p1])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if abs(det) < 1e-12:
        return None
    c = np.linalg.solve(A, b)
    return c, float(np.linalg.norm(p1 - c))


def extract_plant_points(scan, points_global: np.ndarray, plant_radius: float, *, n_triples: int = 50,
                         inlier_tol: float = 0.1, radius_band: float = 0.3, seed: int = 0) -> np.ndarray:
    """RANSAC-lite segmentation: circles through random triples drawn inside
    contiguous scan segments, kept only when their radius is within
    ``radius_band`` of the known plant radius; returns the best inlier set."""
    finite_idx = np.flatnonzero(np.isfinite(scan.ranges))
    pos_of = {int(i): k for k, i in enumerate(finite_idx)}
    segs = [[pos_of[i] for i in s] for s in _segments(scan) if len(s) >= 5]
    if not segs:
        return np.empty((0, 2))
    rng = np.random.default_rng(seed)
    weights = np.array([len(s) for s in segs], dtype=float)
    weights /= weights.sum()
    best = None
    for _ in range(n_triples):
        seg = segs[int(rng.choice(len(segs), p=weights))]
        pick = rng.choice(len(seg), size=3, replace=False)
        pick.sort()
        circ = _circle_through(*(points_global[seg[k]] for k in pick))
        if circ is None:
            continue
        c, r = circ
        if abs(r - plant_radius) > radius_band * plant_radius:
            continue
        resid = np.abs(np.hypot(*(points_global - c).T) - r)
        inliers = np.flatnonzero(resid < inlier_tol)
        if best is None or len(inliers) > len(best):
            best = inliers
    if best is None:
        return np.empty((0, 2))
    return points_global[best]


def visible_arc_deg(points: np.ndarray, center) -> float:
    if len(points) < 2:
        return 0.0
    ang = np.sort(np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0]))
    gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * math.pi]))
    return math.degrees(2 * math.pi - gaps.max())


def _fit_plant(scan, position, phi, theta, psi, plant_radius, min_arc_deg, seed, geometric=False):
    pts = scan_to_global(scan, position, phi, theta, psi)
    if len(pts) < 3:
        raise NoFitError("no LiDAR returns")
    plant_pts = extract_plant_points(scan, pts, plant_radius, seed=seed)
    if len(plant_pts) < 5:
        raise NoFitError("plant not found in scan")
    fit = fit_circle(plant_pts, geometric=geometric)
    if abs(fit.radius - plant_radius) > 0.3 * plant_radius:
        raise NoFitError(f"fitted radius {fit.radius:.2f} m inconsistent with plant")
    if visible_arc_deg(plant_pts, fit.center) < min_arc_deg:
        raise NoFitError("visible plant arc too small for a reliable fit")
    return fit


def register_plant(scan, truth_service, rover_id: str, attitude, plant_radius: float, *, time: float = 0.0,
                   min_arc_deg: float = 60.0, seed: int = 0, geometric: bool = False) -> LandmarkRegistry:
    """Register the plant centre using the one-shot true pose service.

    The scan is transformed with the true pose (x, y, z, roll, pitch, yaw);
    ``attitude`` is the spawn-frame attitude estimate at the same instant and
    fixes the spawn-to-global yaw offset. A second request by the same rover
    raises ServiceExhaustedError.
    """
    x, y, z, roll, pitch, yaw = truth_service.request(rover_id)
    fit = _fit_plant(scan, (x, y), roll, pitch, yaw, plant_radius, min_arc_deg, seed, geometric)
    offset = float(wrap_angle(yaw - attitude.psi)) if attitude is not None else 0.0
    return LandmarkRegistry(fit.center, fit.radius, time, fit.rms_residual, offset, (x, y, z, roll, pitch, yaw))


def estimate_plant_center(scan, attitude, position_est, plant_radius: float, *, yaw_offset: float = 0.0,
                          min_arc_deg: float = 60.0, seed: int = 0, geometric: bool = False) -> np.ndarray:
    """Plant centre in the global frame from the estimated pose.

    ``attitude`` is the spawn-frame estimate; ``yaw_offset`` converts it to
    global yaw. ``position_est`` is a FusionState or an xy pair.
    """
    pos = getattr(position_est, "position", position_est)
    psi = attitude.psi + yaw_offset
    fit = _fit_plant(scan, pos, attitude.phi, attitude.theta, psi, plant_radius, min_arc_deg, seed, geometric)
    return fit.center
