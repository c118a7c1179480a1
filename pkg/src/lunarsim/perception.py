"""Ground-truth object detector and point-cloud obstacle segmentation.

The detector stands in for a learned one: it reads entities out of the world
and returns them with a class label and a synthetic surface point cloud, so
the downstream clustering and traversability logic runs on the same kind of
data a stereo pipeline would provide.

Camera frame: x forward (optical axis projected on the ground), y left,
z up, origin on the ground below the camera.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

CLASSES = ("plant", "rock", "crater", "rover", "volatile_surface")
MAX_DEPTH = 1000.0


@dataclass(frozen=True)
class DetectorConfig:
    fov_deg: float = 90.0
    max_range: float = 15.0
    range_sigma: float = 0.0
    bearing_sigma: float = 0.0
    point_sigma: float = 0.0
    dropout: float = 0.0
    points_per_object: int = 60
    confidence: tuple = (0.6, 0.99)


@dataclass
class Detection:
    cls: str
    range: float
    bearing: float
    confidence: float
    point_cloud: np.ndarray


@dataclass
class ObstacleCluster:
    points: np.ndarray
    centroid: np.ndarray = field(init=False)
    normal: np.ndarray = field(init=False)
    footprint_radius: float = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.centroid = self.points.mean(axis=0)
        self.normal = plane_normal(self.points)
        d = self.points[:, :2] - self.centroid[:2]
        self.footprint_radius = float(np.sqrt((d * d).sum(axis=1)).max()) if len(d) else 0.0

    @property
    def height(self) -> float:
        return float(self.centroid[2])

    @property
    def normal_angle(self) -> float:
        """Angle of the fitted plane normal from vertical, radians."""
        return math.acos(min(1.0, abs(float(self.normal[2]))))


def plane_normal(points: np.ndarray) -> np.ndarray:
    """Least-squares plane normal: eigenvector of the scatter matrix with the
    smallest eigenvalue, oriented upward. Vertical for fewer than 3 points."""
    if len(points) < 3:
        return np.array([0.0, 0.0, 1.0])
    d = points - points.mean(axis=0)
    w, v = np.linalg.eigh(d.T @ d)
    n = v[:, 0]
    if n[2] < 0:
        n = -n
    return n / np.linalg.norm(n)


def _rock_surface(center, height, radius, n, rng):
    """Points on a spherical cap resting on the ground."""
    R = (radius**2 + height**2) / (2.0 * height)
    z0 = height - R
    u = rng.uniform(0.0, 1.0, n)
    az = rng.uniform(0.0, 2.0 * math.pi, n)
    cos_max = -z0 / R
    polar = np.arccos(1.0 - u * (1.0 - cos_max))
    pts = np.column_stack([R * np.sin(polar) * np.cos(az), R * np.sin(polar) * np.sin(az), z0 + R * np.cos(polar)])
    pts[:, :2] += center
    pts[:, 2] = np.maximum(pts[:, 2], 0.0)
    return pts


def _cylinder_surface(center, radius, height, n, rng):
    az = rng.uniform(0.0, 2.0 * math.pi, n)
    z = rng.uniform(0.0, height, n)
    return np.column_stack([center[0] + radius * np.cos(az), center[1] + radius * np.sin(az), z])


def detect(world, rover_id: str, camera_tilt: float = 0.0, config: DetectorConfig = DetectorConfig(),
           rng: np.random.Generator | None = None) -> list:
    """Entities of the world inside the camera cone, with camera-frame point clouds.

    ``camera_tilt`` narrows the usable range: a camera pitched down by
    ``camera_tilt`` sees the ground out to mount_height / tan(tilt).
    """
    rv = world.rover(rover_id)
    if rng is None:
        rng = np.random.default_rng(0)
    max_range = min(config.max_range, MAX_DEPTH)
    if camera_tilt > 0:
        max_range = min(max_range, world.config.lidar.mount_height / math.tan(camera_tilt) + 5.0)
    half = math.radians(config.fov_deg) / 2
    c, s = math.cos(rv.yaw), math.sin(rv.yaw)
    origin = np.array([rv.x, rv.y])

    entities = [("plant", world.plant_center, world.plant_radius, 3.0)]
    for o in world.obstacles:
        entities.append(("rock", o.position, o.radius, o.height))
    for name, other in world.rovers.items():
        if name != rover_id:
            entities.append(("rover", np.array([other.x, other.y]), 0.8, 0.8))

    out = []
    for cls, pos, radius, height in entities:
        d = np.asarray(pos, dtype=float) - origin
        rng_true = math.hypot(*d)
        if rng_true > max_range + radius or rng_true < 1e-9:
            continue
        bearing = math.atan2(-s * d[0] + c * d[1], c * d[0] + s * d[1])
        if abs(bearing) > half:
            continue
        if config.dropout > 0 and rng.random() < config.dropout:
            continue
        if cls == "rock":
            pts = _rock_surface(np.asarray(pos, dtype=float), height, radius, config.points_per_object, rng)
        else:
            pts = _cylinder_surface(np.asarray(pos, dtype=float), radius, height, config.points_per_object, rng)
        # keep the camera-facing half
        facing = (pts[:, :2] - pos) @ (-d / rng_true) >= -1e-9
        pts = pts[facing] if facing.any() else pts
        rel = pts[:, :2] - origin
        cam = np.column_stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1], pts[:, 2]])
        if config.point_sigma > 0:
            cam = cam + rng.normal(0.0, config.point_sigma, cam.shape)
        cam = cam[cam[:, 0] < MAX_DEPTH]
        r_meas = rng_true + (rng.normal(0.0, config.range_sigma) if config.range_sigma > 0 else 0.0)
        b_meas = bearing + (rng.normal(0.0, config.bearing_sigma) if config.bearing_sigma > 0 else 0.0)
        conf = float(rng.uniform(*config.confidence))
        out.append(Detection(cls, r_meas, b_meas, conf, cam))
    return out


def cluster_points(points, d_cluster: float = 0.3) -> list:
    """Euclidean clustering: connected components of the graph linking points
    closer than ``d_cluster``. Clusters are returned in a canonical order
    (lexicographic by smallest point) so the result does not depend on the
    input order."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return []
    pairs = cKDTree(pts).query_pairs(d_cluster, output_type="ndarray")
    n = len(pts)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups = []
    for lab in np.unique(labels):
        member = pts[labels == lab]
        order = np.lexsort(member.T[::-1])
        groups.append(member[order])
    groups.sort(key=lambda g: tuple(g[0]))
    return [ObstacleCluster(g) for g in groups]


def filter_obstacles(clusters, height_threshold: float = 0.1, angle_threshold_deg: float = 5.0,
                     mode: str = "and") -> list:
    """Keep the non-traversable clusters. Clusters with fewer than 3 points
    cannot be plane-fitted and are kept as obstacles."""
    if mode not in ("and", "or"):
        raise ValueError(f"unknown mode {mode!r}")
    thr = math.radians(angle_threshold_deg)
    kept = []
    for cl in clusters:
        if len(cl.points) < 3:
            kept.append(cl)
            continue
        tall = cl.height > height_threshold
        tilted = cl.normal_angle > thr
        if (tall and tilted) if mode == "and" else (tall or tilted):
            kept.append(cl)
    return kept


def detections_to_points(detections, classes=("rock",)) -> np.ndarray:
    clouds = [d.point_cloud for d in detections if d.cls in classes and len(d.point_cloud)]
    return np.vstack(clouds) if clouds else np.empty((0, 3))


def camera_to_global(points: np.ndarray, x: float, y: float, yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    out = points.copy()
    out[:, 0] = x + c * points[:, 0] - s * points[:, 1]
    out[:, 1] = y + s * points[:, 0] + c * points[:, 1]
    return out
