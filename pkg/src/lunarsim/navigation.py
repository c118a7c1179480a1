"""Waypoint generation from a Gaussian-mixture prior, costmap path planning,
pure-pursuit path following and immobility detection."""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .drive import MAX_SPEED, BodyCommand


class PlanFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- GMM prior

@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray        # (K, 2)
    covariances: np.ndarray  # (K, 2, 2)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("GMM weights must be non-negative and sum to 1")
        for C in np.asarray(self.covariances):
            if not np.allclose(C, C.T) or np.linalg.eigvalsh(C).min() <= 0:
                raise ValueError("GMM covariances must be symmetric positive definite")

    @property
    def k(self) -> int:
        return len(self.weights)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.k, size=n, p=self.weights)
        L = np.linalg.cholesky(self.covariances)
        z = rng.standard_normal((n, 2))
        return self.means[comp] + np.einsum("nij,nj->ni", L[comp], z)

    def pdf(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.zeros(len(pts))
        for w, m, C in zip(self.weights, self.means, self.covariances):
            d = pts - m
            Ci = np.linalg.inv(C)
            out += w * np.exp(-0.5 * np.einsum("ni,ij,nj->n", d, Ci, d)) / (2 * math.pi * math.sqrt(np.linalg.det(C)))
        return out


def fit_gmm(points, k: int = 5, seed: int = 0) -> GmmModel:
    """Expectation-maximization fit (scikit-learn) of a full-covariance mixture."""
    from sklearn.mixture import GaussianMixture

    gm = GaussianMixture(n_components=k, covariance_type="full", random_state=seed, reg_covar=1e-3)
    gm.fit(np.asarray(points, dtype=float))
    w = gm.weights_ / gm.weights_.sum()
    order = np.lexsort(gm.means_.T[::-1])
    return GmmModel(w[order], gm.means_[order], gm.covariances_[order])


def prior_gmm(config, n_trials: int = 20, k: int = 5, seed_offset: int = 100_000) -> GmmModel:
    """Mixture fit to volatile placements of prior trials (seeds disjoint from the run)."""
    from .world import sample_volatile_positions

    pts = []
    for i in range(n_trials):
        rng = np.random.default_rng(seed_offset + i)
        pts.append(sample_volatile_positions(config, rng, config.n_volatiles))
    return fit_gmm(np.vstack(pts), k=k, seed=0)


# ---------------------------------------------------------------- routes

@dataclass(frozen=True)
class Region:
    id: int
    angle_lo: float
    angle_hi: float
    polygon: np.ndarray

    def contains(self, xy, center) -> bool:
        a = math.atan2(xy[1] - center[1], xy[0] - center[0]) % (2 * math.pi)
        return self.angle_lo <= a < self.angle_hi


def sector_regions(center, half_extent: float, n: int = 5) -> list:
    """Partition the map into ``n`` angular sectors about ``center``."""
    regions = []
    far = 3.0 * half_extent
    for i in range(n):
        lo, hi = 2 * math.pi * i / n, 2 * math.pi * (i + 1) / n
        arc = np.linspace(lo, hi, 8)
        poly = np.vstack([np.asarray(center, dtype=float),
                          np.column_stack([center[0] + far * np.cos(arc), center[1] + far * np.sin(arc)])])
        poly = np.clip(poly, -half_extent, half_extent)
        regions.append(Region(i + 1, lo, hi, poly))
    return regions


@dataclass(frozen=True)
class Route:
    waypoints: np.ndarray   # start anchor, sampled waypoints, end anchor
    region_id: int
    priority: float         # mean terrain slope along the route, degrees; lower runs first

    @property
    def n_sampled(self) -> int:
        return len(self.waypoints) - 2

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


def _nn_chain(start, pts: np.ndarray) -> np.ndarray:
    order, left = [], list(range(len(pts)))
    cur = np.asarray(start, dtype=float)
    while left:
        d = [float(np.hypot(*(pts[j] - cur))) for j in left]
        j = left.pop(int(np.argmin(d)))
        order.append(j)
        cur = pts[j]
    return pts[order]


def route_slope(waypoints, terrain, step: float = 2.0) -> float:
    samples = []
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        n = max(int(np.hypot(*(b - a)) / step), 1)
        for t in np.arange(n) / n:
            p = a + t * (b - a)
            samples.append(terrain.slope_deg(p[0], p[1]))
    return float(np.mean(samples)) if samples else 0.0


def waypoint_reachable(waypoint, obstacles, inflation: float = 0.0) -> bool:
    """False iff the waypoint lies in a closed, inflated obstacle footprint.

    ``obstacles`` holds ObstacleCluster objects (global frame) or
    (center_xy, radius) pairs.
    """
    wx, wy = float(waypoint[0]), float(waypoint[1])
    for ob in obstacles:
        if hasattr(ob, "centroid"):
            c, r = ob.centroid, ob.footprint_radius
        else:
            c, r = ob
        if math.hypot(wx - c[0], wy - c[1]) <= r + inflation:
            return False
    return True


def generate_routes(gmm: GmmModel, regions, n_waypoints: int = 100, seed: int = 0, *, center=(0.0, 0.0),
                    center_radius: float = 8.0, half_extent: float = 100.0, obstacles=(),
                    inflation: float = 0.8, terrain=None, margin: float = 3.0, notices: list | None = None) -> list:
    """Sample the mixture, split the samples by region and chain each region's
    samples into a route that leaves from and returns to the map centre."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    pts = []
    lim = half_extent - margin
    while len(pts) < n_waypoints:
        for p in gmm.sample(max(n_waypoints, 16), rng):
            if len(pts) == n_waypoints:
                break
            if abs(p[0]) > lim or abs(p[1]) > lim:
                continue
            if np.hypot(*(p - center)) < center_radius:
                continue
            if not waypoint_reachable(p, obstacles, inflation):
                continue
            pts.append(p)
    pts = np.array(pts)
    routes = []
    for reg in regions:
        mine = np.array([p for p in pts if reg.contains(p, center)]).reshape(-1, 2)
        if len(mine) == 0:
            if notices is not None:
                notices.append(f"region {reg.id} has no waypoints; route skipped")
            continue
        mid = 0.5 * (reg.angle_lo + reg.angle_hi)
        anchor = center + 0.9 * center_radius * np.array([math.cos(mid), math.sin(mid)])
        chain = _nn_chain(anchor, mine)
        wps = np.vstack([anchor, chain, anchor])
        prio = route_slope(wps, terrain) if terrain is not None else 0.0
        routes.append(Route(wps, reg.id, prio))
    routes.sort(key=lambda r: (r.priority, r.region_id))
    return routes


# ---------------------------------------------------------------- costmap

@dataclass
class Costmap:
    origin: np.ndarray       # world xy of cell (0, 0) corner
    resolution: float
    lethal: np.ndarray       # bool (ny, nx)
    penalty: np.ndarray      # float (ny, nx), >= 0
    inflation_radius: float = 0.8

    @classmethod
    def empty(cls, half_extent: float, resolution: float = 0.5, inflation_radius: float = 0.8) -> "Costmap":
        n = int(math.ceil(2 * half_extent / resolution))
        return cls(np.array([-half_extent, -half_extent]), resolution, np.zeros((n, n), dtype=bool),
                   np.zeros((n, n)), inflation_radius)

    @property
    def shape(self):
        return self.lethal.shape

    def to_cell(self, xy):
        ix = int(math.floor((xy[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((xy[1] - self.origin[1]) / self.resolution))
        return iy, ix

    def to_world(self, cell) -> np.ndarray:
        iy, ix = cell
        return self.origin + (np.array([ix, iy]) + 0.5) * self.resolution

    def inside(self, cell) -> bool:
        return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

    def add_obstacle(self, center, radius: float, soft_margin: float = 1.0, soft_cost: float = 2.0):
        """Mark a footprint inflated by the rover radius as lethal, with a
        linearly decaying penalty band around it."""
        r_lethal = radius + self.inflation_radius
        r_soft = r_lethal + soft_margin
        res = self.resolution
        iy0, ix0 = self.to_cell((center[0] - r_soft, center[1] - r_soft))
        iy1, ix1 = self.to_cell((center[0] + r_soft, center[1] + r_soft))
        iy0, ix0 = max(iy0, 0), max(ix0, 0)
        iy1, ix1 = min(iy1, self.shape[0] - 1), min(ix1, self.shape[1] - 1)
        if iy1 < iy0 or ix1 < ix0:
            return
        ys = self.origin[1] + (np.arange(iy0, iy1 + 1) + 0.5) * res
        xs = self.origin[0] + (np.arange(ix0, ix1 + 1) + 0.5) * res
        d = np.hypot(xs[None, :] - center[0], ys[:, None] - center[1])
        self.lethal[iy0:iy1 + 1, ix0:ix1 + 1] |= d <= r_lethal
        soft = np.clip((r_soft - d) / soft_margin, 0.0, 1.0) * soft_cost
        sub = self.penalty[iy0:iy1 + 1, ix0:ix1 + 1]
        np.maximum(sub, soft, out=sub)

    def blocked(self, xy) -> bool:
        c = self.to_cell(xy)
        return (not self.inside(c)) or bool(self.lethal[c])


_MOVES = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
SQRT2 = math.sqrt(2.0)


def edge_cost(costmap: Costmap, step_len_cells: float, to_cell) -> float:
    """Traversal cost of one grid move: metric length scaled by the destination
    penalty. Shared by the planner and its tests' Dijkstra oracle."""
    return step_len_cells * costmap.resolution * (1.0 + costmap.penalty[to_cell])


@dataclass
class PlanResult:
    path: np.ndarray        # simplified polyline, world frame
    cells: list             # raw 8-connected cell path
    cost: float


def _line_cells(a, b):
    """Every grid cell the segment between two cell centres touches (exact
    grid traversal; a pass through a cell corner includes both side cells)."""
    y, x = a
    dy, dx = b[0] - a[0], b[1] - a[1]
    sy, sx = (dy > 0) - (dy < 0), (dx > 0) - (dx < 0)
    ny, nx = abs(dy), abs(dx)
    out = [(y, x)]
    iy = ix = 0
    while iy < ny or ix < nx:
        # compare the next vertical and horizontal boundary crossings: (2*ix+1)/(2*nx) vs (2*iy+1)/(2*ny)
        d = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
        if d == 0:
            out.append((y + sy, x))
            out.append((y, x + sx))
            y, x = y + sy, x + sx
            iy, ix = iy + 1, ix + 1
        elif d < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        out.append((y, x))
    return out


def _shortcut(costmap: Costmap, cells: list) -> list:
    if len(cells) <= 2:
        return list(cells)
    keep = [cells[0]]
    i = 0
    while i < len(cells) - 1:
        j = len(cells) - 1
        while j > i + 1:
            line = _line_cells(cells[i], cells[j])
            if not any(costmap.lethal[c] for c in line) and max(costmap.penalty[c] for c in line) <= \
                    max(costmap.penalty[cells[i]], costmap.penalty[cells[j]]):
                break
            j -= 1
        keep.append(cells[j])
        i = j
    return keep


def plan_path(start, goal, costmap: Costmap, *, simplify: bool = True, max_expansions: int = 400_000) -> PlanResult:
    """8-connected A* with the octile heuristic (admissible because every edge
    costs at least its metric length)."""
    s = costmap.to_cell(start)
    g = costmap.to_cell(goal)
    if not costmap.inside(s) or not costmap.inside(g):
        raise PlanFailure("start or goal outside the costmap")
    if costmap.lethal[g]:
        raise PlanFailure("goal inside an obstacle")
    res = costmap.resolution
    lethal = costmap.lethal
    ny, nx = lethal.shape

    def h(c):
        dy, dx = abs(c[0] - g[0]), abs(c[1] - g[1])
        return res * ((dx + dy) + (SQRT2 - 2.0) * min(dx, dy))

    best = {s: 0.0}
    parent = {s: None}
    heap = [(h(s), 0.0, s)]
    closed = set()
    expansions = 0
    while heap:
        f, cost, c = heapq.heappop(heap)
        if c in closed:
            continue
        if c == g:
            break
        closed.add(c)
        expansions += 1
        if expansions > max_expansions:
            raise PlanFailure("search budget exhausted")
        for dy, dx in _MOVES:
            n = (c[0] + dy, c[1] + dx)
            if not (0 <= n[0] < ny and 0 <= n[1] < nx) or lethal[n] or n in closed:
                continue
            step = SQRT2 if dy and dx else 1.0
            nc = cost + edge_cost(costmap, step, n)
            if nc < best.get(n, math.inf):
                best[n] = nc
                parent[n] = c
                heapq.heappush(heap, (nc + h(n), nc, n))
    if g not in best:
        raise PlanFailure("goal unreachable")
    cells = []
    c = g
    while c is not None:
        cells.append(c)
        c = parent[c]
    cells.reverse()
    keep = _shortcut(costmap, cells) if simplify else cells
    path = np.array([costmap.to_world(c) for c in keep])
    path[0] = np.asarray(start, dtype=float)[:2]
    path[-1] = np.asarray(goal, dtype=float)[:2]
    return PlanResult(path, cells, best[g])


def path_length(path) -> float:
    path = np.asarray(path)
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))) if len(path) > 1 else 0.0


# ---------------------------------------------------------------- path following

@dataclass(frozen=True)
class PursuitConfig:
    lookahead: float = 2.0
    cruise: float = 1.0
    slow_radius: float = 3.0
    min_speed: float = 0.2
    point_turn_angle: float = math.radians(60.0)
    turn_gain: float = 1.2
    max_omega: float = 0.6
    min_turn_radius: float = 0.8


def _closest_on_path(xy, path):
    best = (math.inf, 0, 0.0)
    for i in range(len(path) - 1):
        a, b = path[i], path[i + 1]
        ab = b - a
        L2 = float(ab @ ab)
        t = 0.0 if L2 == 0 else min(1.0, max(0.0, float((xy - a) @ ab) / L2))
        d = float(np.hypot(*(a + t * ab - xy)))
        if d < best[0]:
            best = (d, i, t)
    return best


def lookahead_point(xy, path, lookahead: float) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    if len(path) == 1:
        return path[0]
    _, i, t = _closest_on_path(xy, path)
    p = path[i] + t * (path[i + 1] - path[i])
    remaining = lookahead
    while i < len(path) - 1:
        seg = path[i + 1] - p
        L = float(np.hypot(*seg))
        if L >= remaining:
            return p + seg * (remaining / L)
        remaining -= L
        i += 1
        p = path[i]
    return path[-1]


def follow_path(pose_est, path, lookahead: float | None = None, cfg: PursuitConfig = PursuitConfig()) -> BodyCommand:
    """Pure pursuit toward the lookahead point; turns in place when the
    point is more than ``point_turn_angle`` off the nose."""
    x, y, yaw = float(pose_est[0]), float(pose_est[1]), float(pose_est[2])
    Ld = cfg.lookahead if lookahead is None else lookahead
    xy = np.array([x, y])
    path = np.asarray(path, dtype=float)
    target = lookahead_point(xy, path, Ld)
    d = target - xy
    dist = float(np.hypot(*d))
    if dist < 1e-9:
        return BodyCommand()
    alpha = math.atan2(d[1], d[0]) - yaw
    alpha = (alpha + math.pi) % (2 * math.pi) - math.pi
    if abs(alpha) > cfg.point_turn_angle:
        return BodyCommand(0.0, math.copysign(min(cfg.max_omega, cfg.turn_gain * abs(alpha)), alpha))
    to_goal = float(np.hypot(*(path[-1] - xy)))
    v = min(cfg.cruise, MAX_SPEED)
    if to_goal < cfg.slow_radius:
        v = max(cfg.min_speed, v * to_goal / cfg.slow_radius)
    omega = 2.0 * v * math.sin(alpha) / max(dist, 1e-6)
    limit = min(cfg.max_omega, v / cfg.min_turn_radius)
    omega = max(-limit, min(limit, omega))
    return BodyCommand(v, omega)


# ---------------------------------------------------------------- immobility

class TriggerKind(enum.Enum):
    SLIP = "slip"
    SLOPE = "slope"
    STUCK = "stuck"


@dataclass(frozen=True)
class RecoveryTrigger:
    kind: TriggerKind
    evidence: float


@dataclass(frozen=True)
class ImmobilityConfig:
    slip_threshold: float = 0.5
    slip_window: float = 2.0
    slope_limit: float = math.radians(35.0)
    stuck_range: float = 0.8
    stuck_speed: float = 0.05
    stuck_window: float = 2.0


def detect_immobility(vo_vel, wo_vel, pitch: float, forward_ranges, *, commanded_v: float = 0.0,
                      speed_proxy: float | None = None, slip_elapsed: float | None = None,
                      stuck_elapsed: float | None = None, cfg: ImmobilityConfig = ImmobilityConfig()):
    """Apply the three recovery rules in the order slope, slip, stuck.

    ``slip_elapsed`` / ``stuck_elapsed`` say how long the respective condition
    has held; None means "treat as sustained". Returns (trigger or None,
    slip_check_skipped).
    """
    if abs(pitch) > cfg.slope_limit:
        return RecoveryTrigger(TriggerKind.SLOPE, abs(pitch)), False
    skipped = vo_vel is None or wo_vel is None
    if not skipped:
        diff = float(np.linalg.norm(np.asarray(wo_vel, dtype=float) - np.asarray(vo_vel, dtype=float)))
        if diff > cfg.slip_threshold and (slip_elapsed is None or slip_elapsed >= cfg.slip_window):
            return RecoveryTrigger(TriggerKind.SLIP, diff), False
    if commanded_v > 0 and forward_ranges is not None and len(forward_ranges):
        rmin = float(np.min(forward_ranges))
        slow = speed_proxy is None or speed_proxy < cfg.stuck_speed
        if rmin < cfg.stuck_range and slow and (stuck_elapsed is None or stuck_elapsed >= cfg.stuck_window):
            return RecoveryTrigger(TriggerKind.STUCK, rmin), skipped
    return None, skipped


class ImmobilityDetector:
    """Keeps the timers that turn instantaneous conditions into sustained ones."""

    def __init__(self, cfg: ImmobilityConfig = ImmobilityConfig()):
        self.cfg = cfg
        self.slip_since = None
        self.stuck_since = None
        self.skipped_ticks = 0

    def reset(self):
        self.slip_since = None
        self.stuck_since = None

    def update(self, t: float, vo_vel, wo_vel, pitch: float, forward_ranges, commanded_v: float,
               speed_proxy: float | None):
        cfg = self.cfg
        if vo_vel is not None and wo_vel is not None:
            diff = float(np.linalg.norm(np.asarray(wo_vel) - np.asarray(vo_vel)))
            if diff > cfg.slip_threshold:
                self.slip_since = t if self.slip_since is None else self.slip_since
            else:
                self.slip_since = None
        rmin = float(np.min(forward_ranges)) if forward_ranges is not None and len(forward_ranges) else math.inf
        slow = speed_proxy is None or speed_proxy < cfg.stuck_speed
        if commanded_v > 0 and rmin < cfg.stuck_range and slow:
            self.stuck_since = t if self.stuck_since is None else self.stuck_since
        else:
            self.stuck_since = None
        trig, skipped = detect_immobility(
            vo_vel, wo_vel, pitch, forward_ranges, commanded_v=commanded_v, speed_proxy=speed_proxy,
            slip_elapsed=-1.0 if self.slip_since is None else t - self.slip_since,
            stuck_elapsed=-1.0 if self.stuck_since is None else t - self.stuck_since, cfg=cfg)
        if skipped:
            self.skipped_ticks += 1
        return trig
