"""Seeded synthetic lunar world: terrain, entities, rover truth dynamics and
noisy multi-rate sensors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import WorldConfig
from .drive import WheelCommand, body_twist_from_wheels
from .frames import inverse_euler_rate_matrix, rot_body_to_nav, wrap_angle


class ServiceExhaustedError(RuntimeError):
    """The once-per-rover true pose service was already used."""


@dataclass
class Volatile:
    id: int
    type: int
    position: np.ndarray
    initial_mass: float
    remaining_mass: float
    scored: bool = False


@dataclass
class Obstacle:
    position: np.ndarray
    height: float
    radius: float


@dataclass
class RoverTruth:
    name: str
    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float
    spawn_yaw: float
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    body_rates: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wheel_speed: np.ndarray = field(default_factory=lambda: np.zeros(4))
    steering: np.ndarray = field(default_factory=lambda: np.zeros(4))
    command: WheelCommand = field(default_factory=WheelCommand)
    blocked: bool = False
    odometer: float = 0.0

    @property
    def pose(self):
        return (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)

    @property
    def ground_speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass
class LidarScan:
    angles: np.ndarray
    ranges: np.ndarray  # inf where no return
    max_range: float
    mount_height: float


@dataclass
class SensorFrame:
    timestamp: float
    imu_rates: np.ndarray | None = None
    imu_orientation: np.ndarray | None = None
    encoders: np.ndarray | None = None
    steering: np.ndarray | None = None
    vo_velocity: np.ndarray | None = None
    lidar_scan: LidarScan | None = None
    volatile_ping: tuple[int, int] | None = None
    volatile_sampled: bool = False

    @property
    def has_imu(self) -> bool:
        return self.imu_rates is not None


class TruthPoseService:
    """True pose oracle that answers once per rover per run."""

    def __init__(self, world: "WorldState"):
        self._world = world
        self._used: set[str] = set()

    def used(self, rover_id: str) -> bool:
        return rover_id in self._used

    def request(self, rover_id: str):
        if rover_id in self._used:
            raise ServiceExhaustedError(f"true pose already requested for {rover_id!r}")
        rover = self._world.rover(rover_id)
        self._used.add(rover_id)
        return rover.pose


@dataclass
class WorldState:
    config: WorldConfig
    sim_time: float
    rovers: dict[str, RoverTruth]
    volatiles: list[Volatile]
    obstacles: list[Obstacle]
    plant_center: np.ndarray
    plant_radius: float
    noise_rng: dict[str, np.random.Generator]
    last_sample: dict[str, dict[str, int]]
    hauler_bin_mass: float = 0.0
    truth_service: TruthPoseService | None = None
    _obstacle_xy: np.ndarray | None = None
    _obstacle_r: np.ndarray | None = None
    _blocking: np.ndarray | None = None

    def rover(self, rover_id: str) -> RoverTruth:
        try:
            return self.rovers[rover_id]
        except KeyError:
            raise KeyError(f"unknown rover {rover_id!r}") from None

    @property
    def obstacle_xy(self) -> np.ndarray:
        return self._obstacle_xy

    def in_bounds(self, xy, margin: float = 0.0) -> bool:
        e = self.config.map_half_extent - margin
        return abs(xy[0]) <= e and abs(xy[1]) <= e


# ---------------------------------------------------------------- terrain

class Terrain:
    """Analytic height field: Gaussian crater bowls with raised rims on top of
    a gentle undulation."""

    def __init__(self, config: WorldConfig):
        self.c = np.array([c.center for c in config.craters], dtype=float).reshape(-1, 2)
        self.r = np.array([c.radius for c in config.craters], dtype=float)
        self.d = np.array([c.depth for c in config.craters], dtype=float)
        self.slip_c = np.array([z.center for z in config.slip_zones], dtype=float).reshape(-1, 2)
        self.slip_r = np.array([z.radius for z in config.slip_zones], dtype=float)
        self.slip_f = np.array([z.slip_factor for z in config.slip_zones], dtype=float)
        self.dark_c = np.array([z.center for z in config.feature_poor_zones], dtype=float).reshape(-1, 2)
        self.dark_r = np.array([z.radius for z in config.feature_poor_zones], dtype=float)

    def height_and_gradient(self, x: float, y: float):
        h = 0.5 * math.sin(x / 23.0) * math.cos(y / 31.0)
        gx = 0.5 / 23.0 * math.cos(x / 23.0) * math.cos(y / 31.0)
        gy = -0.5 / 31.0 * math.sin(x / 23.0) * math.sin(y / 31.0)
        if len(self.r):
            dx = x - self.c[:, 0]
            dy = y - self.c[:, 1]
            dist = np.sqrt(dx * dx + dy * dy) + 1e-12
            R = self.r
            bowl = np.exp(-2.0 * (dist / R) ** 2)
            w = 0.25 * R
            rim = np.exp(-((dist - R) / w) ** 2)
            h += float(np.sum(self.d * (-bowl + 0.25 * rim)))
            dh_dd = self.d * (bowl * 4.0 * dist / R**2 - 0.25 * rim * 2.0 * (dist - R) / w**2)
            gx += float(np.sum(dh_dd * dx / dist))
            gy += float(np.sum(dh_dd * dy / dist))
        return h, gx, gy

    def height(self, x: float, y: float) -> float:
        return self.height_and_gradient(x, y)[0]

    def slope_deg(self, x: float, y: float) -> float:
        _, gx, gy = self.height_and_gradient(x, y)
        return math.degrees(math.atan(math.hypot(gx, gy)))

    def attitude(self, x: float, y: float, yaw: float):
        """(z, roll, pitch) of a rover resting on the terrain."""
        h, gx, gy = self.height_and_gradient(x, y)
        c, s = math.cos(yaw), math.sin(yaw)
        fwd = gx * c + gy * s
        left = -gx * s + gy * c
        pitch = -math.atan(fwd)
        roll = math.atan(left * math.cos(pitch))
        return h, roll, pitch

    def slip_factor(self, x: float, y: float) -> float:
        if not len(self.slip_r):
            return 0.0
        inside = (x - self.slip_c[:, 0]) ** 2 + (y - self.slip_c[:, 1]) ** 2 <= self.slip_r**2
        return float(self.slip_f[inside].max()) if inside.any() else 0.0

    def feature_poor(self, x: float, y: float) -> bool:
        if not len(self.dark_r):
            return False
        return bool(np.any((x - self.dark_c[:, 0]) ** 2 + (y - self.dark_c[:, 1]) ** 2 <= self.dark_r**2))


_TERRAIN_CACHE: dict[int, Terrain] = {}


def terrain_of(world_or_config) -> Terrain:
    cfg = getattr(world_or_config, "config", world_or_config)
    key = id(cfg)
    t = _TERRAIN_CACHE.get(key)
    if t is None or t._cfg is not cfg:
        t = Terrain(cfg)
        t._cfg = cfg
        _TERRAIN_CACHE[key] = t
    return t


# ---------------------------------------------------------------- building

def _sample_point(rng, extent, margin=2.0):
    return rng.uniform(-extent + margin, extent - margin, size=2)


def sample_volatile_positions(config: WorldConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """The generator's volatile placement law: mostly around craters, the rest
    uniform over the map. Exposed so route planning can fit a prior to it."""
    out = []
    E = config.map_half_extent
    craters = config.craters
    while len(out) < n:
        if craters and rng.random() < config.volatile_crater_fraction:
            c = craters[int(rng.integers(len(craters)))]
            p = np.array(c.center) + rng.normal(0.0, 0.7 * c.radius, size=2)
        else:
            p = _sample_point(rng, E)
        if abs(p[0]) <= E - 2.0 and abs(p[1]) <= E - 2.0:
            out.append(p)
    return np.array(out).reshape(-1, 2)


def build_world(config: WorldConfig) -> WorldState:
    config.validate()
    ss = np.random.SeedSequence(int(config.seed))
    place_seq, *rover_seqs = ss.spawn(1 + len(config.rovers))
    rng = np.random.default_rng(place_seq)
    E = config.map_half_extent
    terrain = terrain_of(config)

    ang = rng.uniform(0, 2 * math.pi)
    off = config.plant_offset_max * math.sqrt(rng.random())
    plant = np.array([off * math.cos(ang), off * math.sin(ang)])

    rovers = {}
    base_bearing = rng.uniform(0, 2 * math.pi)
    for i, name in enumerate(config.rovers):
        bearing = base_bearing + i * 2 * math.pi / max(len(config.rovers), 1) * 0.5
        dist = rng.uniform(*config.spawn_distance)
        xy = plant + dist * np.array([math.cos(bearing), math.sin(bearing)])
        yaw = float(wrap_angle(bearing + math.pi + rng.uniform(-0.25, 0.25)))
        z, roll, pitch = terrain.attitude(xy[0], xy[1], yaw)
        rovers[name] = RoverTruth(name, float(xy[0]), float(xy[1]), z, roll, pitch, yaw, spawn_yaw=yaw)

    vpos = sample_volatile_positions(config, rng, 4 * config.n_volatiles + 8)
    volatiles = []
    for p in vpos:
        if len(volatiles) == config.n_volatiles:
            break
        if np.linalg.norm(p - plant) < config.plant_radius + 3.0:
            continue
        if any(np.linalg.norm(p - v.position) < 3.0 for v in volatiles):
            continue
        vid = len(volatiles)
        volatiles.append(Volatile(vid, int(rng.integers(config.n_volatile_types)), p,
                                  config.volatile_mass, config.volatile_mass))

    obstacles = []
    spawn_xy = [np.array([r.x, r.y]) for r in rovers.values()]
    tries = 0
    while len(obstacles) < config.n_obstacles and tries < 100 * (config.n_obstacles + 1):
        tries += 1
        p = _sample_point(rng, E, 3.0)
        if np.linalg.norm(p - plant) < config.plant_radius + 6.0:
            continue
        if any(np.linalg.norm(p - s) < 5.0 for s in spawn_xy):
            continue
        if any(np.linalg.norm(p - v.position) < 3.0 for v in volatiles):
            continue
        if rng.random() < 0.35:
            height, radius = rng.uniform(0.03, 0.09), rng.uniform(0.3, 0.8)
        else:
            height, radius = rng.uniform(0.3, 0.9), rng.uniform(0.4, 1.2)
        obstacles.append(Obstacle(p, float(height), float(radius)))

    world = WorldState(
        config=config, sim_time=0.0, rovers=rovers, volatiles=volatiles, obstacles=obstacles,
        plant_center=plant, plant_radius=config.plant_radius,
        noise_rng={name: np.random.default_rng(seq) for name, seq in zip(config.rovers, rover_seqs)},
        last_sample={name: {} for name in config.rovers},
    )
    world._obstacle_xy = np.array([o.position for o in obstacles]).reshape(-1, 2)
    world._obstacle_r = np.array([o.radius for o in obstacles])
    world._blocking = np.array([o.height >= config.rock_blocking_height for o in obstacles], dtype=bool)
    world.truth_service = TruthPoseService(world)
    return world


# ---------------------------------------------------------------- dynamics

def _collides(world: WorldState, x: float, y: float, radius: float) -> bool:
    if (x - world.plant_center[0]) ** 2 + (y - world.plant_center[1]) ** 2 < (world.plant_radius + radius) ** 2:
        return True
    xy = world._obstacle_xy
    if len(xy):
        d2 = (xy[:, 0] - x) ** 2 + (xy[:, 1] - y) ** 2
        hit = (d2 < (world._obstacle_r + radius) ** 2) & world._blocking
        if hit.any():
            return True
    return False


def step_world(world: WorldState, commands: dict, dt: float) -> WorldState:
    """Advance the truth by ``dt``. Mutates and returns ``world``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = world.config
    terrain = terrain_of(cfg)
    E = cfg.map_half_extent - 1.0
    for name, rv in world.rovers.items():
        cmd = commands.get(name)
        if cmd is not None:
            rv.command = cmd
        cmd = rv.command
        rv.steering = np.clip(cmd.steering, -math.pi / 2, math.pi / 2)
        rv.wheel_speed = cfg.motor.step(rv.wheel_speed, cmd.wheel_speed, dt, cmd.brake_torque_limit)
        if cmd.brake_torque_limit > 0:
            rv.wheel_speed = np.where(np.abs(rv.wheel_speed) < 1e-3, 0.0, rv.wheel_speed)
        vx, vy, omega = body_twist_from_wheels(rv.steering, rv.wheel_speed, cfg.geometry)
        keep = 1.0 - terrain.slip_factor(rv.x, rv.y)
        vx *= keep
        vy *= keep
        speed = math.hypot(vx, vy)
        if speed > cfg.max_speed:
            vx *= cfg.max_speed / speed
            vy *= cfg.max_speed / speed

        old = np.array([rv.roll, rv.pitch, rv.yaw])
        yaw_mid = rv.yaw + 0.5 * omega * dt
        C = rot_body_to_nav(rv.roll, rv.pitch, yaw_mid)
        nx = rv.x + (C[0, 0] * vx + C[0, 1] * vy) * dt
        ny = rv.y + (C[1, 0] * vx + C[1, 1] * vy) * dt
        blocked = abs(nx) > E or abs(ny) > E or _collides(world, nx, ny, cfg.rover_radius)
        if blocked:
            vx = vy = 0.0
            nx, ny = rv.x, rv.y
        rv.blocked = blocked
        rv.odometer += math.hypot(nx - rv.x, ny - rv.y)
        rv.x, rv.y = nx, ny
        rv.yaw = float(wrap_angle(rv.yaw + omega * dt))
        rv.z, rv.roll, rv.pitch = terrain.attitude(rv.x, rv.y, rv.yaw)
        rates = wrap_angle(np.array([rv.roll, rv.pitch, rv.yaw]) - old) / dt
        rv.body_rates = inverse_euler_rate_matrix(old[0], old[1]) @ rates
        rv.vx, rv.vy, rv.omega = vx, vy, omega
    world.sim_time += dt
    return world


# ---------------------------------------------------------------- sensors

def sensor_mount_xy(rv: RoverTruth, lever_arm) -> np.ndarray:
    c, s = math.cos(rv.yaw), math.sin(rv.yaw)
    return np.array([rv.x + c * lever_arm[0] - s * lever_arm[1], rv.y + s * lever_arm[0] + c * lever_arm[1]])


def _due(world: WorldState, rover_id: str, channel: str, rate: float) -> bool:
    idx = int(math.floor(world.sim_time * rate + 1e-6))
    last = world.last_sample[rover_id].get(channel, -1)
    if idx > last:
        world.last_sample[rover_id][channel] = idx
        return True
    return False


def raycast_lidar(world: WorldState, rv: RoverTruth, rng=None) -> LidarScan:
    cfg = world.config.lidar
    half = math.radians(cfg.fov_deg) / 2
    angles = np.linspace(-half, half, cfg.n_beams)
    C = rot_body_to_nav(rv.roll, rv.pitch, rv.yaw)
    dirs = C[:2, :2] @ np.vstack([np.cos(angles), np.sin(angles)])  # horizontal components
    origin = np.array([rv.x, rv.y]) + C[:2, 2] * cfg.mount_height
    centers = [world.plant_center]
    radii = [world.plant_radius]
    if len(world._obstacle_xy):
        d = np.hypot(world._obstacle_xy[:, 0] - origin[0], world._obstacle_xy[:, 1] - origin[1])
        near = world._blocking & (d < cfg.max_range + world._obstacle_r)
        centers.extend(world._obstacle_xy[near])
        radii.extend(world._obstacle_r[near])
    centers = np.array(centers).reshape(-1, 2)
    radii = np.asarray(radii, dtype=float)
    oc = origin[None, :] - centers                                # (m, 2)
    a = np.sum(dirs * dirs, axis=0)                               # (n,)
    b = oc @ dirs                                                 # (m, n)
    cc = np.sum(oc * oc, axis=1) - radii**2                       # (m,)
    disc = b * b - a[None, :] * cc[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(np.where(disc >= 0, disc, np.nan))) / a[None, :]
    t = np.where((disc >= 0) & (t > 0), t, np.inf)
    ranges = t.min(axis=0)
    ranges[ranges > cfg.max_range] = np.inf
    if rng is not None and world.config.noise_sigmas.lidar > 0:
        finite = np.isfinite(ranges)
        ranges[finite] += rng.normal(0.0, world.config.noise_sigmas.lidar, int(finite.sum()))
    return LidarScan(angles, ranges, cfg.max_range, cfg.mount_height)


def sample_sensors(world: WorldState, rover_id: str) -> SensorFrame:
    rv = world.rover(rover_id)
    cfg = world.config
    rates = cfg.sensor_rates
    sig = cfg.noise_sigmas
    rng = world.noise_rng[rover_id]
    terrain = terrain_of(cfg)
    frame = SensorFrame(timestamp=world.sim_time)
    if _due(world, rover_id, "imu", rates.imu_hz):
        frame.imu_rates = cfg.gyro_sign * rv.body_rates + rng.normal(0.0, sig.gyro, 3)
        rel = np.array([rv.roll, rv.pitch, rv.yaw - rv.spawn_yaw]) + rng.normal(0.0, sig.orientation, 3)
        frame.imu_orientation = wrap_angle(rel)
    if _due(world, rover_id, "encoders", rates.encoder_hz):
        frame.encoders = rv.wheel_speed + rng.normal(0.0, sig.encoder, 4)
        frame.steering = rv.steering.copy()
    if _due(world, rover_id, "camera", rates.camera_hz):
        noise = rng.normal(0.0, sig.vo, 3)
        if not terrain.feature_poor(rv.x, rv.y):
            frame.vo_velocity = np.array([rv.vx, rv.vy, 0.0]) + noise
    if _due(world, rover_id, "lidar", rates.lidar_hz):
        frame.lidar_scan = raycast_lidar(world, rv, rng)
    if _due(world, rover_id, "volatile", rates.volatile_hz):
        frame.volatile_sampled = True
        frame.volatile_ping = volatile_in_range(world, rv)
    return frame


def volatile_in_range(world: WorldState, rv: RoverTruth):
    if not world.volatiles:
        return None
    mount = sensor_mount_xy(rv, world.config.volatile_lever_arm)
    best, best_d = None, world.config.volatile_range
    for v in world.volatiles:
        if v.scored:
            continue
        d = math.hypot(v.position[0] - mount[0], v.position[1] - mount[1])
        if d <= best_d:
            best, best_d = v, d
    return None if best is None else (best.id, best.type)


# ---------------------------------------------------------------- volatiles

def dig_at(world: WorldState, bucket_tip_global, scoop_capacity_fraction: float):
    """Scoop at a global 2D position. Returns (collected_mass, volatile_id|None)."""
    if not 0.0 < scoop_capacity_fraction <= 0.5:
        raise ValueError("scoop_capacity_fraction must lie in (0, 0.5]")
    tip = np.asarray(bucket_tip_global, dtype=float)[:2]
    tol = world.config.dig_tolerance
    best, best_d = None, None
    for v in world.volatiles:
        if v.remaining_mass <= 0:
            continue
        d = float(np.hypot(*(v.position - tip)))
        if d <= tol and (best_d is None or d < best_d):
            best, best_d = v, d
    if best is None:
        return 0.0, None
    capacity = scoop_capacity_fraction * best.initial_mass
    if world.config.dig_mode == "proportional":
        capacity *= 1.0 - best_d / tol
    collected = min(capacity, best.remaining_mass)
    best.remaining_mass -= collected
    return collected, best.id


def score_report(world: WorldState, volatile_id: int, volatile_type: int, xy) -> bool:
    """Competition scoring oracle: right id/type and within the report accuracy."""
    if not 0 <= volatile_id < len(world.volatiles):
        return False
    v = world.volatiles[volatile_id]
    if v.scored or v.type != volatile_type:
        return False
    if np.hypot(*(v.position - np.asarray(xy, dtype=float))) <= world.config.report_accuracy:
        v.scored = True
        return True
    return False
