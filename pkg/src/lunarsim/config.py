"""World configuration and YAML loading.

The terrain layout (craters, slip zones, shadowed zones) is a fixed map shared
by every seed; the seed only randomizes volatiles, rocks, plant and spawn
poses. See ``scenarios/default.yaml`` for the file schema.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .drive import RoverGeometry, WheelMotorModel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Crater:
    center: tuple[float, float]
    radius: float
    depth: float


@dataclass(frozen=True)
class SlipZone:
    center: tuple[float, float]
    radius: float
    slip_factor: float


@dataclass(frozen=True)
class FeaturePoorZone:
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class SensorRates:
    imu_hz: float = 100.0
    encoder_hz: float = 50.0
    camera_hz: float = 10.0
    lidar_hz: float = 10.0
    volatile_hz: float = 10.0


@dataclass(frozen=True)
class NoiseSigmas:
    gyro: float = 0.002          # rad/s
    orientation: float = 0.005   # rad
    encoder: float = 0.05        # rad/s per wheel
    vo: float = 0.04             # m/s per axis
    lidar: float = 0.02          # m


@dataclass(frozen=True)
class LidarConfig:
    fov_deg: float = 270.0
    n_beams: int = 271
    max_range: float = 30.0
    mount_height: float = 0.5


DEFAULT_CRATERS = (
    Crater((55.0, 20.0), 18.0, 3.0),
    Crater((8.0, 62.0), 15.0, 2.5),
    Crater((-52.0, 30.0), 20.0, 3.5),
    Crater((-42.0, -48.0), 16.0, 3.0),
    Crater((30.0, -58.0), 17.0, 3.0),
)

DEFAULT_SLIP_ZONES = (
    SlipZone((55.0, 20.0), 19.0, 0.40),
    SlipZone((8.0, 62.0), 16.0, 0.35),
    SlipZone((-52.0, 30.0), 21.0, 0.45),
    SlipZone((-42.0, -48.0), 17.0, 0.40),
    SlipZone((30.0, -58.0), 18.0, 0.35),
    SlipZone((-10.0, -30.0), 8.0, 0.30),
    SlipZone((35.0, 45.0), 8.0, 0.30),
)

DEFAULT_FEATURE_POOR_ZONES = (
    FeaturePoorZone((40.0, 5.0), 9.0),
    FeaturePoorZone((-30.0, 48.0), 9.0),
    FeaturePoorZone((-55.0, -30.0), 8.0),
    FeaturePoorZone((45.0, -42.0), 8.0),
    FeaturePoorZone((25.0, 55.0), 7.0),
    FeaturePoorZone((-25.0, -10.0), 7.0),
    # shadowed boulder fields on open ground between the craters
    FeaturePoorZone((22.0, 22.0), 8.0),
    FeaturePoorZone((-22.0, 18.0), 8.0),
    FeaturePoorZone((15.0, -28.0), 8.0),
    FeaturePoorZone((0.0, -45.0), 7.0),
    FeaturePoorZone((-75.0, 0.0), 8.0),
    FeaturePoorZone((78.0, -10.0), 8.0),
)


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    map_half_extent: float = 100.0
    n_volatiles: int = 28
    n_obstacles: int = 60
    plant_radius: float = 2.5
    plant_offset_max: float = 10.0
    craters: tuple[Crater, ...] = DEFAULT_CRATERS
    slip_zones: tuple[SlipZone, ...] = DEFAULT_SLIP_ZONES
    feature_poor_zones: tuple[FeaturePoorZone, ...] = DEFAULT_FEATURE_POOR_ZONES
    sensor_rates: SensorRates = field(default_factory=SensorRates)
    noise_sigmas: NoiseSigmas = field(default_factory=NoiseSigmas)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    duration: float = 2700.0
    rovers: tuple[str, ...] = ("scout",)
    geometry: RoverGeometry = field(default_factory=RoverGeometry)
    motor: WheelMotorModel = field(default_factory=WheelMotorModel)
    max_speed: float = 1.5
    rover_radius: float = 0.8
    rock_blocking_height: float = 0.25
    spawn_distance: tuple[float, float] = (9.0, 12.0)
    # simulated gyro sign convention; must match the attitude filter's rate_sign
    gyro_sign: float = -1.0
    volatile_range: float = 2.0
    volatile_lever_arm: tuple[float, float] = (0.6, 0.0)
    volatile_mass: float = 1.0
    n_volatile_types: int = 8
    volatile_crater_fraction: float = 0.75
    dig_tolerance: float = 0.4
    dig_mode: str = "all_or_nothing"
    report_accuracy: float = 2.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.map_half_extent > 0:
            raise ConfigError("map_half_extent must be positive")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if self.plant_radius <= 0:
            raise ConfigError("plant_radius must be positive")
        for name in ("imu_hz", "encoder_hz", "camera_hz", "lidar_hz", "volatile_hz"):
            if not getattr(self.sensor_rates, name) > 0:
                raise ConfigError(f"sensor rate {name} must be positive")
        for name in ("n_volatiles", "n_obstacles", "n_volatile_types"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for z in self.slip_zones:
            if not 0.0 <= z.slip_factor <= 1.0:
                raise ConfigError("slip_factor must lie in [0, 1]")
        if self.dig_mode not in ("all_or_nothing", "proportional"):
            raise ConfigError(f"unknown dig_mode {self.dig_mode!r}")
        if not self.rovers:
            raise ConfigError("at least one rover is required")
        for n in dataclasses.asdict(self.noise_sigmas).values():
            if n < 0 or not math.isfinite(n):
                raise ConfigError("noise sigmas must be finite and non-negative")


def from_dict(cls, data):
    """Build a (possibly nested) frozen dataclass from plain YAML data."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _coerce(tp, value):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value)
    if origin is tuple:
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v) for v in value)
        return tuple(_coerce(a, v) for a, v in zip(args, value))
    if origin is typing.Union or origin is getattr(__import__("types"), "UnionType", None):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _coerce(args[0], value)
    if tp is float:
        return float(value)
    if tp is int:
        return int(value)
    return value


def load_yaml(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def load_world_config(path, **overrides) -> WorldConfig:
    data = load_yaml(path)
    world = dict(data.get("world", data))
    world.update(overrides)
    return from_dict(WorldConfig, world)


@dataclass(frozen=True)
class EstimatorConfig:
    mode: str = "viwo"               # wio | vo | viwo
    sigma_accel: float = 0.5         # fusion process noise, m/s^2
    sigma_wo: float = 0.05           # wheel-odometry velocity noise, m/s
    sigma_vo: float = 0.05           # visual-odometry velocity noise, m/s
    gate_velocity: float = 2.0       # m/s per axis, above the 1.5 m/s top speed
    gate_position: float = 25.0      # m per axis
    gate_reset_after: int = 5        # consecutive wheel rejections tolerated without VO
    slip_threshold: float = 0.2      # |WO - VO| above which a wheel reading is treated as slip, m/s
    sigma_homing: float = 0.05
    sigma_dig: float = 0.1
    homing_full_state: bool = False
    sigma_m: float = 0.005
    sigma_p: float = 0.001
    sigma_gyro: float = 0.002
    jacobian: str = "analytic"
    rate_sign: float = -1.0

    def __post_init__(self):
        if self.mode not in ("wio", "vo", "viwo"):
            raise ConfigError(f"unknown estimator mode {self.mode!r}")
        if self.jacobian not in ("analytic", "printed"):
            raise ConfigError(f"unknown jacobian {self.jacobian!r}")


@dataclass(frozen=True)
class MissionConfig:
    tick: float = 0.02
    imu_substeps: int = 2
    n_waypoints: int = 100
    center_radius: float = 9.0
    homing: bool = True
    gmm_components: int = 5
    gmm_trials: int = 20
    cruise_speed: float = 1.0
    lookahead: float = 2.0
    waypoint_tolerance: float = 1.0
    perception_hz: float = 1.0
    costmap_resolution: float = 0.5
    report_min_delay: float = 15.0
    report_max_delay: float = 30.0
    max_report_attempts: int = 5
    drift_interpolation: bool = True
    excavation_timeout: float = 300.0
    hauler_timeout: float = 120.0
    dig_standoff: float = 1.7
    arm_mount: tuple[float, float] = (0.5, 0.0)
    hauler_park_distance: float = 4.0
    hauler_tolerance: float = 0.6
    arm_motion_time: float = 4.0
    scoop_fraction: float = 0.5
    log_interval: float = 1.0

    def __post_init__(self):
        if not self.tick > 0 or self.imu_substeps < 1:
            raise ConfigError("tick must be positive and imu_substeps at least 1")
        if not 0.0 < self.scoop_fraction <= 0.5:
            raise ConfigError("scoop_fraction must lie in (0, 0.5]")
        if self.report_min_delay > self.report_max_delay:
            raise ConfigError("report_min_delay exceeds report_max_delay")


@dataclass(frozen=True)
class Scenario:
    world: WorldConfig = field(default_factory=WorldConfig)
    mission: MissionConfig = field(default_factory=MissionConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)


def load_scenario(path=None, **world_overrides) -> Scenario:
    """Scenario file with optional ``world``, ``mission`` and ``estimator``
    sections. A file without sections is read as a bare world section."""
    data = load_yaml(path) if path is not None else {}
    if data and not set(data) <= {"world", "mission", "estimator"}:
        data = {"world": data}
    world = data.get("world") or {}
    if not isinstance(world, dict):
        raise ConfigError("the world section must be a mapping")
    world = {**world, **world_overrides}
    return Scenario(from_dict(WorldConfig, world), from_dict(MissionConfig, data.get("mission")),
                    from_dict(EstimatorConfig, data.get("estimator")))
