"""Rover agents: per-rover localization, driving, perception and the task
behaviours of the scout (task 1) and the excavator/hauler pair (task 2)."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import arm as armk
from .attitude import AttitudeNoiseConfig, AttitudeState, GimbalLockError, att_predict, att_update
from .config import EstimatorConfig, MissionConfig, Scenario
from .drive import BodyCommand, body_twist_from_wheels, brake, command_wheels
from .frames import rot_body_to_nav, wrap_angle
from .fusion import (FusionState, GateConfig, OdometryKind, OdometryMeasurement, fusion_predict, homing_update,
                     initial_state, velocity_update, volatile_pseudo_update)
from .landmarks import LandmarkRegistry, NoFitError, estimate_plant_center, register_plant
from .mission import (Event, ExcavationCycle, ExcEvent, MissionState, ReportChannel, TopState, actively_sensing,
                      apply_homing_correction, attempt_report, handle_volatile_ping, step_mission)
from .navigation import (Costmap, ImmobilityDetector, PlanFailure, PursuitConfig, follow_path, generate_routes,
                         path_length, plan_path, prior_gmm, sector_regions, waypoint_reachable)
from .perception import (DetectorConfig, camera_to_global, cluster_points, detect, detections_to_points,
                         filter_obstacles)
from .world import dig_at, score_report, terrain_of

_GMM_CACHE: dict = {}


def cached_prior(world_cfg, trials: int, k: int):
    key = (world_cfg.craters, world_cfg.n_volatiles, world_cfg.map_half_extent,
           world_cfg.volatile_crater_fraction, trials, k)
    if key not in _GMM_CACHE:
        _GMM_CACHE[key] = prior_gmm(world_cfg, n_trials=trials, k=k)
    return _GMM_CACHE[key]


class Localizer:
    """Attitude EKF feeding the position/velocity EKF, with the velocity
    sources selected by the estimator mode."""

    def __init__(self, cfg: EstimatorConfig, geometry, position, yaw_offset: float, imu_dt: float):
        self.cfg = cfg
        self.geometry = geometry
        self.noise = AttitudeNoiseConfig(cfg.sigma_m, cfg.sigma_p, imu_dt, cfg.sigma_gyro)
        self.att = AttitudeState()
        self.yaw_offset = yaw_offset
        self.fus: FusionState = initial_state(position, 0.02, 0.02)
        self.gate = GateConfig(cfg.gate_velocity, cfg.gate_position)
        self.use_wo = cfg.mode in ("wio", "viwo")
        self.use_vo = cfg.mode in ("vo", "viwo")
        self.last_vo_time = -math.inf
        self.wo_body = None
        self.vo_body = None
        self.gimbal_faults = 0
        self.rejections = {OdometryKind.VO: 0, OdometryKind.WO: 0}
        self.gate_resets = 0
        self.slip_rejections = 0

    def seed_attitude(self, orientation):
        self.att = replace(self.att, phi=float(orientation[0]), theta=float(orientation[1]),
                           psi=float(orientation[2]))

    @property
    def yaw(self) -> float:
        return float(wrap_angle(self.att.psi + self.yaw_offset))

    @property
    def global_attitude(self):
        return self.att.phi, self.att.theta, self.yaw

    def C_b_n(self) -> np.ndarray:
        return rot_body_to_nav(self.att.phi, self.att.theta, self.yaw)

    @property
    def pose(self) -> np.ndarray:
        return np.array([self.fus.position[0], self.fus.position[1], self.yaw])

    def process(self, frame, dt: float):
        if frame.imu_rates is not None:
            try:
                self.att = att_predict(self.att, frame.imu_rates, self.noise.dt_imu, self.noise,
                                       rate_sign=self.cfg.rate_sign, jacobian=self.cfg.jacobian)
            except GimbalLockError:
                self.gimbal_faults += 1
            self.att = att_update(self.att, frame.imu_orientation, self.noise)
        self.fus = fusion_predict(self.fus, dt, self.cfg.sigma_accel)
        C = None
        if frame.vo_velocity is not None:
            self.vo_body = np.asarray(frame.vo_velocity, dtype=float)
            self.last_vo_time = frame.timestamp
            if self.use_vo:
                C = self.C_b_n()
                self._velocity(OdometryMeasurement(OdometryKind.VO, self.vo_body, C, frame.timestamp),
                               self.cfg.sigma_vo, may_reset=True)
        if frame.encoders is not None:
            vx, vy, _ = body_twist_from_wheels(frame.steering, frame.encoders, self.geometry)
            self.wo_body = np.array([vx, vy, 0.0])
            if self.use_wo:
                C = self.C_b_n() if C is None else C
                # with fresh VO, a wheel reading that disagrees with it is slip: skip it, never force it
                vo_recent = self.use_vo and frame.timestamp - self.last_vo_time < 0.25
                if vo_recent and np.linalg.norm(self.wo_body - self.vo_body) > self.cfg.slip_threshold:
                    self.rejections[OdometryKind.WO] += 1
                    self.slip_rejections += 1
                    return
                self._velocity(OdometryMeasurement(OdometryKind.WO, self.wo_body, C, frame.timestamp),
                               self.cfg.sigma_wo, may_reset=not vo_recent)

    def _velocity(self, meas, sigma: float, may_reset: bool):
        kind = meas.kind
        self.fus = velocity_update(self.fus, meas, sigma, self.gate)
        if not self.fus.last_rejected:
            self.rejections[kind] = 0
            return
        self.rejections[kind] += 1
        if may_reset and self.rejections[kind] >= self.cfg.gate_reset_after:
            self.fus = velocity_update(self.fus, meas, sigma, force=True)
            self.rejections[kind] = 0
            self.gate_resets += 1


class RoverAgent:
    """Shared driving, perception and estimation plumbing."""

    def __init__(self, name: str, world, scenario: Scenario, log, seed: int, task: int):
        self.name = name
        self.world = world
        self.scn = scenario
        self.mc: MissionConfig = scenario.mission
        self.log = log
        self.task = task
        self.rng = np.random.default_rng([seed, sum(name.encode())])
        self.mission = MissionState(task=task)
        self.audit: list = []
        self.loc: Localizer | None = None
        self.registry = None
        self.costmap = Costmap.empty(world.config.map_half_extent, self.mc.costmap_resolution,
                                     world.config.rover_radius)
        self.known_obstacles: list = []
        self.detector = ImmobilityDetector()
        self.pursuit = PursuitConfig(lookahead=self.mc.lookahead, cruise=self.mc.cruise_speed)
        self.path = None
        self.goal = None
        self.traverse_deadline = math.inf
        self.last_scan = None
        self.scan_time = -1.0
        self.last_frame_orientation = None
        self.next_perception = 0.0
        self.command = BodyCommand()
        self.brake = False
        self.busy_until = -1.0
        self.recovery = None
        self.recoveries_here = 0
        self.homing = None
        self.homing_count = 0
        self.homing_log: list = []
        self.paths_log: list = []
        self.goal_tolerance = self.mc.waypoint_tolerance
        self.trigger = None

    # -------------------------------------------------------------- events

    def fire(self, event, t: float, **info):
        before = self.mission
        self.mission = step_mission(self.mission, event, t, self.audit)
        rec = {"t": round(t, 3), "rover": self.name, "event": event.value, "from": before.label,
               "to": self.mission.label}
        rec.update(info)
        self.log(rec)

    def note(self, time: float, kind: str, **info):
        info.pop("t", None)
        rec = {"t": round(time, 3), "rover": self.name, "kind": kind}
        rec.update(info)
        self.log(rec)

    # -------------------------------------------------------------- sensing

    def sense(self, frame, dt: float):
        if frame.imu_orientation is not None:
            self.last_frame_orientation = frame.imu_orientation
        if self.loc is not None:
            self.loc.process(frame, dt)
        if frame.lidar_scan is not None:
            self.last_scan = frame.lidar_scan
            self.scan_time = frame.timestamp
        self.on_frame(frame)

    def on_frame(self, frame):
        pass

    def initialize(self, t: float) -> bool:
        """Register the plant with the one-shot true pose and start the estimator."""
        if self.last_scan is None or self.last_frame_orientation is None:
            return False
        att0 = AttitudeState(*[float(a) for a in self.last_frame_orientation])
        try:
            reg = register_plant(self.last_scan, self.world.truth_service, self.name, att0,
                                 self.world.config.plant_radius, time=t, seed=int(self.rng.integers(1 << 30)))
        except NoFitError as exc:
            # the pose was already handed out; fall back to the nominal plant geometry
            self.note(t, "registration_failed", reason=str(exc))
            pose = self.world.rover(self.name).pose
            reg = LandmarkRegistry(np.array(self.world.plant_center, dtype=float), self.world.plant_radius, t,
                                   0.0, float(wrap_angle(pose[5] - att0.psi)), pose)
        pose = reg.registration_pose
        self.registry = reg
        imu_dt = 1.0 / self.world.config.sensor_rates.imu_hz
        self.loc = Localizer(self.scn.estimator, self.world.config.geometry, [pose[0], pose[1], pose[2]],
                             reg.yaw_offset, imu_dt)
        self.loc.seed_attitude(self.last_frame_orientation)
        self.costmap.add_obstacle(reg.pp_center_global, reg.pp_radius)
        self.note(t, "registered", pp_x=float(reg.pp_center_global[0]), pp_y=float(reg.pp_center_global[1]),
                  residual=float(reg.registration_residual))
        self.fire(Event.A, t)
        return True

    def perceive(self, t: float):
        if t < self.next_perception or self.loc is None:
            return
        self.next_perception = t + 1.0 / self.mc.perception_hz
        dets = detect(self.world, self.name, 0.0, DetectorConfig(), self.rng)
        pts = detections_to_points(dets, ("rock",))
        if not len(pts):
            return
        x, y, yaw = self.loc.pose
        glob = camera_to_global(pts, x, y, yaw)
        added = False
        for cl in filter_obstacles(cluster_points(glob)):
            c = cl.centroid[:2]
            if any(math.hypot(c[0] - o[0][0], c[1] - o[0][1]) < 1.0 for o in self.known_obstacles):
                continue
            r = max(cl.footprint_radius, 0.3)
            self.known_obstacles.append((c.copy(), r))
            self.costmap.add_obstacle(c, r)
            added = True
        if added and self.path is not None and self.mission.state is TopState.TRAVERSE:
            if self._path_blocked():
                self.fire(Event.D, t, reason="path_blocked")
                self.path = None

    def _path_blocked(self) -> bool:
        path = self.path
        for a, b in zip(path[:-1], path[1:]):
            n = max(int(np.hypot(*(b - a)) / (0.5 * self.costmap.resolution)), 1)
            for s in np.linspace(0.0, 1.0, n + 1):
                p = a + s * (b - a)
                if np.hypot(*(p - self.loc.pose[:2])) < 1.0:
                    continue
                if self.costmap.blocked(p):
                    return True
        return False

    def forward_ranges(self):
        if self.last_scan is None:
            return None
        m = np.abs(self.last_scan.angles) < math.radians(30.0)
        return self.last_scan.ranges[m]

    # -------------------------------------------------------------- motion

    def plan_to(self, goal, t: float) -> bool:
        try:
            res = plan_path(self.loc.pose[:2], goal, self.costmap)
        except PlanFailure as exc:
            self.fire(Event.D, t, reason=str(exc))
            return False
        self.path = res.path
        self.goal = np.asarray(goal, dtype=float)
        self.traverse_deadline = t + 2.5 * path_length(res.path) / self.mc.cruise_speed + 30.0
        self.paths_log.append((t, self.name, res.path))
        self.detector.reset()
        self.fire(Event.B, t)
        return True

    def drive_path(self, t: float) -> str:
        """Follow the current path. Returns 'moving', 'arrived', 'stuck' or 'timeout'."""
        pose = self.loc.pose
        if np.hypot(*(self.goal - pose[:2])) < self.goal_tolerance:
            self.command = BodyCommand()
            return "arrived"
        if t > self.traverse_deadline:
            self.command = BodyCommand()
            return "timeout"
        self.command = follow_path(pose, self.path, cfg=self.pursuit)
        rv_pitch = self.loc.att.theta
        vo = None if self.loc.vo_body is None or t - self.loc.last_vo_time > 0.25 else self.loc.vo_body
        speed = None if vo is None else float(np.hypot(vo[0], vo[1]))
        trig = self.detector.update(t, vo, self.loc.wo_body, rv_pitch, self.forward_ranges(), self.command.v, speed)
        if trig is not None:
            self.trigger = trig
            return "stuck"
        return "moving"

    def turn_to(self, yaw_target: float, tol: float = math.radians(3.0)) -> bool:
        err = float(wrap_angle(yaw_target - self.loc.yaw))
        if abs(err) < tol:
            self.command = BodyCommand()
            return True
        self.command = BodyCommand(0.0, math.copysign(min(0.5, max(0.1, 1.2 * abs(err))), err))
        return False

    def start_recovery(self, t: float):
        left = right = 0.0
        if self.last_scan is not None:
            a, r = self.last_scan.angles, np.where(np.isfinite(self.last_scan.ranges), self.last_scan.ranges, 30.0)
            left = float(r[(a > 0) & (a < math.pi / 2)].mean())
            right = float(r[(a < 0) & (a > -math.pi / 2)].mean())
        turn = math.radians(45.0) if left >= right else -math.radians(45.0)
        self.recovery = {"phase": "backup", "until": t + 1.5 / 0.4, "yaw": float(wrap_angle(self.loc.yaw + turn))}
        self.recoveries_here += 1

    def step_recovery(self, t: float) -> bool:
        rc = self.recovery
        if rc["phase"] == "backup":
            if t < rc["until"]:
                self.command = BodyCommand(-0.4, 0.0)
                return False
            rc["phase"] = "turn"
            rc["until"] = t + 15.0
        if self.turn_to(rc["yaw"]) or t > rc["until"]:
            self.recovery = None
            return True
        return False

    # -------------------------------------------------------------- homing

    def start_homing(self, t: float):
        self.homing = {"phase": "turn", "t0": t}

    def step_homing(self, t: float):
        """Face the registered plant, take a fresh scan and apply the homing
        update. Returns None while in progress, else the homing record."""
        h = self.homing
        reg = self.registry
        pose = self.loc.pose
        if h["phase"] == "turn":
            bearing = math.atan2(reg.pp_center_global[1] - pose[1], reg.pp_center_global[0] - pose[0])
            if self.turn_to(bearing, math.radians(5.0)) or t - h["t0"] > 20.0:
                h["phase"] = "scan"
                h["after"] = t
            return None
        self.command = BodyCommand()
        if self.scan_time <= h["after"] + 1e-9:
            return None
        self.homing = None
        rv = self.world.rover(self.name)
        truth = np.array([rv.x, rv.y])
        before = self.loc.fus.position[:2].copy()
        err_before = float(np.hypot(*(before - truth)))
        try:
            est_pp = estimate_plant_center(self.last_scan, self.loc.att, self.loc.fus, reg.pp_radius,
                                           yaw_offset=self.loc.yaw_offset, seed=int(self.rng.integers(1 << 30)))
        except NoFitError as exc:
            rec = {"t": t, "ok": False, "reason": str(exc), "err_before": err_before}
            self.note(t, "homing_failed", reason=str(exc))
            return rec
        fit_err = float(np.hypot(*(est_pp - (reg.pp_center_global + (before - truth)))))
        self.loc.fus = homing_update(self.loc.fus, reg.pp_center_global, est_pp, self.scn.estimator.sigma_homing,
                                     full_state=self.scn.estimator.homing_full_state)
        after = self.loc.fus.position[:2].copy()
        err_after = float(np.hypot(*(after - truth)))
        self.homing_count += 1
        rec = {"t": t, "ok": True, "err_before": err_before, "err_after": err_after, "fit_error": fit_err,
               "drift_x": float(after[0] - before[0]), "drift_y": float(after[1] - before[1])}
        self.homing_log.append(rec)
        self.note(t, "homing", **{k: (round(v, 6) if isinstance(v, float) else v) for k, v in rec.items() if k != "t"})
        return rec

    # -------------------------------------------------------------- tick

    def body_command(self):
        if self.brake:
            return brake(100.0)
        return command_wheels(self.command, self.world.config.geometry)


class ScoutAgent(RoverAgent):
    """Task 1: explore GMM routes, record volatiles, report them, home at the plant."""

    def __init__(self, name, world, scenario, log, seed, report_rng_seed=None):
        super().__init__(name, world, scenario, log, seed, task=1)
        self.records: dict = {}
        self.epoch = 0
        self.epoch_odometer = 0.0
        self.odometer_est = 0.0
        self._last_xy = None
        self.channel = ReportChannel(self.mc.report_min_delay, self.mc.report_max_delay,
                                     rng=np.random.default_rng([seed, 7]))
        self.reports: list = []
        self.routes: list = []
        self.route_history: list = []
        self.route_round = 0
        self.seed = seed

    def on_frame(self, frame):
        if self.loc is None:
            return
        xy = self.loc.fus.position[:2]
        if self._last_xy is not None:
            self.odometer_est += float(np.hypot(*(xy - self._last_xy)))
        self._last_xy = xy.copy()
        if frame.volatile_sampled:
            self.volatile_sample(frame.volatile_ping, frame.timestamp)

    def volatile_sample(self, ping, t: float):
        before = set(self.records)
        self.records = handle_volatile_ping(self.records, ping, self.loc.pose, self.world.config.volatile_lever_arm,
                                            t, self.epoch, self.odometer_est)
        for vid in set(self.records) - before:
            self.note(t, "volatile_sensed", id=vid, type=self.records[vid].type)

    def _new_routes(self, t: float):
        gmm = cached_prior(self.world.config, self.mc.gmm_trials, self.mc.gmm_components)
        center = self.registry.pp_center_global
        notices: list = []
        self.routes = generate_routes(
            gmm, sector_regions(center, self.world.config.map_half_extent), self.mc.n_waypoints,
            seed=self.seed * 1000 + self.route_round, center=center, center_radius=self.mc.center_radius,
            half_extent=self.world.config.map_half_extent,
            obstacles=[(o[0], o[1]) for o in self.known_obstacles], inflation=self.world.config.rover_radius,
            terrain=terrain_of(self.world), notices=notices)
        self.route_round += 1
        self.route_history.append((t, self.routes))
        for n in notices:
            self.note(t, "notice", message=n)
        self.mission = replace(self.mission, route_index=0, waypoint_index=0)
        self.note(t, "routes", n=len(self.routes), waypoints=int(sum(r.n_sampled for r in self.routes)))

    def current_waypoint(self):
        r = self.routes[self.mission.route_index]
        return r.waypoints[self.mission.waypoint_index]

    def advance_waypoint(self, t: float):
        ms = self.mission
        route = self.routes[ms.route_index]
        self.recoveries_here = 0
        if ms.waypoint_index + 1 < len(route.waypoints):
            self.mission = replace(ms, waypoint_index=ms.waypoint_index + 1)
            return
        # route finished: home at the plant, then move on
        if self.mc.homing:
            self.start_homing(t)
        self.mission = replace(ms, route_index=ms.route_index + 1, waypoint_index=0)

    def control(self, t: float):
        st = self.mission.state
        self.brake = False
        if st is TopState.INITIALIZE:
            self.command = BodyCommand()
            self.initialize(t)
            if self.registry is not None:
                self._new_routes(t)
            return
        self.perceive(t)
        st = self.mission.state
        self.records, self.channel, rep = attempt_report(
            self.records, self.channel, lambda i, ty, xy: score_report(self.world, i, ty, xy), t,
            blocked=actively_sensing(self.records), max_attempts=self.mc.max_report_attempts)
        if rep is not None:
            self.reports.append(rep)
            self.note(t, "report", **rep)
        if self.homing is not None:
            rec = self.step_homing(t)
            if rec is not None and rec.get("ok"):
                drift = (rec["drift_x"], rec["drift_y"])
                span = (self.epoch_odometer, self.odometer_est) if self.mc.drift_interpolation else None
                self.records, self.epoch = apply_homing_correction(self.records, drift, self.epoch,
                                                                   odometer_span=span)
                self.epoch_odometer = self.odometer_est
            return
        if st is TopState.PLANNING:
            self.command = BodyCommand()
            if self.mission.route_index >= len(self.routes):
                self._new_routes(t)
                if not self.routes:
                    return
            wp = self.current_waypoint()
            if not waypoint_reachable(wp, self.known_obstacles, self.world.config.rover_radius) \
                    or self.recoveries_here >= 3:
                self.note(t, "waypoint_rejected", x=float(wp[0]), y=float(wp[1]))
                self.advance_waypoint(t)
                return
            if not self.plan_to(wp, t):
                self.advance_waypoint(t)
            return
        if st is TopState.TRAVERSE:
            status = self.drive_path(t)
            if status == "arrived":
                self.fire(Event.C, t)
                self.advance_waypoint(t)
            elif status == "timeout":
                self.fire(Event.D, t, reason="timeout")
                self.advance_waypoint(t)
            elif status == "stuck":
                self.fire(Event.E, t, trigger=self.trigger.kind.value, evidence=round(self.trigger.evidence, 4))
                self.start_recovery(t)
            return
        if st is TopState.RECOVERY:
            if self.step_recovery(t):
                self.fire(Event.F, t)


class ExcavatorAgent(RoverAgent):
    """Task 2 digger: approach known volatiles, run the dig/drop cycle with
    the hauler, and correct its position from successful digs."""

    def __init__(self, name, world, scenario, log, seed, hauler: "HaulerAgent"):
        super().__init__(name, world, scenario, log, seed, task=2)
        self.goal_tolerance = 0.4
        self.hauler = hauler
        self.geom = armk.ArmGeometry()
        self.arm = armk.named_config(armk.ConfigName.HOME)
        self.cycle: ExcavationCycle | None = None
        self.target = None
        self.failed: dict = {}
        self.done_ids: set = set()
        self.mass_ledger: list = []
        self.digs: list = []
        self.phase = None
        self.homing_then = None

    def _ledger(self, t, vid, action, mass):
        v = self.world.volatiles[vid]
        held = self.cycle.held if self.cycle is not None else 0.0
        self.mass_ledger.append((t, vid, action, mass, v.remaining_mass, held, self.world.hauler_bin_mass))

    def _pick_target(self):
        pos = self.loc.pose[:2]
        best, best_d = None, math.inf
        for v in self.world.volatiles:
            if v.remaining_mass <= 0 or v.id in self.done_ids or self.failed.get(v.id, 0) >= 2:
                continue
            d = float(np.hypot(*(v.position - pos)))
            if d < best_d:
                best, best_d = v, d
        return best

    def _standoff(self, v):
        pos = self.loc.pose[:2]
        base = math.atan2(pos[1] - v.position[1], pos[0] - v.position[0])
        dist = self.mc.dig_standoff + self.mc.arm_mount[0]
        for k in range(12):
            ang = base + (1 if k % 2 else -1) * ((k + 1) // 2) * math.radians(30)
            p = v.position + dist * np.array([math.cos(ang), math.sin(ang)])
            if not self.costmap.blocked(p) and self.world.in_bounds(p, 3.0):
                return p, ang
        return None, None

    def volatile_base_xy(self, v):
        x, y, yaw = self.loc.pose
        mx, my = self.mc.arm_mount
        c, s = math.cos(yaw), math.sin(yaw)
        bx, by = x + c * mx - s * my, y + s * mx + c * my
        d = v.position - np.array([bx, by])
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])

    def rendezvous_point(self):
        """Hauler bin position: under the bucket at ExtendToHauler swung 90 deg left."""
        cfg = armk.named_config(armk.ConfigName.EXTEND_TO_HAULER, math.pi / 2)
        ee = armk.ee_global_position(armk.JointAngles(*cfg.q), self.geom, self.loc.pose, self.mc.arm_mount)
        return ee

    def arm_move(self, goal: armk.ConfigName, t: float, loaded: bool = False, heading: float = 0.0):
        goal_cfg = armk.named_config(goal, heading)
        try:
            traj = armk.plan_arm_trajectory(self.arm, goal_cfg, self.mc.arm_motion_time, loaded=loaded,
                                            rover_pitch=self.loc.att.theta)
        except armk.TrajectoryConstraintError as exc:
            self.note(t, "arm_constraint", reason=str(exc))
            traj = armk.plan_arm_trajectory(self.arm, goal_cfg, self.mc.arm_motion_time)
        self.arm = goal_cfg
        self.busy_until = t + traj.duration
        return traj

    def control(self, t: float):
        st = self.mission.state
        self.brake = False
        if st is TopState.INITIALIZE:
            self.command = BodyCommand()
            self.initialize(t)
            return
        self.perceive(t)
        st = self.mission.state
        if t < self.busy_until:
            self.command = BodyCommand()
            self.brake = True
            return
        if self.homing is not None:
            self.step_homing(t)
            return
        if st is TopState.PLANNING:
            self.command = BodyCommand()
            if self.cycle is not None and self.cycle.homing_due:
                self.cycle = None
                goal = self._homing_spot()
                self.phase = "to_plant"
                self.plan_to(goal, t)
                return
            if self.target is None or self.target.remaining_mass <= 0:
                self.target = self._pick_target()
                if self.target is None:
                    return
                self.note(t, "target", id=self.target.id)
            p, ang = self._standoff(self.target)
            if p is None:
                self.failed[self.target.id] = self.failed.get(self.target.id, 0) + 1
                self.target = None
                return
            self.phase = "approach"
            self.hauler.assign_park(self.target.position, ang + math.pi / 2, t)
            if not self.plan_to(p, t):
                self.failed[self.target.id] = self.failed.get(self.target.id, 0) + 1
                self.target = None
            return
        if st is TopState.TRAVERSE:
            status = self.drive_path(t)
            if status == "arrived":
                if self.phase == "to_plant":
                    self.fire(Event.C, t)
                    self.start_homing(t)
                    return
                bearing = math.atan2(self.target.position[1] - self.loc.pose[1],
                                     self.target.position[0] - self.loc.pose[0])
                if self.turn_to(bearing):
                    self.fire(Event.G, t, volatile=self.target.id)
                    self.cycle = ExcavationCycle(self.target.id, self.target.remaining_mass, start_time=t,
                                                 timeout=self.mc.excavation_timeout,
                                                 hauler_timeout=self.mc.hauler_timeout)
            elif status == "timeout":
                self.fire(Event.D, t, reason="timeout")
                self.failed[self.target.id] = self.failed.get(self.target.id, 0) + 1
                self.target = None
            elif status == "stuck":
                self.fire(Event.E, t, trigger=self.trigger.kind.value, evidence=round(self.trigger.evidence, 4))
                self.start_recovery(t)
            return
        if st is TopState.RECOVERY:
            if self.step_recovery(t):
                self.fire(Event.F, t)
            return
        if st is TopState.EXCAVATION:
            self.command = BodyCommand()
            self.brake = True
            self.step_excavation(t)

    def _homing_spot(self):
        reg = self.registry
        pos = self.loc.pose[:2]
        d = pos - reg.pp_center_global
        n = float(np.hypot(*d)) or 1.0
        return reg.pp_center_global + d / n * (reg.pp_radius + 5.0)

    def _finish_cycle(self, t: float):
        out = self.cycle.outcome
        self.fire(Event.H, t, cause=out.cause, volatile=out.volatile_id, cycles=out.cycles)
        if self.cycle.held > 0:
            # undelivered scoop goes back onto the deposit so no mass leaves the ledger
            m = self.cycle.held
            self.cycle.held = 0.0
            self.world.volatiles[out.volatile_id].remaining_mass += m
            self._ledger(t, out.volatile_id, "return", m)
        if out.success:
            self.done_ids.add(out.volatile_id)
            self.target = None
        elif not out.homing_due:
            self.failed[out.volatile_id] = self.failed.get(out.volatile_id, 0) + 1
            self.target = None
        self.hauler.release(t)
        if self.arm.name is not armk.ConfigName.HOME:
            self.arm_move(armk.ConfigName.HOME, t)
        if not out.homing_due:
            self.cycle = None

    def step_excavation(self, t: float):
        cyc = self.cycle
        if cyc.check_timeouts(t):
            self._finish_cycle(t)
            return
        act = cyc.next_action()
        v = self.world.volatiles[cyc.volatile_id]
        if act == "approach":
            cyc.on_in_position(t)
            self.fire(ExcEvent.IN_POSITION, t)
        elif act == "home_arm":
            if self.arm.name is not armk.ConfigName.HOME:
                self.arm_move(armk.ConfigName.HOME, t)
                return
            cyc.on_arm_homed(t)
            self.fire(ExcEvent.ARM_HOMED, t)
        elif act == "dig":
            try:
                target = armk.dig_search_pattern(self.volatile_base_xy(v), cyc.attempt_index, self.geom)
            except armk.SearchExhaustedError:
                cyc.on_search_exhausted(t)
                self._finish_cycle(t)
                return
            q = armk.inverse_kinematics(target, self.geom, armk.Elbow.UP)
            rv = self.world.rover(self.name)
            tip_truth = armk.ee_global_position(q, self.geom, (rv.x, rv.y, rv.yaw), self.mc.arm_mount)
            tip_est = armk.ee_global_position(q, self.geom, self.loc.pose, self.mc.arm_mount)
            self.arm_move(armk.ConfigName.DIG_SCOOP, t)
            self.busy_until += self.mc.arm_motion_time  # lower, then scoop
            mass, vid = dig_at(self.world, tip_truth, self.mc.scoop_fraction)
            err_before = float(np.hypot(*(self.loc.fus.position[:2] - [rv.x, rv.y])))
            self.digs.append({"t": t, "attempt": cyc.attempt_index, "mass": mass})
            cyc.on_dig(mass if vid == cyc.volatile_id else 0.0, t)
            if mass > 0 and vid == cyc.volatile_id:
                self.loc.fus = volatile_pseudo_update(self.loc.fus, v.position, tip_est, mass,
                                                      self.scn.estimator.sigma_dig)
                err_after = float(np.hypot(*(self.loc.fus.position[:2] - [rv.x, rv.y])))
                attempt = cyc.attempt_index
                cyc.attempt_index = 0
                self._ledger(t, v.id, "dig", mass)
                self.note(t, "dig", id=v.id, mass=mass, attempt=attempt, err_before=round(err_before, 6),
                          err_after=round(err_after, 6))
                self.fire(ExcEvent.DUG, t)
            else:
                if vid is not None and mass > 0:
                    # a neighbouring deposit was hit; put it back
                    self.world.volatiles[vid].remaining_mass += mass
                self.note(t, "dig_empty", id=v.id, attempt=cyc.attempt_index)
                self.fire(ExcEvent.DUG_EMPTY, t)
                if cyc.homing_due:
                    cyc._finish(False, "homing_due", t)
                    self._finish_cycle(t)
        elif act == "await_hauler":
            if self.phase != "call":
                self.phase = "call"
                self.arm_move(armk.ConfigName.EXTEND_TO_HAULER, t, loaded=True, heading=math.pi / 2)
                self.hauler.assign_rendezvous(self.rendezvous_point(), t)
                return
            if cyc.request_drop(self.hauler.in_position(t), t):
                self.fire(ExcEvent.HAULER_READY, t)
        elif act == "drop":
            if self.phase != "dropping":
                self.phase = "dropping"
                self.arm_move(armk.ConfigName.DROP_ROTATE, t, heading=math.pi / 2)
                return
            self.phase = None
            m = cyc.on_dropped(t)
            self.world.hauler_bin_mass += m
            self._ledger(t, v.id, "drop", m)
            self.fire(ExcEvent.DROPPED, t)
            if cyc.done:
                self._finish_cycle(t)


class HaulerAgent(RoverAgent):
    """Task 2 carrier: parks near the excavation site and closes in on request."""

    def __init__(self, name, world, scenario, log, seed):
        super().__init__(name, world, scenario, log, seed, task=2)
        self.goal_kind = None
        self.goal_point = None
        self.pending = None
        self.arrived = False

    def assign_park(self, volatile_xy, angle: float, t: float):
        p = np.asarray(volatile_xy, dtype=float) + self.mc.hauler_park_distance * np.array([math.cos(angle),
                                                                                            math.sin(angle)])
        self.pending = ("park", p)

    def assign_rendezvous(self, point, t: float):
        self.pending = ("rendezvous", np.asarray(point, dtype=float))

    def release(self, t: float):
        self.pending = None
        self.goal_kind = None
        self.arrived = False

    def in_position(self, t: float) -> bool:
        return (self.goal_kind == "rendezvous" and self.arrived and self.loc is not None
                and np.hypot(*(self.loc.pose[:2] - self.goal_point)) < self.mc.hauler_tolerance)

    def control(self, t: float):
        st = self.mission.state
        self.brake = False
        if st is TopState.INITIALIZE:
            self.command = BodyCommand()
            self.initialize(t)
            return
        self.perceive(t)
        st = self.mission.state
        if self.pending is not None and st is not TopState.RECOVERY:
            self.goal_kind, self.goal_point = self.pending
            self.goal_tolerance = 0.5 * self.mc.hauler_tolerance if self.goal_kind == "rendezvous" \
                else self.mc.waypoint_tolerance
            self.pending = None
            self.arrived = False
            if st is TopState.TRAVERSE:
                self.fire(Event.D, t, reason="new_goal")
            st = self.mission.state
        if st is TopState.PLANNING:
            self.command = BodyCommand()
            if self.goal_point is None or self.arrived:
                self.brake = self.arrived
                return
            if not self.plan_to(self.goal_point, t):
                self.goal_point = None
            return
        if st is TopState.TRAVERSE:
            status = self.drive_path(t)
            if status == "arrived":
                self.fire(Event.C, t)
                self.arrived = True
                self.command = BodyCommand()
            elif status == "timeout":
                self.fire(Event.D, t, reason="timeout")
                self.goal_point = None
            elif status == "stuck":
                self.fire(Event.E, t, trigger=self.trigger.kind.value, evidence=round(self.trigger.evidence, 4))
                self.start_recovery(t)
            return
        if st is TopState.RECOVERY:
            if self.step_recovery(t):
                self.fire(Event.F, t)
