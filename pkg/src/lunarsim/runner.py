"""Closed-loop simulation runner and per-run artifact writer."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import ExcavatorAgent, HaulerAgent, ScoutAgent
from .config import ConfigError, Scenario
from .mission import VolatileStatus
from .world import build_world, sample_sensors, step_world

TASK_ROVERS = {1: ("scout",), 2: ("excavator", "hauler")}


def _f(v, nd=6):
    """Fixed-format float for CSV output, so reruns are byte-identical."""
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "nan"
    return f"{float(v):.{nd}f}"


@dataclass
class RunResult:
    task: int
    mode: str
    seed: int
    world: object
    agents: dict
    trajectory: dict = field(default_factory=dict)   # rover -> list of rows
    events: list = field(default_factory=list)
    out_dir: Path | None = None

    def traj_array(self, rover: str | None = None) -> np.ndarray:
        rover = rover or next(iter(self.trajectory))
        return np.array(self.trajectory[rover], dtype=float).reshape(-1, 7)

    @property
    def scout(self):
        return self.agents.get("scout")

    @property
    def records(self) -> dict:
        return self.scout.records if self.scout is not None else {}

    @property
    def sensed(self) -> int:
        return len(self.records)

    @property
    def scored(self) -> int:
        return sum(r.status is VolatileStatus.SCORED for r in self.records.values())

    @property
    def scoring_rate(self) -> float:
        return self.scored / self.sensed if self.sensed else float("nan")

    def final_error(self, rover: str | None = None) -> float:
        tr = self.traj_array(rover)
        return float(tr[-1, 5]) if len(tr) else float("nan")

    def final_abs_xy(self, rover: str | None = None):
        tr = self.traj_array(rover)
        if not len(tr):
            return float("nan"), float("nan")
        return abs(tr[-1, 3] - tr[-1, 1]), abs(tr[-1, 4] - tr[-1, 2])


def prepare_scenario(scenario: Scenario, task: int, seed: int, mode: str | None = None,
                     duration: float | None = None) -> Scenario:
    if task not in TASK_ROVERS:
        raise ConfigError(f"task must be 1 or 2, got {task}")
    world = replace(scenario.world, seed=int(seed), rovers=TASK_ROVERS[task],
                    duration=scenario.world.duration if duration is None else float(duration))
    est = scenario.estimator if mode is None else replace(scenario.estimator, mode=mode)
    return Scenario(world, scenario.mission, est)


def simulate(scenario: Scenario, task: int = 1, seed: int = 0, mode: str | None = None,
             duration: float | None = None, out_dir=None) -> RunResult:
    """Run one closed-loop mission. Deterministic for a given scenario, task,
    seed and mode. Writes the run artifacts when ``out_dir`` is given."""
    scn = prepare_scenario(scenario, task, seed, mode, duration)
    world = build_world(scn.world)
    result = RunResult(task, scn.estimator.mode, int(seed), world, {})
    log = result.events.append
    if task == 1:
        agents = {"scout": ScoutAgent("scout", world, scn, log, seed)}
    else:
        hauler = HaulerAgent("hauler", world, scn, log, seed)
        agents = {"excavator": ExcavatorAgent("excavator", world, scn, log, seed, hauler), "hauler": hauler}
    result.agents = agents
    for name in agents:
        result.trajectory[name] = []

    mc = scn.mission
    dt = mc.tick / mc.imu_substeps
    n_ticks = int(round(scn.world.duration / mc.tick))
    next_log = 0.0
    commands: dict = {}
    for k in range(n_ticks):
        for _ in range(mc.imu_substeps):
            step_world(world, commands, dt)
            for name, ag in agents.items():
                ag.sense(sample_sensors(world, name), dt)
        t = world.sim_time
        for name, ag in agents.items():
            ag.control(t)
            commands[name] = ag.body_command()
        if t + 1e-9 >= next_log:
            next_log += mc.log_interval
            for name, ag in agents.items():
                rv = world.rover(name)
                if ag.loc is None:
                    continue
                p = ag.loc.fus.position
                err = math.hypot(p[0] - rv.x, p[1] - rv.y)
                result.trajectory[name].append((t, rv.x, rv.y, p[0], p[1], err,
                                                float(np.trace(ag.loc.fus.covariance[:2, :2]))))
    for ag in agents.values():
        for entry in ag.audit:
            if entry["kind"] == "ignored":
                log(dict(entry, rover=ag.name))
    if out_dir is not None:
        result.out_dir = write_run(result, out_dir)
    return result


def run_dir_name(task: int, mode: str, seed: int) -> str:
    return f"task{task}_{mode}_seed{seed}"


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run(result: RunResult, out_dir) -> Path:
    d = Path(out_dir) / run_dir_name(result.task, result.mode, result.seed)
    d.mkdir(parents=True, exist_ok=True)
    primary = "scout" if result.task == 1 else "excavator"
    for name, rows in result.trajectory.items():
        fname = "trajectory.csv" if name == primary else f"trajectory_{name}.csv"
        _write_csv(d / fname, ["t", "truth_x", "truth_y", "est_x", "est_y", "err_h", "cov_trace"],
                   [[_f(v) for v in r] for r in rows])
    with open(d / "events.jsonl", "w") as fh:
        for ev in result.events:
            fh.write(json.dumps(ev, sort_keys=True, default=_json_default) + "\n")

    homing_rows = []
    for name, ag in result.agents.items():
        for h in ag.homing_log:
            homing_rows.append([name, _f(h["t"], 3), _f(h["err_before"]), _f(h["err_after"]), _f(h["fit_error"]),
                                _f(h["drift_x"]), _f(h["drift_y"])])
    _write_csv(d / "homing.csv", ["rover", "t", "err_before", "err_after", "fit_error", "drift_x", "drift_y"],
               homing_rows)
    path_rows = []
    for name, ag in result.agents.items():
        for k, (t, rover, path) in enumerate(ag.paths_log):
            for j, p in enumerate(path):
                path_rows.append([rover, k, _f(t, 3), j, _f(p[0]), _f(p[1])])
    _write_csv(d / "paths.csv", ["rover", "path", "t", "index", "x", "y"], path_rows)

    if result.task == 1:
        scout = result.scout
        vols = result.world.volatiles
        rows = []
        for vid in sorted(scout.records):
            r = scout.records[vid]
            est = r.best_estimate_xy if r.best_estimate_xy is not None else (float("nan"),) * 2
            rows.append([vid, r.type, _f(est[0]), _f(est[1]), _f(vols[vid].position[0]), _f(vols[vid].position[1]),
                         r.attempts, r.status.value])
        _write_csv(d / "ledger.csv", ["id", "type", "est_x", "est_y", "truth_x", "truth_y", "attempts", "status"],
                   rows)
        route_rows = []
        for t, routes in scout.route_history:
            for r in routes:
                for j, p in enumerate(r.waypoints):
                    route_rows.append([_f(t, 3), r.region_id, _f(r.priority), j, _f(p[0]), _f(p[1])])
        _write_csv(d / "routes.csv", ["t", "region", "priority", "index", "x", "y"], route_rows)
        corrected = [h["err_after"] for h in scout.homing_log]
        _write_csv(d / "summary.csv",
                   ["seed", "sensed", "scored", "n_homing"] + [f"corrected_err_{i + 1}" for i in range(len(corrected))],
                   [[result.seed, result.sensed, result.scored, len(corrected)] + [_f(c) for c in corrected]])
    else:
        exc = result.agents["excavator"]
        _write_csv(d / "mass_ledger.csv", ["t", "volatile_id", "action", "mass", "remaining", "held", "bin"],
                   [[_f(r[0], 3), r[1], r[2]] + [_f(v) for v in r[3:]] for r in exc.mass_ledger])
        dug = sum(r[3] for r in exc.mass_ledger if r[2] == "dig")
        _write_csv(d / "summary.csv", ["seed", "mode", "dug", "bin", "n_homing", "final_err", "final_err_hauler"],
                   [[result.seed, result.mode, _f(dug), _f(result.world.hauler_bin_mass), exc.homing_count,
                     _f(result.final_error("excavator")), _f(result.final_error("hauler"))]])
    return d


@dataclass
class RunManifest:
    config: Path | None
    seeds: tuple
    task: int = 1
    mode: str = "viwo"
    out_dir: Path = Path("runs")
    duration: float | None = None
    summaries: list = field(default_factory=list)


def run_scenario(manifest: RunManifest) -> list:
    """Run every seed of the manifest, writing one directory per run.
    Returns the run results and fills ``manifest.summaries``."""
    from .config import load_scenario
    scn = load_scenario(manifest.config)
    results = []
    for seed in manifest.seeds:
        res = simulate(scn, manifest.task, seed, manifest.mode, manifest.duration, manifest.out_dir)
        homings = [h["err_after"] for ag in res.agents.values() for h in ag.homing_log]
        manifest.summaries.append({"seed": seed, "sensed": res.sensed, "scored": res.scored,
                                   "n_homing": len(homings), "corrected_err": homings})
        results.append(res)
    return results


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
