"""Mission executive: the task state machine, volatile bookkeeping and report
queue for the scout, and the excavator/hauler dig-and-drop cycle."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class TopState(enum.Enum):
    INITIALIZE = "Initialize"
    PLANNING = "Planning"
    TRAVERSE = "Traverse"
    RECOVERY = "Recovery"
    EXCAVATION = "Excavation"


class ExcavationSub(enum.Enum):
    APPROACH = "Approach"
    HOME = "Home"
    DIG = "Dig"
    FIND_HAULER = "FindHauler"
    DROP = "Drop"


class Event(enum.Enum):
    A = "A"  # true pose obtained, plant registered
    B = "B"  # path planned
    C = "C"  # waypoint reached
    D = "D"  # plan failure
    E = "E"  # mobility problem detected
    F = "F"  # recovery manoeuvre finished
    G = "G"  # arrived near the target volatile
    H = "H"  # excavation finished or timed out


TRANSITIONS = {
    (TopState.INITIALIZE, Event.A): TopState.PLANNING,
    (TopState.PLANNING, Event.B): TopState.TRAVERSE,
    (TopState.TRAVERSE, Event.C): TopState.PLANNING,
    (TopState.PLANNING, Event.D): TopState.PLANNING,
    (TopState.TRAVERSE, Event.D): TopState.PLANNING,
    (TopState.TRAVERSE, Event.E): TopState.RECOVERY,
    (TopState.RECOVERY, Event.F): TopState.PLANNING,
    (TopState.TRAVERSE, Event.G): TopState.EXCAVATION,
    (TopState.EXCAVATION, Event.H): TopState.PLANNING,
}
TASK2_ONLY = {Event.G, Event.H}


class ExcEvent(enum.Enum):
    IN_POSITION = "in_position"
    ARM_HOMED = "arm_homed"
    DUG = "dug"
    DUG_EMPTY = "dug_empty"
    HAULER_READY = "hauler_ready"
    DROPPED = "dropped"
    MASS_LEFT = "mass_left"


EXCAVATION_TRANSITIONS = {
    (ExcavationSub.APPROACH, ExcEvent.IN_POSITION): ExcavationSub.HOME,
    (ExcavationSub.HOME, ExcEvent.ARM_HOMED): ExcavationSub.DIG,
    (ExcavationSub.DIG, ExcEvent.DUG): ExcavationSub.FIND_HAULER,
    (ExcavationSub.DIG, ExcEvent.DUG_EMPTY): ExcavationSub.DIG,
    (ExcavationSub.FIND_HAULER, ExcEvent.HAULER_READY): ExcavationSub.DROP,
    (ExcavationSub.DROP, ExcEvent.DROPPED): ExcavationSub.HOME,
}


@dataclass(frozen=True)
class MissionState:
    task: int = 1
    state: TopState = TopState.INITIALIZE
    sub: ExcavationSub | None = None
    route_index: int = 0
    waypoint_index: int = 0
    homing_due: bool = False
    entered_at: float = 0.0

    @property
    def label(self) -> str:
        return self.state.value if self.sub is None else f"{self.state.value}/{self.sub.value}"


def step_mission(state: MissionState, events, t: float = 0.0, audit: list | None = None) -> MissionState:
    """Apply events in order. Top-level events follow the labelled transitions
    A-H; excavation events move the excavation substate. Events that are not
    enabled leave the state unchanged and are written to ``audit``."""
    if isinstance(events, (Event, ExcEvent)):
        events = [events]
    for ev in events:
        before = state.label
        nxt = None
        if isinstance(ev, Event):
            target = TRANSITIONS.get((state.state, ev))
            if target is not None and not (ev in TASK2_ONLY and state.task != 2):
                sub = ExcavationSub.APPROACH if target is TopState.EXCAVATION else None
                nxt = replace(state, state=target, sub=sub, entered_at=t)
        elif state.state is TopState.EXCAVATION:
            target = EXCAVATION_TRANSITIONS.get((state.sub, ev))
            if target is not None:
                nxt = replace(state, sub=target, entered_at=t)
        if nxt is None:
            if audit is not None:
                audit.append({"t": t, "kind": "ignored", "state": before, "event": ev.value})
            continue
        state = nxt
        if audit is not None:
            audit.append({"t": t, "kind": "transition", "from": before, "event": ev.value, "to": state.label})
    return state


def transition_graph(task: int) -> dict:
    """Finite graph of mission states (excavation substates expanded)."""
    nodes = [(s, None) for s in TopState if s is not TopState.EXCAVATION]
    if task == 2:
        nodes += [(TopState.EXCAVATION, sub) for sub in ExcavationSub]
    graph = {}
    for s, sub in nodes:
        ms = MissionState(task=task, state=s, sub=sub)
        out = set()
        for ev in list(Event) + list(ExcEvent):
            nxt = step_mission(ms, ev)
            if nxt != ms:
                out.add((nxt.state, nxt.sub))
        graph[(s, sub)] = out
    return graph


def liveness(task: int) -> dict:
    """For each state, whether Planning is reachable from it."""
    graph = transition_graph(task)
    goal = (TopState.PLANNING, None)
    result = {}
    for start in graph:
        seen, stack = {start}, [start]
        ok = start == goal
        while stack and not ok:
            for n in graph[stack.pop()]:
                if n == goal:
                    ok = True
                    break
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        result[start] = ok
    return result


# ---------------------------------------------------------------- volatiles

class VolatileStatus(enum.Enum):
    ACTIVELY_SENSED = "ActivelySensed"
    QUEUED = "Queued"
    SCORED = "Scored"
    EXHAUSTED = "Exhausted"


_LIFECYCLE = {
    VolatileStatus.ACTIVELY_SENSED: {VolatileStatus.QUEUED},
    VolatileStatus.QUEUED: {VolatileStatus.SCORED, VolatileStatus.EXHAUSTED},
    VolatileStatus.SCORED: set(),
    VolatileStatus.EXHAUSTED: set(),
}
MAX_REPORT_ATTEMPTS = 5
SENSOR_RANGE = 2.0


@dataclass(frozen=True)
class VolatileRecord:
    id: int
    type: int
    best_estimate_xy: np.ndarray | None
    closest_distance: float
    status: VolatileStatus
    attempts: int = 0
    sensed_epoch: int = 0
    first_seen: float = 0.0
    last_seen: float = 0.0
    heading: float = 0.0
    odometer: float = 0.0
    track: tuple = ()        # (t, mount_x, mount_y) estimates while sensed
    reported: tuple = ()     # reported positions, in order

    def with_status(self, status: VolatileStatus, **kw) -> "VolatileRecord":
        if status is not self.status and status not in _LIFECYCLE[self.status]:
            raise ValueError(f"illegal volatile transition {self.status.value} -> {status.value}")
        return replace(self, status=status, **kw)


def mount_position(estimate, lever_arm) -> np.ndarray:
    x, y, yaw = estimate[0], estimate[1], estimate[2]
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([x + c * lever_arm[0] - s * lever_arm[1], y + s * lever_arm[0] + c * lever_arm[1]])


def _finalize(rec: VolatileRecord) -> VolatileRecord:
    """Closest-approach estimate: the sensor position at the temporal midpoint
    of the ping window, with the lateral offset inferred from the chord
    length of the 2 m sensing disc."""
    tr = np.array(rec.track)
    if len(tr) == 0:
        return rec.with_status(VolatileStatus.QUEUED)
    mid_t = 0.5 * (tr[0, 0] + tr[-1, 0])
    k = int(np.argmin(np.abs(tr[:, 0] - mid_t)))
    best = tr[k, 1:3].copy()
    chord = float(np.hypot(*(tr[-1, 1:3] - tr[0, 1:3])))
    lateral = math.sqrt(max(SENSOR_RANGE**2 - (0.5 * chord) ** 2, 0.0))
    if len(tr) > 1:
        d = tr[-1, 1:3] - tr[0, 1:3]
        heading = math.atan2(d[1], d[0]) if np.hypot(*d) > 1e-6 else rec.heading
    else:
        heading = rec.heading
    return rec.with_status(VolatileStatus.QUEUED, best_estimate_xy=best, closest_distance=lateral, heading=heading)


def handle_volatile_ping(records: dict, ping, current_estimate, lever_arm, t: float = 0.0, epoch: int = 0,
                         odometer: float = 0.0) -> dict:
    """Update the volatile records with one volatile-sensor sample.

    ``ping`` is (id, type) or None; ``current_estimate`` is the rover's
    estimated (x, y, yaw). Records being sensed that are not in this ping are
    finalized and queued.
    """
    records = dict(records)
    pid = None if ping is None else int(ping[0])
    for vid, rec in list(records.items()):
        if rec.status is VolatileStatus.ACTIVELY_SENSED and vid != pid:
            records[vid] = _finalize(rec)
    if ping is None:
        return records
    mount = mount_position(current_estimate, lever_arm)
    rec = records.get(pid)
    if rec is None:
        records[pid] = VolatileRecord(pid, int(ping[1]), mount, SENSOR_RANGE, VolatileStatus.ACTIVELY_SENSED,
                                      sensed_epoch=epoch, first_seen=t, last_seen=t,
                                      heading=float(current_estimate[2]), odometer=odometer,
                                      track=((t, mount[0], mount[1]),))
    elif rec.status is VolatileStatus.ACTIVELY_SENSED:
        records[pid] = replace(rec, last_seen=t, track=rec.track + ((t, mount[0], mount[1]),))
    return records


def actively_sensing(records: dict) -> bool:
    return any(r.status is VolatileStatus.ACTIVELY_SENSED for r in records.values())


def candidate_location(rec: VolatileRecord, attempt: int) -> np.ndarray:
    """Report position for a given attempt: the estimate first, then points
    of a heading-aware ring (either side of the pass at the inferred lateral
    offset, then ahead and behind along the pass)."""
    base = np.asarray(rec.best_estimate_xy, dtype=float)
    c, s = math.cos(rec.heading), math.sin(rec.heading)
    left = np.array([-s, c])
    fwd = np.array([c, s])
    d = max(rec.closest_distance, 0.75)
    offsets = [np.zeros(2), d * left, -d * left, 1.5 * fwd, -1.5 * fwd]
    return base + offsets[min(attempt, len(offsets) - 1)]


@dataclass
class ReportChannel:
    min_delay: float = 15.0
    max_delay: float = 30.0
    next_allowed: float = 0.0
    last_report: float | None = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def ready(self, t: float) -> bool:
        return t >= self.next_allowed

    def consume(self, t: float):
        self.last_report = t
        self.next_allowed = t + float(self.rng.uniform(self.min_delay, self.max_delay))


def next_report_candidate(records: dict):
    """New first-attempt volatiles go before queued retries."""
    queued = [r for r in records.values() if r.status is VolatileStatus.QUEUED]
    fresh = sorted((r for r in queued if r.attempts == 0), key=lambda r: (r.first_seen, r.id))
    if fresh:
        return fresh[0]
    retry = sorted((r for r in queued if r.attempts > 0), key=lambda r: (r.attempts, r.first_seen, r.id))
    return retry[0] if retry else None


def attempt_report(records: dict, channel: ReportChannel, scoring, t: float, *, blocked: bool = False,
                   max_attempts: int = MAX_REPORT_ATTEMPTS):
    """Send at most one report. Returns (records, channel, report or None).

    ``scoring(id, type, xy) -> bool`` is the competition oracle. Nothing is
    sent while the channel cools down or while ``blocked`` (a volatile is
    being sensed); the candidate simply waits.
    """
    if blocked or not channel.ready(t):
        return records, channel, None
    rec = next_report_candidate(records)
    if rec is None:
        return records, channel, None
    xy = candidate_location(rec, rec.attempts)
    ok = bool(scoring(rec.id, rec.type, xy))
    channel.consume(t)
    records = dict(records)
    reported = rec.reported + (tuple(float(v) for v in xy),)
    if ok:
        records[rec.id] = rec.with_status(VolatileStatus.SCORED, attempts=rec.attempts + 1, reported=reported)
    else:
        n = rec.attempts + 1
        status = VolatileStatus.EXHAUSTED if n >= max_attempts else VolatileStatus.QUEUED
        records[rec.id] = rec.with_status(status, attempts=n, reported=reported)
    report = {"t": t, "id": rec.id, "type": rec.type, "x": float(xy[0]), "y": float(xy[1]),
              "attempt": rec.attempts + 1, "scored": ok}
    return records, channel, report


def apply_homing_correction(records: dict, drift_estimate, epoch: int, *, odometer_span=None):
    """Shift the estimates recorded during ``epoch`` by the drift removed at
    homing. With ``odometer_span=(start, end)`` the shift is scaled by how far
    along the epoch each volatile was sensed. Returns (records, epoch + 1)."""
    drift = np.asarray(drift_estimate, dtype=float)[:2]
    out = {}
    for vid, rec in records.items():
        if rec.sensed_epoch == epoch and rec.status in (VolatileStatus.QUEUED, VolatileStatus.ACTIVELY_SENSED) \
                and rec.best_estimate_xy is not None:
            scale = 1.0
            if odometer_span is not None and odometer_span[1] > odometer_span[0]:
                scale = min(1.0, max(0.0, (rec.odometer - odometer_span[0]) / (odometer_span[1] - odometer_span[0])))
            rec = replace(rec, best_estimate_xy=np.asarray(rec.best_estimate_xy) + scale * drift)
        out[vid] = rec
    return out, epoch + 1


# ---------------------------------------------------------------- excavation

@dataclass
class ExcavationOutcome:
    volatile_id: int
    success: bool
    cause: str
    cycles: int
    dug_mass: float
    dropped_mass: float
    held_mass: float
    homing_due: bool


class ExcavationCycle:
    """Dig / find hauler / drop loop for one volatile.

    The cycle decides; the caller acts. ``next_action`` names what the
    excavator should do now, and the ``on_*`` methods feed back results.
    """

    def __init__(self, volatile_id: int, remaining_mass: float, *, start_time: float = 0.0,
                 timeout: float = 300.0, hauler_timeout: float = 120.0, empty_limit: int = 3):
        self.volatile_id = volatile_id
        self.remaining = remaining_mass
        self.start_time = start_time
        self.timeout = timeout
        self.hauler_timeout = hauler_timeout
        self.empty_limit = empty_limit
        self.sub = ExcavationSub.APPROACH
        self.attempt_index = 0
        self.consecutive_empty = 0
        self.held = 0.0
        self.dug = 0.0
        self.dropped = 0.0
        self.cycles = 0
        self.homing_due = False
        self.phase_start = start_time
        self.outcome: ExcavationOutcome | None = None
        self.log: list = []

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def _move(self, sub: ExcavationSub, t: float):
        self.log.append({"t": t, "from": self.sub.value, "to": sub.value})
        self.sub = sub
        self.phase_start = t

    def _finish(self, success: bool, cause: str, t: float):
        self.outcome = ExcavationOutcome(self.volatile_id, success, cause, self.cycles, self.dug,
                                         self.dropped, self.held, self.homing_due)
        self.log.append({"t": t, "event": "H", "cause": cause})

    def check_timeouts(self, t: float) -> bool:
        if self.done:
            return True
        if self.sub is ExcavationSub.FIND_HAULER and t - self.phase_start > self.hauler_timeout:
            self._finish(False, "hauler_timeout", t)
        elif t - self.start_time > self.timeout:
            self._finish(False, "timeout", t)
        return self.done

    def next_action(self) -> str:
        if self.done:
            return "none"
        return {ExcavationSub.APPROACH: "approach", ExcavationSub.HOME: "home_arm", ExcavationSub.DIG: "dig",
                ExcavationSub.FIND_HAULER: "await_hauler", ExcavationSub.DROP: "drop"}[self.sub]

    def on_in_position(self, t: float):
        if self.sub is ExcavationSub.APPROACH:
            self._move(ExcavationSub.HOME, t)

    def on_arm_homed(self, t: float):
        if self.sub is ExcavationSub.HOME:
            self._move(ExcavationSub.DIG, t)

    def on_dig(self, mass: float, t: float):
        if self.sub is not ExcavationSub.DIG:
            return
        if mass > 0:
            self.held += mass
            self.dug += mass
            self.remaining -= mass
            self.consecutive_empty = 0
            self._move(ExcavationSub.FIND_HAULER, t)
        else:
            self.consecutive_empty += 1
            self.attempt_index += 1
            if self.consecutive_empty >= self.empty_limit:
                self.homing_due = True

    def on_search_exhausted(self, t: float):
        self._finish(False, "search_exhausted", t)

    def request_drop(self, hauler_in_position: bool, t: float) -> bool:
        """Gate into Drop: only with hauler-in-position feedback."""
        if self.sub is ExcavationSub.FIND_HAULER and hauler_in_position:
            self._move(ExcavationSub.DROP, t)
            return True
        return False

    def on_dropped(self, t: float) -> float:
        """Empty the bucket into the hauler; returns the mass transferred."""
        if self.sub is not ExcavationSub.DROP:
            return 0.0
        m = self.held
        self.dropped += m
        self.held = 0.0
        self.cycles += 1
        if self.remaining <= 1e-12:
            self._finish(True, "collected", t)
        else:
            self._move(ExcavationSub.HOME, t)
        return m


def run_excavation_cycle(excavator_state, hauler_state, volatile, *, dig=None, hauler_ready=None,
                         dt: float = 1.0, arm_time: float = 4.0, t0: float = 0.0, timeout: float = 300.0,
                         capacity: float = 0.5) -> ExcavationOutcome:
    """Run one excavation to completion with caller-supplied stand-ins.

    ``excavator_state`` / ``hauler_state`` are dicts with an ``in_position``
    flag; ``volatile`` has ``id``, ``initial_mass`` and ``remaining_mass``.
    ``dig(attempt_index) -> mass`` defaults to a perfect scoop of
    ``capacity`` of the initial mass; ``hauler_ready(t) -> bool`` defaults to
    the hauler's ``in_position`` flag.
    """
    if dig is None:
        def dig(_attempt):
            m = min(capacity * volatile.initial_mass, volatile.remaining_mass)
            volatile.remaining_mass -= m
            return m
    if hauler_ready is None:
        def hauler_ready(_t):
            return bool(hauler_state.get("in_position", False))
    cyc = ExcavationCycle(volatile.id, volatile.remaining_mass, start_time=t0, timeout=timeout)
    t = t0
    while not cyc.check_timeouts(t):
        act = cyc.next_action()
        if act == "approach":
            if excavator_state.get("in_position", False):
                cyc.on_in_position(t)
        elif act == "home_arm":
            t += arm_time
            cyc.on_arm_homed(t)
        elif act == "dig":
            t += arm_time
            cyc.on_dig(dig(cyc.attempt_index), t)
        elif act == "await_hauler":
            cyc.request_drop(hauler_ready(t), t)
        elif act == "drop":
            t += arm_time
            cyc.on_dropped(t)
        t += dt
    return cyc.outcome
