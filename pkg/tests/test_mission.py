import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lunarsim.mission import (TRANSITIONS, Event, ExcavationCycle, ExcavationSub, ExcEvent, MissionState,
                              ReportChannel, TopState, VolatileRecord, VolatileStatus, apply_homing_correction,
                              attempt_report, candidate_location, handle_volatile_ping, liveness,
                              run_excavation_cycle, step_mission, transition_graph)

LEVER = (0.6, 0.0)


# ------------------------------------------------------------ state machine

def test_labelled_transitions_in_order():
    audit = []
    s = MissionState(task=1)
    s = step_mission(s, [Event.A, Event.B, Event.C, Event.B, Event.E, Event.F], 1.0, audit)
    assert s.state is TopState.PLANNING
    kinds = [a["kind"] for a in audit]
    assert kinds == ["transition"] * 6


@pytest.mark.parametrize("state", list(TopState))
@pytest.mark.parametrize("event", list(Event))
def test_every_pair_follows_table(state, event):
    s = MissionState(task=2, state=state, sub=ExcavationSub.DIG if state is TopState.EXCAVATION else None)
    audit = []
    nxt = step_mission(s, event, 0.0, audit)
    expected = TRANSITIONS.get((state, event))
    if expected is None:
        assert nxt == s and audit[0]["kind"] == "ignored"
    else:
        assert nxt.state is expected and audit[0]["kind"] == "transition"


def test_excavation_events_are_task2_only():
    audit = []
    s = MissionState(task=1, state=TopState.TRAVERSE)
    assert step_mission(s, Event.G, 3.0, audit) == s
    assert audit == [{"t": 3.0, "kind": "ignored", "state": "Traverse", "event": "G"}]
    s2 = step_mission(MissionState(task=2, state=TopState.TRAVERSE), Event.G)
    assert s2.state is TopState.EXCAVATION and s2.sub is ExcavationSub.APPROACH


def test_excavation_substates():
    s = step_mission(MissionState(task=2, state=TopState.TRAVERSE), Event.G)
    s = step_mission(s, [ExcEvent.IN_POSITION, ExcEvent.ARM_HOMED, ExcEvent.DUG_EMPTY])
    assert s.sub is ExcavationSub.DIG
    audit = []
    s = step_mission(s, [ExcEvent.DROPPED], 0.0, audit)
    assert s.sub is ExcavationSub.DIG and audit[0]["kind"] == "ignored"
    s = step_mission(s, [ExcEvent.DUG, ExcEvent.HAULER_READY, ExcEvent.DROPPED, Event.H])
    assert s.state is TopState.PLANNING and s.sub is None


@given(st.lists(st.sampled_from(list(Event) + list(ExcEvent)), max_size=40), st.sampled_from([1, 2]))
def test_random_sequences_stay_in_graph(events, task):
    graph = transition_graph(task)
    s = MissionState(task=task)
    for ev in events:
        nxt = step_mission(s, ev)
        if nxt != s:
            assert (nxt.state, nxt.sub) in graph[(s.state, s.sub)]
        s = nxt
        assert (s.state, s.sub) in graph


@pytest.mark.parametrize("task", [1, 2])
def test_planning_reachable_from_everywhere(task):
    live = liveness(task)
    assert all(live.values())
    assert (TopState.EXCAVATION, ExcavationSub.DROP) in live if task == 2 else True


# ------------------------------------------------------------ volatile records

def scoring_at(truth, tol=2.0):
    return lambda vid, vtype, xy: math.hypot(xy[0] - truth[vid][0], xy[1] - truth[vid][1]) <= tol


def pass_by(records, vid, xs, y=0.0, t0=0.0, epoch=0):
    t = t0
    for x in xs:
        records = handle_volatile_ping(records, (vid, 3), (x, y, 0.0), LEVER, t, epoch)
        t += 0.1
    return handle_volatile_ping(records, None, (xs[-1] + 0.1, y, 0.0), LEVER, t, epoch), t


def test_ping_lifecycle_and_closest_approach():
    recs, _ = pass_by({}, 7, np.linspace(-2.2, 1.0, 33), y=-1.0)
    r = recs[7]
    assert r.status is VolatileStatus.QUEUED
    # pass centred on mount x = 0 at lateral 1.0 m; chord 3.2 m -> lateral sqrt(4 - 1.6^2) = 1.2
    assert abs(r.best_estimate_xy[0]) < 0.06 and r.best_estimate_xy[1] == pytest.approx(-1.0)
    assert r.closest_distance == pytest.approx(1.2, abs=0.05)


def test_illegal_status_transition_rejected():
    r = VolatileRecord(1, 2, np.zeros(2), 2.0, VolatileStatus.SCORED)
    with pytest.raises(ValueError):
        r.with_status(VolatileStatus.QUEUED)


def test_candidate_ring_hits_offset_volatile():
    recs, _ = pass_by({}, 1, np.linspace(-1.2, 1.2, 25))
    r = recs[1]
    truth = (0.6, 1.7)   # volatile truly 1.7 m to the left of the pass
    hits = [math.hypot(*(candidate_location(r, k) - truth)) <= 0.4 for k in range(5)]
    assert any(hits)


def test_report_priority_and_cooldown():
    recs = {}
    recs, t = pass_by(recs, 1, np.linspace(0, 2, 21), t0=0.0)
    recs, t = pass_by(recs, 2, np.linspace(10, 12, 21), t0=t)
    truth = {1: (100.0, 0.0), 2: (10.6 + 0.9, 0.0)}
    ch = ReportChannel(rng=np.random.default_rng(5))
    recs, ch, rep = attempt_report(recs, ch, scoring_at(truth), 5.0)
    assert rep["id"] == 1 and not rep["scored"]
    times = [5.0]
    order = [1]
    for t in np.arange(5.0, 400.0, 0.5):
        recs, ch, rep = attempt_report(recs, ch, scoring_at(truth), float(t))
        if rep:
            times.append(float(t))
            order.append(rep["id"])
    assert order[1] == 2                          # a fresh volatile goes before a retry
    assert recs[2].status is VolatileStatus.SCORED
    assert recs[1].status is VolatileStatus.EXHAUSTED and recs[1].attempts == 5
    assert min(np.diff(times)) >= 15.0


def test_reports_blocked_while_sensing():
    recs, _ = pass_by({}, 1, [0.0, 0.1])
    ch = ReportChannel()
    recs, ch, rep = attempt_report(recs, ch, lambda *a: True, 0.0, blocked=True)
    assert rep is None and ch.last_report is None


def test_homing_correction_shifts_only_current_epoch():
    recs, _ = pass_by({}, 1, [0.0, 1.0], epoch=0)
    recs, _ = pass_by(recs, 2, [5.0, 6.0], epoch=1)
    before = {k: r.best_estimate_xy.copy() for k, r in recs.items()}
    out, epoch = apply_homing_correction(recs, (1.0, -2.0), 1)
    assert epoch == 2
    assert np.allclose(out[1].best_estimate_xy, before[1])
    assert np.allclose(out[2].best_estimate_xy, before[2] + [1.0, -2.0])


def test_homing_correction_scaled_by_odometer():
    r = VolatileRecord(1, 1, np.zeros(2), 2.0, VolatileStatus.QUEUED, odometer=25.0)
    out, _ = apply_homing_correction({1: r}, (2.0, 0.0), 0, odometer_span=(0.0, 100.0))
    assert np.allclose(out[1].best_estimate_xy, [0.5, 0.0])


# ------------------------------------------------------------ excavation

def volatile(mass=1.0):
    return SimpleNamespace(id=3, initial_mass=mass, remaining_mass=mass)


def test_two_cycles_for_full_mass():
    v = volatile()
    out = run_excavation_cycle({"in_position": True}, {"in_position": True}, v)
    assert out.success and out.cycles == 2
    assert out.dug_mass == pytest.approx(1.0) and out.dropped_mass == pytest.approx(1.0)
    assert v.remaining_mass == pytest.approx(0.0)


@given(st.floats(0.05, 5.0), st.floats(0.1, 1.0))
def test_mass_conserved(mass, capacity):
    v = volatile(mass)
    out = run_excavation_cycle({"in_position": True}, {"in_position": True}, v, capacity=capacity,
                               timeout=1e5)
    assert out.dropped_mass + out.held_mass + v.remaining_mass == pytest.approx(mass)
    assert out.cycles == math.ceil(1.0 / capacity - 1e-9)


def test_three_empty_digs_request_homing():
    cyc = ExcavationCycle(1, 1.0)
    cyc.on_in_position(0.0)
    cyc.on_arm_homed(1.0)
    for k in range(3):
        cyc.on_dig(0.0, 2.0 + k)
    assert cyc.homing_due and cyc.sub is ExcavationSub.DIG and cyc.attempt_index == 3


def test_drop_needs_hauler_feedback_and_times_out():
    calls = []

    def never(t):
        calls.append(t)
        return False
    out = run_excavation_cycle({"in_position": True}, {}, volatile(), hauler_ready=never)
    assert not out.success and out.cause == "hauler_timeout"
    assert out.dropped_mass == 0.0 and out.held_mass == pytest.approx(0.5)
    assert max(calls) - min(calls) >= 120.0 - 1.0


def test_overall_timeout_without_position():
    out = run_excavation_cycle({"in_position": False}, {"in_position": True}, volatile(), timeout=50.0)
    assert out.cause == "timeout" and out.cycles == 0


def test_ping_for_scored_volatile_changes_nothing():
    r = VolatileRecord(7, 1, np.array([1.0, 1.0]), 2.0, VolatileStatus.SCORED, attempts=1)
    out = handle_volatile_ping({7: r}, (7, 1), (5.0, 5.0, 0.0), LEVER, 10.0)
    assert out[7] is r


def test_report_examples_at_one_point_two_and_three_metres():
    for dist, status in ((1.2, VolatileStatus.SCORED), (3.0, VolatileStatus.QUEUED)):
        r = VolatileRecord(1, 1, np.array([0.0, 0.0]), 2.0, VolatileStatus.QUEUED)
        recs, _, rep = attempt_report({1: r}, ReportChannel(), scoring_at({1: (dist, 0.0)}), 0.0)
        assert recs[1].status is status and rep["attempt"] == 1


def test_zero_drift_correction_is_identity():
    recs, _ = pass_by({}, 1, [0.0, 1.0])
    out, _ = apply_homing_correction(recs, (0.0, 0.0), 0)
    assert np.array_equal(out[1].best_estimate_xy, recs[1].best_estimate_xy)
