import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from lunarsim.config import load_scenario

settings.register_profile("lunarsim", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "lunarsim"))

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS


@pytest.fixture(scope="session")
def task1_scenario():
    return load_scenario(SCENARIOS / "task1.yaml")


@pytest.fixture(scope="session")
def task2_scenario():
    return load_scenario(SCENARIOS / "task2.yaml")


@pytest.fixture(scope="session")
def slip_scenario():
    return load_scenario(SCENARIOS / "slip_terrain.yaml")


# ---------------------------------------------------------------- long seeded runs
# Shared by the acceptance suite and the end-to-end checks so each mission is
# simulated once per session.

SEEDS = tuple(range(1, 11))


def _runs(scenario, task, out_dir=None, **kw):
    from lunarsim.runner import simulate
    return {s: simulate(scenario, task=task, seed=s, out_dir=out_dir, **kw) for s in SEEDS}


@pytest.fixture(scope="session")
def task1_runs(task1_scenario, tmp_path_factory):
    return _runs(task1_scenario, 1, tmp_path_factory.mktemp("task1"))


@pytest.fixture(scope="session")
def task1_runs_no_homing(task1_scenario):
    from dataclasses import replace
    scn = replace(task1_scenario, mission=replace(task1_scenario.mission, homing=False))
    return _runs(scn, 1)


@pytest.fixture(scope="session")
def task2_runs(task2_scenario, tmp_path_factory):
    return _runs(task2_scenario, 2, tmp_path_factory.mktemp("task2"))


@pytest.fixture(scope="session")
def slip_medians(slip_scenario):
    import time

    import numpy as np
    from lunarsim.runner import simulate
    t0 = time.perf_counter()
    errs = {m: [simulate(slip_scenario, task=1, seed=s, mode=m).final_error() for s in SEEDS]
            for m in ("wio", "vo", "viwo")}
    return {m: float(np.median(e)) for m, e in errs.items()}, errs, time.perf_counter() - t0


# ---------------------------------------------------------------- acceptance report

def pytest_configure(config):
    config.acceptance_results = {}


@pytest.fixture
def acceptance(request):
    """Record one acceptance verdict: ``acceptance(n, ok, detail)``."""
    results = request.config.acceptance_results

    def record(n, ok, detail):
        results[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.acceptance_results
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        ok, detail = results.get(n, (False, "not run or errored before a verdict"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
