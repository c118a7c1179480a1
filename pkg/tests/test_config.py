import pytest

from lunarsim.config import ConfigError, MissionConfig, Scenario, load_scenario, load_world_config


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_without_file():
    scn = load_scenario()
    assert scn == Scenario()
    assert scn.world.n_volatiles == 28 and scn.estimator.mode == "viwo"


@pytest.mark.parametrize("name", ["default.yaml", "task1.yaml", "task2.yaml", "slip_terrain.yaml"])
def test_shipped_scenarios_load(scenario_dir, name):
    scn = load_scenario(scenario_dir / name)
    assert scn.mission.tick > 0


def test_default_file_matches_builtin_defaults(scenario_dir):
    assert load_scenario(scenario_dir / "default.yaml") == Scenario()


def test_nested_sections_and_tuples(tmp_path):
    p = write(tmp_path, """
world:
  seed: 4
  sensor_rates: {imu_hz: 50}
  slip_zones:
    - {center: [1, 2], radius: 3, slip_factor: 0.5}
mission: {tick: 0.05, imu_substeps: 1}
estimator: {mode: wio}
""")
    scn = load_scenario(p)
    assert scn.world.seed == 4 and scn.world.sensor_rates.imu_hz == 50.0
    assert scn.world.sensor_rates.camera_hz == 10.0
    assert scn.world.slip_zones[0].center == (1.0, 2.0) and scn.world.slip_zones[0].slip_factor == 0.5
    assert scn.mission.tick == 0.05 and scn.estimator.mode == "wio"


def test_bare_world_file(tmp_path):
    p = write(tmp_path, "seed: 9\nn_volatiles: 3\n")
    assert load_scenario(p).world.n_volatiles == 3
    assert load_world_config(p, seed=2).seed == 2


def test_overrides_win(tmp_path):
    p = write(tmp_path, "world: {seed: 9}\n")
    assert load_scenario(p, seed=1).world.seed == 1


@pytest.mark.parametrize("text", [
    "world: {seeed: 1}\n",
    "world: {sensor_rates: {imu_hz: -1}}\n",
    "world: {slip_zones: [{center: [0, 0], radius: 1, slip_factor: 2}]}\n",
    "mission: {scoop_fraction: 0.9}\n",
    "estimator: {mode: magic}\n",
    "world: [1, 2]\n",
    "world: {seed: 1\n",
    "- a\n- b\n",
])
def test_bad_files_raise_config_error(tmp_path, text):
    with pytest.raises(ConfigError):
        load_scenario(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.yaml")


def test_mission_validation():
    with pytest.raises(ConfigError):
        MissionConfig(report_min_delay=40.0, report_max_delay=30.0)
