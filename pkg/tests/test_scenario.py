import io

import pytest

from cpmsim.scenario import (FIXTURE_NAMES, Requirement, ScenarioError,
                             load_fixture, load_scenario, resolve_scenario,
                             save_scenario)

MINIMAL = """cpmscenario v1
name tiny
map outer_circle
kind circle
topology centralized
seed 7
duration_s 5
vehicle 1 internal path=loop s=0.0 speed=0.8
vehicle 2 internal path=loop s=3.0 speed=0.8
"""


def load_text(text, name="inline"):
    return load_scenario(io.StringIO(text), name=name)


def test_minimal_scenario_parses():
    spec = load_text(MINIMAL)
    assert spec.name == "tiny"
    assert spec.map_id == "outer_circle"
    assert spec.seed == 7
    assert spec.duration_ns == 5_000_000_000
    assert len(spec.vehicles) == 2
    assert spec.vehicles[0].ref_speed == 0.8
    # Defaults fill in the rest.
    assert spec.hlc_period_ns == 100_000_000
    assert spec.fault.loss_probability == 0.0


def test_round_trip_save_load(tmp_path):
    spec = load_fixture("platoon8")
    out = tmp_path / "copy.scn"
    save_scenario(spec, out)
    again = load_scenario(out)
    # Name comes from the file stem; everything else must match.
    assert again.map_id == spec.map_id
    assert again.vehicles == spec.vehicles
    assert again.requires == spec.requires
    assert again.noise == spec.noise
    assert again.fault == spec.fault
    assert again.duration_ns == spec.duration_ns


def test_bad_header_rejected():
    with pytest.raises(ScenarioError, match="line 1"):
        load_text("cpmscenario v2\nmap outer_circle\n")


def test_unknown_directive_carries_line_number():
    text = MINIMAL + "frobnicate 3\n"
    with pytest.raises(ScenarioError, match="line 10"):
        load_text(text)


def test_malformed_vehicle_line():
    text = MINIMAL.replace("vehicle 2 internal path=loop s=3.0 speed=0.8",
                           "vehicle 2 internal s=3.0")
    with pytest.raises(ScenarioError, match="line 9"):
        load_text(text)


def test_missing_required_field():
    text = MINIMAL.replace("seed 7\n", "")
    with pytest.raises(ScenarioError, match="seed"):
        load_text(text)


def test_duplicate_vehicle_ids():
    text = MINIMAL.replace("vehicle 2", "vehicle 1")
    with pytest.raises(ScenarioError, match="overlap|duplicate"):
        load_text(text)


def test_initial_overlap_rejected():
    text = MINIMAL.replace("s=3.0", "s=0.1")
    with pytest.raises(ScenarioError, match="overlap"):
        load_text(text)


def test_ref_speed_above_limit():
    text = MINIMAL.replace("speed=0.8", "speed=9.0")
    with pytest.raises(ScenarioError, match="ref speed"):
        load_text(text)


def test_bad_require_operator():
    text = MINIMAL + "require collisions != 0\n"
    with pytest.raises(ScenarioError, match="operator"):
        load_text(text)


def test_periods_must_divide():
    text = MINIMAL + "hlc_period_ms 50\nmlc_period_ms 15\n"
    with pytest.raises(ScenarioError, match="multiple"):
        load_text(text)


def test_comments_and_blank_lines_ignored():
    text = MINIMAL.replace("seed 7", "seed 7  # the answer\n\n# comment line")
    assert load_text(text).seed == 7


def test_requirement_holds():
    assert Requirement("collisions", "==", 0).holds(0)
    assert not Requirement("collisions", "==", 0).holds(1)
    assert Requirement("tracking_rms", "<=", 0.05).holds(0.03)
    assert Requirement("min_center_distance", ">=", 0.3).holds(0.4)
    assert str(Requirement("collisions", "==", 0)) == "collisions == 0"


def test_all_fixtures_load_and_validate():
    for name in FIXTURE_NAMES:
        spec = load_fixture(name)
        assert spec.name == name
        assert spec.vehicles


def test_resolve_scenario_fixture_or_path(tmp_path):
    assert resolve_scenario("circle18").name == "circle18"
    p = tmp_path / "mine.scn"
    p.write_text(MINIMAL)
    assert resolve_scenario(str(p)).name == "tiny"
    with pytest.raises((ScenarioError, OSError)):
        resolve_scenario("no_such_fixture_or_file")


def test_fault_and_noise_directives():
    text = MINIMAL + ("loss_probability 0.25\nextra_delay_periods 2\n"
                      "odometer_sigma 0.02\nips_dropout 0.1\n")
    spec = load_text(text)
    assert spec.fault.loss_probability == 0.25
    assert spec.fault.extra_delay_periods == 2
    assert spec.noise.odometer_sigma == 0.02
    assert spec.ips_dropout == 0.1
