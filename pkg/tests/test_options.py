import json
from pathlib import Path

import pytest

from dcf_stability.common import ConfigError
from dcf_stability.core import MICROSECOND, CollisionModel
from dcf_stability.options import ExperimentConfig, RuntimeOptions, load_config
from dcf_stability.simulator import PolicyKind


def test_defaults_are_table_values():
    config = ExperimentConfig.from_dict({})
    params = config.params()
    assert params.window == 32
    assert params.max_stage == 5
    assert params.sigma == pytest.approx(20 * MICROSECOND)
    assert params.collision_model is CollisionModel.BIANCHI
    assert [c.bandwidth for c in config.channel_specs()] == [11e6]
    assert config.arrivals().rates.tolist() == [0.0, 0.0]


def test_integers_accepted_for_floats():
    config = ExperimentConfig.from_dict({"nodes": [{"rate": 1000000}], "system": {"sigma_us": 9}})
    assert config.arrivals().rates.tolist() == [1e6]
    assert config.params().sigma == pytest.approx(9 * MICROSECOND)


@pytest.mark.parametrize(
    ("raw", "fragment"),
    [
        ({"system": {"windw": 4}}, "system.windw: unknown key"),
        ({"bogus": 1}, "bogus: unknown key"),
        ({"system": {"window": "32"}}, "system.window"),
        ({"system": {"window": 1}}, "window"),
        ({"system": {"collision_model": "nope"}}, "collision_model"),
        ({"nodes": [{"rate": -1.0}]}, "nodes"),
        ({"solver": {"initial_conditions": ["sideways"]}}, "unknown initial conditions"),
        ({"sweep": {"sweep_axis": 5}}, "sweep_axis 5 out of range"),
        ({"simulation": {"replications": 0}}, "replications"),
        ({"policy": {"occupancy": [0.5, 0.5]}}, "occupancy has 2 entries"),
        ({"aloha": {"wbar": [0.5]}}, "wbar"),
    ],
)
def test_invalid_documents(raw, fragment):
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict(raw)
    assert any(fragment in error for error in e.value.errors)


def test_document_must_be_object():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict([1, 2])


def test_round_trip_through_dict():
    raw = {
        "channels": [{"bandwidth": 1e6}, {"bandwidth": 10e6}],
        "nodes": [{"rate": 1e5, "policy": "sac", "stage_ramp": True}] * 3,
        "sweep": {"fixed": [[0.0, 1e5, 1e5]]},
    }
    config = ExperimentConfig.from_dict(raw)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(config.to_dict())))
    assert again == config


def test_node_policies_resolved():
    config = ExperimentConfig.from_dict(
        {
            "channels": [{}, {}],
            "nodes": [{"policy": "sas", "switch_probs": [0.5] * 6, "initial_channel": 1}],
        }
    )
    node = config.sim_config().nodes[0]
    assert node.policy.kind is PolicyKind.SAS
    assert node.initial_channel == 1


def test_initial_condition_grid_appended():
    config = ExperimentConfig.from_dict({"solver": {"ic_grid": 2}})
    labels = [ic.label for ic in config.initial_conditions()]
    assert labels[:2] == ["zero", "near_one"]
    assert len(labels) == 6


def test_vary_axis_defaults_to_other_node():
    assert ExperimentConfig.from_dict({}).vary_axis() == 1
    assert ExperimentConfig.from_dict({"sweep": {"sweep_axis": 1}}).vary_axis() == 0


def test_explicit_slot_cost():
    config = ExperimentConfig.from_dict({"policy": {"slot_cost_us": 1500.0}})
    assert config.slot_cost() == pytest.approx(1500 * MICROSECOND)


def test_load_config_errors(tmp_path: Path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_runtime_options_from_environment(monkeypatch, tmp_path: Path):
    monkeypatch.setenv("DCF_STABILITY_WORKERS", "3")
    monkeypatch.setenv("DCF_STABILITY_OUTPUT_DIR", str(tmp_path))
    runtime = RuntimeOptions()
    assert runtime.workers == 3
    assert runtime.resolve_output_dir(ExperimentConfig()) == tmp_path


def test_output_dir_precedence(monkeypatch, tmp_path: Path):
    monkeypatch.delenv("DCF_STABILITY_OUTPUT_DIR", raising=False)
    config = ExperimentConfig.from_dict({"output": {"directory": str(tmp_path / "cfg")}})
    assert RuntimeOptions().resolve_output_dir(config) == tmp_path / "cfg"
    assert RuntimeOptions().resolve_output_dir(ExperimentConfig()) == Path("results")
    flagged = RuntimeOptions(output_dir=tmp_path / "flag")
    assert flagged.resolve_output_dir(config) == tmp_path / "flag"
