import json
from pathlib import Path

import pytest
import yaml

from losssense.config import ConfigError, ScenarioConfig, load_config

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_roundtrip(path):
    cfg = load_config(path)
    again = ScenarioConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert ScenarioConfig.from_dict(again.to_dict()).to_dict() == again.to_dict()


def test_json_and_yaml_agree(tmp_path):
    data = {
        "probe": {"kind": "generic_nds", "energies": [1.0], "distribution": [{"0": 0.5, "2": 0.5}]},
        "loss": {"etas": [0.3], "parametrization": "eta"},
        "seed": 12,
    }
    (tmp_path / "a.json").write_text(json.dumps(data))
    (tmp_path / "a.yaml").write_text(yaml.safe_dump(data))
    assert load_config(tmp_path / "a.json") == load_config(tmp_path / "a.yaml")


@pytest.mark.parametrize("bad", [
    {"probes": {}},
    {"loss": {"etas": [0.5], "gamma": 1}},
    {"simulation": {"shots": 10, "burn_in": 3}},
    {"tolerances": {"eps": 1e-3}},
    {"output": {"file": "x"}},
    {"probe": {"kind": "tmsv", "energies": [1.0], "squeezing": 0.3}},
])
def test_unknown_keys_rejected(bad):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(bad)


@pytest.mark.parametrize("bad", [
    {"loss": {"etas": [1.5]}},
    {"loss": {"parametrization": "theta"}},
    {"measurement": "homodyne"},
    {"output": {"format": "xml"}},
    {"seed": -1},
    {"seed": 2 ** 64},
    {"ancilla_policy": "maximal"},
    {"probe": {"kind": "tmsv", "energies": [1.0]}, "loss": {"etas": [0.5, 0.5]}},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(bad)


def test_unparsable_file(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("probe: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_defaults():
    cfg = ScenarioConfig.from_dict({})
    assert cfg.tolerances.eps_trunc == 1e-8
    assert cfg.tolerances.rank_tol == 1e-12
    assert cfg.tolerances.prob_tol == 1e-15
    assert cfg.tolerances.fd_step == 1e-3
    assert cfg.simulation.grid_points == 512
    assert cfg.seed == 0
