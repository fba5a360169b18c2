"""Run-configuration unit tests: validation, serialization round trips,
and the beta-grid grammar."""

import json

import pytest

from pamlab import ConfigError, RunConfig, parse_beta_grid


def test_defaults_are_valid_and_frozen():
    cfg = RunConfig()
    p = cfg.model_params()
    assert p.replicas == cfg.replicas and p.box_radius is not None
    with pytest.raises(AttributeError):
        cfg.beta = 1.0


def test_model_field_violations_surface_at_construction():
    with pytest.raises(ConfigError, match="stability"):
        RunConfig(kappa=100.0, dt=0.01)
    with pytest.raises(ConfigError, match="unknown test"):
        RunConfig(tests=("martingale", "bogus"))
    with pytest.raises(ConfigError, match="workers"):
        RunConfig(workers=0)
    with pytest.raises(ConfigError, match="pairs"):
        RunConfig(pairs=1)
    with pytest.raises(ConfigError, match="window"):
        RunConfig(window=-1.0)


def test_round_trip_through_json(tmp_path):
    cfg = RunConfig(d=2, beta=0.7, T=1.0, dt=0.02, replicas=10, tests=["qv"])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = RunConfig.from_json(path)
    assert back == cfg
    assert back.tests == ("qv",)
    assert back.canonical_json() == cfg.canonical_json()


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        RunConfig.from_dict({"beta": 0.5, "bogus": 1})


def test_from_json_error_paths(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.from_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        RunConfig.from_json(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        RunConfig.from_json(arr)


def test_beta_grid_grammar():
    assert parse_beta_grid("0.25:1.25:0.25") == [0.25, 0.5, 0.75, 1.0, 1.25]
    assert parse_beta_grid("1.0:1.0:0.5") == [1.0]
    assert parse_beta_grid("0.1:0.3:0.1") == [0.1, 0.2, 0.3]  # inclusive stop
    for bad in ("1:2", "a:b:c", "1.0:0.5:0.1", "1.0:2.0:0"):
        with pytest.raises(ConfigError):
            parse_beta_grid(bad)
