"""Experiment configuration: parsing, validation, seed derivation."""

import dataclasses
import json

import pytest

from swarmwind.config import (ConfigError, default_config, from_dict,
                              load_config, save_config, to_dict)


def test_default_round_trip():
    cfg = default_config(3)
    again = from_dict(to_dict(cfg))
    assert again == cfg


def test_defaults_match_experiment_shape():
    cfg = default_config()
    assert cfg.turbulence.grid == (64, 64, 128)
    assert cfg.mission.n_uas == 9
    assert cfg.mission.duration == 400.0
    assert cfg.pinn.width == 128 and cfg.pinn.depth == 4
    assert cfg.eval.uas_counts == (4, 5, 6, 7, 9, 12)


def test_seed_derivation_offsets():
    cfg = default_config(5)
    assert cfg.seed == 5
    assert cfg.turbulence.rng_seed == 5
    assert cfg.estimator.seed == 6
    assert cfg.pinn.seed == 7


def test_explicit_stage_seed_wins():
    cfg = from_dict({"seed": 5, "pinn": {"seed": 99}})
    assert cfg.pinn.seed == 99
    assert cfg.estimator.seed == 6


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="top-level"):
        from_dict({"seed": 0, "turbulance": {}})


def test_unknown_section_key_names_the_section():
    with pytest.raises(ConfigError, match="mission.*unknown keys.*n_uass"):
        from_dict({"mission": {"n_uass": 9}})


def test_section_value_error_is_wrapped():
    with pytest.raises(ConfigError, match="turbulence: n_modes"):
        from_dict({"turbulence": {"n_modes": 0}})


def test_lists_coerce_to_tuples():
    cfg = from_dict({"turbulence": {"grid": [8, 8, 16]},
                     "eval": {"uas_counts": [2, 3]}})
    assert cfg.turbulence.grid == (8, 8, 16)
    assert cfg.eval.uas_counts == (2, 3)


@pytest.mark.parametrize("seed", [-1, 1.5, "7", None])
def test_bad_seed_rejected(seed):
    with pytest.raises(ConfigError, match="seed"):
        from_dict({"seed": seed})


def test_non_object_root_and_section():
    with pytest.raises(ConfigError, match="root"):
        from_dict([1, 2])
    with pytest.raises(ConfigError, match="vehicle"):
        from_dict({"vehicle": [1, 2]})


def test_file_round_trip(tmp_path):
    cfg = from_dict({"seed": 2, "mission": {"n_uas": 3, "duration": 12.5}})
    path = tmp_path / "exp.json"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_config_is_frozen():
    cfg = default_config()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.seed = 1


def test_to_dict_is_json_ready():
    json.dumps(to_dict(default_config()))
