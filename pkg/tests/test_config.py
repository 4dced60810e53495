import dataclasses
import pathlib

import pytest

from seqlo.config import (
    Config,
    config_from_dict,
    config_to_dict,
    desk,
    full,
    load_config,
    toy,
)

CONFIG_DIR = pathlib.Path(__file__).resolve().parent.parent / "configs"


def test_desk_toml_matches_code_profile():
    assert load_config(str(CONFIG_DIR / "desk.toml")) == desk()


def test_full_toml_matches_code_profile():
    assert load_config(str(CONFIG_DIR / "full.toml")) == full()


def test_profiles_validate():
    for cfg in (desk(), full(), toy()):
        assert cfg.n_levels == 4


def test_dict_round_trip():
    cfg = full()
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_levels_must_strictly_decrease():
    with pytest.raises(ValueError, match="decrease"):
        Config(levels=(64, 64, 32, 16))


def test_alphas_length_checked():
    with pytest.raises(ValueError, match="alphas"):
        Config(alphas=(1.0, 0.5))


def test_widths_length_checked():
    with pytest.raises(ValueError):
        Config(feature_widths=(8, 16))


def test_dropout_range_checked():
    with pytest.raises(ValueError, match="dropout"):
        Config(dropout=1.0)
    with pytest.raises(ValueError, match="dropout"):
        Config(dropout=-0.1)


def test_n_points_must_cover_finest_level():
    with pytest.raises(ValueError, match="n_points"):
        Config(n_points=64)  # finest desk level is 128


def test_unknown_key_rejected():
    raw = config_to_dict(desk())
    raw["model"]["bogus"] = 1
    with pytest.raises(ValueError, match="bogus"):
        config_from_dict(raw)


def test_unknown_section_rejected():
    raw = config_to_dict(desk())
    raw["extras"] = {}
    with pytest.raises(ValueError, match="extras"):
        config_from_dict(raw)


def test_tuple_fields_come_back_as_tuples():
    cfg = config_from_dict({"model": {"levels": [8, 4, 2, 1],
                                      "feature_widths": [2, 2, 2, 2]},
                            "train": {"n_points": 8}})
    assert cfg.levels == (8, 4, 2, 1)
    assert isinstance(cfg.levels, tuple)


def test_config_is_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        desk().seed = 9


def test_with_overrides_returns_new_config():
    base = desk()
    assert base.with_overrides(seed=7).seed == 7
    assert base.seed == 0
