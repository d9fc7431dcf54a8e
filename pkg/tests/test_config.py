"""Run-config validation and loading."""

import json

import pytest

from config import EncoderConfig, full_scale_encoder_config, load_run_config, parse_run_config
from core.errors import ConfigError


def test_missing_path_gives_desk_defaults(desk_cfg):
    assert load_run_config(None) == desk_cfg
    assert desk_cfg.encoder.layers_total == desk_cfg.encoder.n_2d + desk_cfg.encoder.n_3d


@pytest.mark.parametrize("name", ["desk.json", "full_scale.json", "soft_routing.json"])
def test_shipped_configs_load(configs_dir, name):
    load_run_config(configs_dir / name)


def test_full_scale_layout(configs_dir):
    encoder = load_run_config(configs_dir / "full_scale.json").encoder
    assert (encoder.layers_total, encoder.n_2d, encoder.n_3d, encoder.n_moe) == (23, 6, 17, 4)
    assert encoder.grid_size == 24
    assert encoder.n_ffn == 19
    assert encoder.is_moe(19) and not encoder.is_moe(18)
    assert encoder == full_scale_encoder_config()


@pytest.mark.parametrize(
    "encoder",
    [
        {"layers_total": 6, "n_2d": 2, "n_3d": 3},
        {"n_moe": 5},
        {"merge_schedule": [3, 3]},
        {"merge_schedule": [6]},
        {"patch": 10},
        {"heads": 3},
    ],
)
def test_bad_encoder_layouts(encoder):
    with pytest.raises(ConfigError):
        parse_run_config({"encoder": encoder})


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        parse_run_config({"encoder": {"depth": 3}})


def test_cross_section_checks():
    with pytest.raises(ConfigError):
        parse_run_config({"moe": {"text_layers": 99}})
    with pytest.raises(ConfigError):
        parse_run_config({"data": {"size": 32}})


def test_stage_lookup(tiny_cfg):
    assert tiny_cfg.stage(2).seed == 1
    with pytest.raises(ConfigError):
        tiny_cfg.stage(3)


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")


def test_pool_after_last_merge():
    assert EncoderConfig(merge_schedule=[1, 3]).pool_after() == 3
    assert EncoderConfig(merge_schedule=[]).pool_after() == 5


def test_to_json_round_trips(tiny_cfg):
    assert parse_run_config(json.loads(tiny_cfg.to_json())) == tiny_cfg


def test_pre_commit_runs_the_linters(configs_dir):
    hooks = (configs_dir.parent / ".pre-commit-config.yaml").read_text(encoding="utf-8")
    assert "id: ruff" in hooks and "id: mypy" in hooks
