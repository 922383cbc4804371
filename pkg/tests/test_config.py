from __future__ import annotations

from pathlib import Path

import pytest

from fedmanip.config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_set_option,
    parse_toml,
    serialize_toml,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_defaults_validate():
    ExperimentConfig().validate()


def test_default_config_file_matches_defaults():
    cfg = load_config(CONFIG_DIR / "default.toml")
    assert cfg == ExperimentConfig()


def test_roundtrip_parse_serialize():
    cfg = ExperimentConfig()
    cfg.attack = "augmp"
    cfg.seed = 42
    cfg.hidden_dims = [16, 8]
    cfg.visibility = 0.75
    assert parse_toml(serialize_toml(cfg)) == cfg


def test_set_override_types():
    cfg = ExperimentConfig()
    parse_set_option(cfg, "run.attack=alie")
    parse_set_option(cfg, "run.seed=9")
    parse_set_option(cfg, "attack_knobs.visibility=0.5")
    parse_set_option(cfg, "model.dropout_enabled=true")
    parse_set_option(cfg, "model.hidden_dims=12,6")
    assert cfg.attack == "alie"
    assert cfg.seed == 9
    assert cfg.visibility == 0.5
    assert cfg.dropout_enabled is True
    assert cfg.hidden_dims == [12, 6]


def test_set_rejects_unknown_key():
    with pytest.raises(ConfigError):
        parse_set_option(ExperimentConfig(), "run.bogus=1")
    with pytest.raises(ConfigError):
        parse_set_option(ExperimentConfig(), "nonsense")


def test_parse_rejects_unknown_section_and_key():
    with pytest.raises(ConfigError):
        parse_toml("[wat]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_toml("[run]\nbogus = 1\n")


def test_parse_rejects_bad_types():
    with pytest.raises(ConfigError):
        parse_toml('[run]\nseed = "many"\n')
    with pytest.raises(ConfigError):
        parse_toml("[run]\nattack = 3\n")


def test_validation_messages_are_typed():
    cfg = ExperimentConfig()
    cfg.attack = "meteor"
    with pytest.raises(ConfigError, match="run.attack"):
        cfg.validate()
    cfg = ExperimentConfig()
    cfg.dirichlet_beta = 0.0
    with pytest.raises(ConfigError, match="dirichlet_beta"):
        cfg.validate()


def test_table2_defaults_pinned():
    # Full-scale settings with a direct surrogate counterpart keep the
    # published values as defaults.
    cfg = ExperimentConfig()
    assert cfg.agents == 5
    assert cfg.adversaries == 2
    assert cfg.rounds == 50
    assert cfg.local_epochs == 5
    assert cfg.server_lr == 1.0
    assert cfg.dirichlet_beta == 0.3
    assert cfg.vgae_hidden1 == 64
    assert cfg.vgae_hidden2 == 32
    assert cfg.vgae_epochs == 30
    assert cfg.vgae_lr == 0.01
    assert cfg.lora_dropout == 0.1
