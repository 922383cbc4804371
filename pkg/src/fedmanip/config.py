"""Experiment configuration: defaults, TOML round-trip, CLI overrides.

One flat dataclass carries every knob; the TOML file groups the same fields
into sections purely for readability.  The effective configuration is
echoed verbatim into every run's summary so a run can always be reproduced
from its own output directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

__all__ = ["ConfigError", "ExperimentConfig", "parse_toml", "parse_set_option"]

ATTACK_KINDS = ("none", "augmp", "alie", "rmp")
DEFENSE_KINDS = ("none", "distance", "similarity", "both")


class ConfigError(ValueError):
    """Invalid configuration content, with the offending key in the message."""


@dataclass
class ExperimentConfig:
    # [run]
    seed: int = 0
    agents: int = 5
    adversaries: int = 2
    rounds: int = 50
    local_epochs: int = 5
    server_lr: float = 1.0
    local_lr: float = 0.1
    attack: str = "none"
    defense: str = "none"

    # [data]
    input_dim: int = 20
    classes: int = 4
    train_per_class: int = 100
    test_per_class: int = 50
    separation: float = 6.0
    dirichlet_beta: float = 0.3

    # [model]
    lora_rank: int = 2
    lora_alpha: float = 4.0
    lora_dropout: float = 0.1
    dropout_enabled: bool = False
    lora_a_init_std: float = 0.0
    scaling_mode: str = "alpha_over_r"
    hidden_dims: list = field(default_factory=list)

    # [attack_knobs]
    visibility: float = 1.0
    select_dim: int = 32
    select_policy: str = "variance-top"
    row_policy: str = "random"
    threshold_margin: float = 0.0
    similarity_percentile: float = 95.0
    d_threshold_init: float = 2.0
    sim_threshold_init: float = 0.9
    distance_margin: float = 0.85
    similarity_margin: float = 0.1
    dual_step: float = 0.05
    rho_lambda: float = 1.0
    rho_theta: float = 5.0
    current_band_margin: float = 0.9
    sibling_spread: float = 0.55
    inner_steps: int = 50
    inner_step_size: float = 0.1
    grad_clip: float = 10.0
    similarity_policy: str = "max"
    penalty_form: str = "paper"
    lse_temperature: float = 50.0
    al_penalty_off: bool = False
    grl_off: bool = False
    objective_holdout: float = 0.2
    alie_z: float = 1.0
    alie_z_policy: str = "fixed"
    alie_sign_policy: str = "against"
    rmp_scale: float = 1.0

    # [vgae]
    vgae_hidden1: int = 64
    vgae_hidden2: int = 32
    vgae_epochs: int = 30
    vgae_lr: float = 0.01
    vgae_features: str = "updates"
    vgae_infer: str = "mean"

    # [defense_knobs]
    defense_threshold_mode: str = "broadcast"
    defense_score_policy: str = "mean"

    # [output]
    out_dir: str = "runs/out"
    debug: bool = False

    # [paper_scale] - inert documentation of the full-scale settings this
    # desk-scale surrogate stands in for; nothing reads these.
    paper_scale: dict = field(
        default_factory=lambda: {
            "local_lr": "5e-5",
            "batch_size": "64, 128",
            "test_batch_size": "256, 512",
            "max_seq_len": "128, 256",
            "lora_rank_grid": "8, 32, 128, 256",
            "lora_alpha_grid": "16, 64, 256, 512",
        }
    )

    def validate(self) -> None:
        def require(cond: bool, key: str, message: str) -> None:
            if not cond:
                raise ConfigError(f"{key}: {message}")

        require(self.agents >= 2, "run.agents", "need at least two benign agents")
        require(self.adversaries >= 0, "run.adversaries", "must be nonnegative")
        require(self.rounds >= 1, "run.rounds", "must be at least one round")
        require(self.local_epochs >= 0, "run.local_epochs", "must be nonnegative")
        require(self.attack in ATTACK_KINDS, "run.attack", f"must be one of {ATTACK_KINDS}")
        require(self.defense in DEFENSE_KINDS, "run.defense", f"must be one of {DEFENSE_KINDS}")
        require(self.classes >= 2, "data.classes", "need at least two classes")
        require(
            self.input_dim >= self.classes - 1,
            "data.input_dim",
            "too small for equidistant class means",
        )
        require(self.train_per_class >= 1, "data.train_per_class", "must be positive")
        require(self.test_per_class >= 1, "data.test_per_class", "must be positive")
        require(self.separation >= 0.0, "data.separation", "must be nonnegative")
        require(self.dirichlet_beta > 0.0, "data.dirichlet_beta", "must be positive")
        require(self.lora_rank >= 1, "model.lora_rank", "must be positive")
        require(0.0 <= self.lora_dropout < 1.0, "model.lora_dropout", "must lie in [0, 1)")
        require(self.lora_a_init_std >= 0.0, "model.lora_a_init_std", "must be nonnegative")
        require(
            self.scaling_mode in ("alpha_over_r", "none"),
            "model.scaling_mode",
            "must be 'alpha_over_r' or 'none'",
        )
        require(0.0 < self.visibility <= 1.0, "attack_knobs.visibility", "must lie in (0, 1]")
        require(self.select_dim >= 2, "attack_knobs.select_dim", "need at least two coordinates")
        require(
            0.0 <= self.similarity_percentile <= 100.0,
            "attack_knobs.similarity_percentile",
            "must lie in [0, 100]",
        )
        require(0.0 < self.distance_margin <= 1.0, "attack_knobs.distance_margin", "must lie in (0, 1]")
        require(self.dual_step > 0.0, "attack_knobs.dual_step", "must be positive")
        require(self.rho_lambda > 0.0, "attack_knobs.rho_lambda", "must be positive")
        require(self.rho_theta > 0.0, "attack_knobs.rho_theta", "must be positive")
        require(
            0.0 < self.current_band_margin <= 1.0,
            "attack_knobs.current_band_margin",
            "must lie in (0, 1]",
        )
        require(
            0.0 <= self.sibling_spread < 1.0,
            "attack_knobs.sibling_spread",
            "must lie in [0, 1)",
        )
        require(self.inner_steps >= 1, "attack_knobs.inner_steps", "must be at least one")
        require(self.inner_step_size >= 0.0, "attack_knobs.inner_step_size", "must be nonnegative")
        require(
            0.0 < self.objective_holdout < 1.0,
            "attack_knobs.objective_holdout",
            "must lie in (0, 1)",
        )
        require(
            self.alie_z_policy in ("fixed", "quantile"),
            "attack_knobs.alie_z_policy",
            "must be 'fixed' or 'quantile'",
        )
        require(self.rmp_scale > 0.0, "attack_knobs.rmp_scale", "must be positive")
        require(self.vgae_epochs >= 0, "vgae.epochs", "must be nonnegative")
        require(
            self.defense_threshold_mode in ("broadcast", "oracle"),
            "defense_knobs.threshold_mode",
            "must be 'broadcast' or 'oracle'",
        )
        require(
            self.defense_score_policy in ("mean", "max"),
            "defense_knobs.score_policy",
            "must be 'mean' or 'max'",
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# Section -> field names, used both for parsing and for serialisation.
SECTIONS: dict[str, tuple[str, ...]] = {
    "run": (
        "seed", "agents", "adversaries", "rounds", "local_epochs",
        "server_lr", "local_lr", "attack", "defense",
    ),
    "data": (
        "input_dim", "classes", "train_per_class", "test_per_class",
        "separation", "dirichlet_beta",
    ),
    "model": (
        "lora_rank", "lora_alpha", "lora_dropout", "dropout_enabled",
        "lora_a_init_std", "scaling_mode", "hidden_dims",
    ),
    "attack_knobs": (
        "visibility", "select_dim", "select_policy", "row_policy",
        "threshold_margin", "similarity_percentile", "d_threshold_init",
        "sim_threshold_init", "distance_margin", "similarity_margin",
        "dual_step", "rho_lambda", "rho_theta",
        "current_band_margin", "sibling_spread", "inner_steps",
        "inner_step_size", "grad_clip", "similarity_policy", "penalty_form",
        "lse_temperature", "al_penalty_off", "grl_off", "objective_holdout",
        "alie_z", "alie_z_policy", "alie_sign_policy", "rmp_scale",
    ),
    "vgae": (
        "vgae_hidden1", "vgae_hidden2", "vgae_epochs", "vgae_lr",
        "vgae_features", "vgae_infer",
    ),
    "defense_knobs": ("defense_threshold_mode", "defense_score_policy"),
    "output": ("out_dir", "debug"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _field_section(name: str) -> str:
    for section, names in SECTIONS.items():
        if name in names:
            return section
    raise ConfigError(f"{name}: unknown configuration field")


def _coerce(name: str, value, current) -> object:
    """Coerce a parsed TOML value (or CLI string) to the field's type."""
    target = type(current)
    if target is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if target is int:
        if isinstance(value, bool):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, str) and value.lstrip("+-").isdigit():
            return int(value)
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if target is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if target is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    if target is list:
        if isinstance(value, list):
            return [int(v) for v in value]
        if isinstance(value, str):
            items = [part.strip() for part in value.split(",") if part.strip()]
            return [int(part) for part in items]
        raise ConfigError(f"{name}: expected a list of integers, got {value!r}")
    if target is dict:
        if isinstance(value, dict):
            return {str(k): str(v) for k, v in value.items()}
        raise ConfigError(f"{name}: expected a table, got {value!r}")
    raise ConfigError(f"{name}: unsupported field type {target}")


def parse_toml(text: str) -> ExperimentConfig:
    """Parse a configuration file; unknown sections or keys are errors."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    cfg = ExperimentConfig()
    for section, content in data.items():
        if section == "paper_scale":
            cfg.paper_scale = _coerce("paper_scale", content, cfg.paper_scale)
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in content.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            setattr(cfg, key, _coerce(f"{section}.{key}", value, getattr(cfg, key)))
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_toml(Path(path).read_text(encoding="utf-8"))


def parse_set_option(cfg: ExperimentConfig, option: str) -> ExperimentConfig:
    """Apply one ``--set section.key=value`` override in place."""
    if "=" not in option:
        raise ConfigError(f"--set needs key=value, got {option!r}")
    key, raw = option.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS or name not in SECTIONS[section]:
            raise ConfigError(f"{key}: unknown configuration key")
    else:
        name = key
        _field_section(name)
    setattr(cfg, name, _coerce(key, raw.strip(), getattr(cfg, name)))
    return cfg


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialise value {value!r}")


def serialize_toml(cfg: ExperimentConfig) -> str:
    """Write the configuration back out; parse(serialize(cfg)) == cfg."""
    lines = []
    for section, names in SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            lines.append(f"{name} = {_toml_value(getattr(cfg, name))}")
        lines.append("")
    lines.append("[paper_scale]")
    for key, value in cfg.paper_scale.items():
        lines.append(f"{key} = {_toml_value(value)}")
    lines.append("")
    return "\n".join(lines)
