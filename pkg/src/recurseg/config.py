"""Flat key-value configuration shared by the CLI and experiment scripts.

File format: one ``key = value`` per line, ``#`` comments. Every run
writes the fully resolved mapping to ``resolved-config.txt`` in its output
directory so the run can be reproduced from that file alone.
"""

from __future__ import annotations

from pathlib import Path

from .blocks import NetworkConfig
from .losses import LossConfig
from .network import ModelVariant
from .training import TrainSchedule


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, str] = {
    "synth.n": "32",
    "synth.seed": "0",
    "synth.image_size": "128",
    "synth.noise_std": "0.05",
    "synth.recurrence_cue": "0.2",
    "network.levels": "4",
    "network.base_channels": "16",
    "network.input_size": "128",
    "fusion.enabled": "on",
    "correlation.form": "nonlinear",
    "correlation.divergence": "kl",
    "correlation.inject": "off",
    "loss.epsilon": "1e-5",
    "loss.phi": "0.1",
    "loss.prediction_weight": "1.0",
    "train.lr": "5e-4",
    "train.plateau_factor": "0.5",
    "train.plateau_patience": "10",
    "train.early_stop_patience": "50",
    "train.max_epochs": "500",
    "train.batch_size": "8",
    "train.seed": "0",
    "train.grad_clip_norm": "5.0",
    "train.val_fraction": "0.1",
    "train.freeze_encoders": "off",
    "transfer.fusion": "on",
}

_BOOL = {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False}


def load_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def resolve(file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = str(value)
    return cfg


def write_resolved(cfg: dict[str, str], outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "resolved-config.txt"
    lines = [f"{key} = {cfg[key]}" for key in sorted(cfg)]
    path.write_text("\n".join(lines) + "\n")
    return path


def _int(cfg: dict[str, str], key: str) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _float(cfg: dict[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from None


def _bool(cfg: dict[str, str], key: str) -> bool:
    value = cfg[key].lower()
    if value not in _BOOL:
        raise ConfigError(f"{key} must be on/off, got {cfg[key]!r}")
    return _BOOL[value]


def _choice(cfg: dict[str, str], key: str, options: tuple[str, ...]) -> str:
    if cfg[key] not in options:
        raise ConfigError(f"{key} must be one of {options}, got {cfg[key]!r}")
    return cfg[key]


def network_config(cfg: dict[str, str]) -> NetworkConfig:
    return NetworkConfig(
        levels=_int(cfg, "network.levels"),
        base_channels=_int(cfg, "network.base_channels"),
        input_size=_int(cfg, "network.input_size"),
    )


def model_variant(cfg: dict[str, str], include_prediction: bool = True) -> ModelVariant:
    return ModelVariant(
        include_prediction=include_prediction,
        correlation_form=_choice(cfg, "correlation.form", ("nonlinear", "linear", "off")),
        use_fusion=_bool(cfg, "fusion.enabled"),
        inject_correlation=_bool(cfg, "correlation.inject"),
    )


def loss_config(cfg: dict[str, str]) -> LossConfig:
    return LossConfig(
        epsilon=_float(cfg, "loss.epsilon"),
        phi=_float(cfg, "loss.phi"),
        prediction_weight=_float(cfg, "loss.prediction_weight"),
    )


def train_schedule(cfg: dict[str, str]) -> TrainSchedule:
    return TrainSchedule(
        lr=_float(cfg, "train.lr"),
        plateau_factor=_float(cfg, "train.plateau_factor"),
        plateau_patience=_int(cfg, "train.plateau_patience"),
        early_stop_patience=_int(cfg, "train.early_stop_patience"),
        max_epochs=_int(cfg, "train.max_epochs"),
        batch_size=_int(cfg, "train.batch_size"),
        seed=_int(cfg, "train.seed"),
        grad_clip_norm=_float(cfg, "train.grad_clip_norm"),
        val_fraction=_float(cfg, "train.val_fraction"),
        freeze_encoders=_bool(cfg, "train.freeze_encoders"),
    )


def divergence(cfg: dict[str, str]) -> str:
    return _choice(cfg, "correlation.divergence", ("kl", "jeffreys", "hellinger2"))


def transfer_fusion(cfg: dict[str, str]) -> bool:
    return _bool(cfg, "transfer.fusion")
