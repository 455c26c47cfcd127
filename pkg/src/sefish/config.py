"""Flat INI-style run configuration: sections [model], [train], [augment],
[paths]. Unknown sections or keys are rejected so typos fail loudly.
Command-line flags override file values; the fully resolved result is
snapshotted into the run directory and can be fed back via --config.
"""
from __future__ import annotations

import configparser
from pathlib import Path
from typing import Optional, Union

from .data import AugmentConfig
from .errors import SpecError
from .model import ModelSpec
from .train import TrainConfig


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise SpecError(f"expected a boolean, got {raw!r}")


def _parse_stages(raw: str) -> tuple[tuple[int, int], ...]:
    stages = []
    for part in raw.split(","):
        part = part.strip()
        try:
            filters, kernel = part.split("x")
            stages.append((int(filters), int(kernel)))
        except ValueError:
            raise SpecError(f"bad stage {part!r}; expected FILTERSxKERNEL like 32x5") from None
    return tuple(stages)


def _format_stages(stages) -> str:
    return ",".join(f"{f}x{k}" for f, k in stages)


MODEL_KEYS = {
    "height": int,
    "width": int,
    "channels": int,
    "stages": _parse_stages,
    "reduction_ratio": int,
    "fc_units": int,
    "dropout_rate": float,
    "num_classes": int,
    "batch_norm": _parse_bool,
    "bn_momentum": float,
    "bn_eps": float,
    "se_blocks": _parse_bool,
    "head_activation": str,
    "se_activation": str,
}

TRAIN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "learning_rate": float,
    "checkpoint_rule": str,
}

AUGMENT_KEYS = {
    "rotation_range": float,
    "width_shift": float,
    "height_shift": float,
    "shear_range": float,
    "zoom_range": float,
    "horizontal_flip_prob": float,
}

PATH_KEYS = {"data": str, "weights": str, "out": str}

SECTIONS = {"model": MODEL_KEYS, "train": TRAIN_KEYS, "augment": AUGMENT_KEYS, "paths": PATH_KEYS}


def read_config_file(path: Union[str, Path]) -> dict[str, dict]:
    """Parse and type-check a config file into {section: {key: value}}."""
    parser = configparser.ConfigParser()
    try:
        read = parser.read(str(path))
    except configparser.Error as exc:
        raise SpecError(f"malformed config file {path}: {exc}") from None
    if not read:
        raise SpecError(f"cannot read config file {path}")
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise SpecError(f"unknown config section [{section}]")
        keys = SECTIONS[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in keys:
                raise SpecError(f"unknown config key {key!r} in section [{section}]")
            try:
                values[key] = keys[key](raw)
            except SpecError:
                raise
            except (TypeError, ValueError) as exc:
                raise SpecError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from None
        out[section] = values
    return out


def model_spec_from(cfg: dict[str, dict], default_classes: Optional[int] = None) -> ModelSpec:
    values = dict(cfg.get("model", {}))
    if "num_classes" not in values and default_classes is not None:
        values["num_classes"] = default_classes
    return ModelSpec(**values)


def train_config_from(cfg: dict[str, dict], spec: Optional[ModelSpec],
                      augment: Optional[AugmentConfig],
                      initial_weights: Optional[str] = None) -> TrainConfig:
    values = dict(cfg.get("train", {}))
    return TrainConfig(spec=spec, augment=augment, initial_weights=initial_weights, **values)


def augment_from(cfg: dict[str, dict]) -> AugmentConfig:
    return AugmentConfig(**cfg.get("augment", {}))


def write_snapshot(path: Union[str, Path], spec: ModelSpec, config: TrainConfig,
                   rule: str, paths: dict[str, str]) -> Path:
    """Write the fully resolved configuration as an INI file (round-trips
    through ``read_config_file``)."""
    parser = configparser.ConfigParser()
    parser["model"] = {
        "height": str(spec.height),
        "width": str(spec.width),
        "channels": str(spec.channels),
        "stages": _format_stages(spec.stages),
        "reduction_ratio": str(spec.reduction_ratio),
        "fc_units": str(spec.fc_units),
        "dropout_rate": repr(spec.dropout_rate),
        "num_classes": str(spec.num_classes),
        "batch_norm": str(spec.batch_norm).lower(),
        "bn_momentum": repr(spec.bn_momentum),
        "bn_eps": repr(spec.bn_eps),
        "se_blocks": str(spec.se_blocks).lower(),
        "head_activation": spec.head_activation,
        "se_activation": spec.se_activation,
    }
    parser["train"] = {
        "epochs": str(config.epochs),
        "batch_size": str(config.batch_size),
        "seed": str(config.seed),
        "learning_rate": repr(config.learning_rate),
        "checkpoint_rule": rule,
    }
    if config.augment is not None:
        parser["augment"] = {k: repr(v) for k, v in config.augment.to_dict().items()}
    parser["paths"] = {k: str(v) for k, v in paths.items() if v is not None}
    path = Path(path)
    with open(path, "w") as fh:
        parser.write(fh)
    return path
