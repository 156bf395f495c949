"""Run configuration files: YAML key-value text mirroring TrainConfig plus paths."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import yaml

from svsnet.training import TrainConfig

PATH_KEYS = ("train_manifest", "val_manifest")
KNOWN_KEYS = tuple(f.name for f in fields(TrainConfig)) + PATH_KEYS


class ConfigError(ValueError):
    pass


def load_run_config(path: str | Path) -> dict:
    """Parse a run config; unknown keys are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping of keys to values")
    unknown = set(data) - set(KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return data


def build_train_config(settings: dict) -> TrainConfig:
    """TrainConfig from merged settings (path keys are stripped)."""
    kwargs = {k: v for k, v in settings.items() if k not in PATH_KEYS}
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
