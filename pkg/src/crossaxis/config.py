"""Flat JSON run configs: one namespace holding CatConfig and TrainConfig keys."""

from __future__ import annotations

import json
from dataclasses import asdict, fields
from typing import Iterable, Optional

from .errors import ConfigError
from .model import CatConfig
from .train import TrainConfig

MODEL_KEYS = {f.name for f in fields(CatConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
ALL_KEYS = MODEL_KEYS | TRAIN_KEYS


def _defaults(cls) -> dict:
    return {f.name: f.default for f in fields(cls)}


_DEFAULTS = {**_defaults(CatConfig), **_defaults(TrainConfig)}


def parse_value(key: str, raw: str):
    """Interpret the right-hand side of ``--set key=value``: JSON if it parses, else a string."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    default = _DEFAULTS.get(key)
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(f"{key} expects true/false, got {raw!r}")
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float) and value.is_integer():
        value = int(value)
    return value


def apply_overrides(flat: dict, overrides: Iterable[str]) -> dict:
    out = dict(flat)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = parse_value(key, raw)
    return out


def check_keys(flat: dict) -> None:
    unknown = sorted(set(flat) - ALL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def model_config_from_dict(flat: dict) -> CatConfig:
    check_keys(flat)
    try:
        return CatConfig(**{k: v for k, v in flat.items() if k in MODEL_KEYS})
    except TypeError as e:
        raise ConfigError(str(e)) from None


def train_config_from_dict(flat: dict) -> TrainConfig:
    check_keys(flat)
    try:
        return TrainConfig(**{k: v for k, v in flat.items() if k in TRAIN_KEYS})
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path: Optional[str], overrides: Iterable[str] = ()) -> tuple:
    """Read a flat JSON file (or start from defaults), apply overrides, build both configs."""
    flat = {}
    if path:
        try:
            with open(path) as fh:
                flat = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from None
        if not isinstance(flat, dict):
            raise ConfigError(f"{path} must hold a JSON object")
    check_keys(flat)
    flat = apply_overrides(flat, overrides)
    return model_config_from_dict(flat), train_config_from_dict(flat)


def snapshot(model: CatConfig, train: TrainConfig) -> dict:
    return {**asdict(model), **asdict(train)}
