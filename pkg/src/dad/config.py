"""Run configuration.

Config files are flat key/value YAML with dotted sections::

    model.backbone: tiny
    data.train_dir: data/train
    optim.lr: 1.0e-4

Nested mappings are flattened, so the same keys may also be written as
sections. Precedence: built-in defaults < profile < file < explicit overrides.
"""
import dataclasses
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .decoder import ModelConfig
from .errors import ConfigError, ValidationError
from .losses import LossConfig


@dataclass
class DataConfig:
    train_dir: Optional[str] = None
    test_dirs: List[str] = field(default_factory=list)
    image_size: int = 416


@dataclass
class OptimConfig:
    algorithm: str = "adam"
    lr: float = 1e-4
    lr_decay: float = 0.1
    decay_every: int = 50
    epochs: int = 200
    batch_size: int = 36
    checkpoint_every: int = 50
    max_steps: int = 0  # 0: no cap
    deterministic: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    output_dir: str = "runs/dad"

    def validate(self):
        if self.data.image_size % 32:
            raise ValidationError(f"data.image_size must be divisible by 32, got {self.data.image_size}")
        if self.optim.epochs < 1 or self.optim.batch_size < 1:
            raise ValidationError("optim.epochs and optim.batch_size must be >= 1")
        if self.optim.algorithm != "adam":
            raise ConfigError(f"unsupported optimizer {self.optim.algorithm!r}")
        self.model.validate()
        self.loss.validate()
        return self

    def to_flat(self) -> Dict[str, Any]:
        return flatten(asdict(self))


PROFILES = {
    "paper": {},
    "desk": {"data.image_size": 64, "optim.batch_size": 4, "optim.epochs": 5, "optim.lr": 1e-3},
}


def flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(value, typ):
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            return None
        return _coerce(value, args[0])
    if origin in (list, List):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        (inner,) = typing.get_args(typ) or (str,)
        return [_coerce(v, inner) for v in value]
    if typ is bool:
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return bool(value)
    if typ is int:
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return int(value)
    if typ is float:
        return float(value)
    if typ is str:
        return str(value)
    return value


def apply_overrides(cfg: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    for key, value in overrides.items():
        parts = key.split(".")
        target = cfg
        for p in parts[:-1]:
            if not dataclasses.is_dataclass(target) or not hasattr(target, p):
                raise ConfigError(f"unknown config key {key!r}")
            target = getattr(target, p)
        name = parts[-1]
        hints = typing.get_type_hints(type(target)) if dataclasses.is_dataclass(target) else {}
        if name not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(target, name, _coerce(value, hints[name]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return cfg


def read_config_file(path) -> Dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must contain a mapping")
    return flatten(data)


def load_config(path=None, profile="paper", overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = apply_overrides(RunConfig(), PROFILES[profile])
    if path is not None:
        apply_overrides(cfg, read_config_file(path))
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg.validate()


def config_from_flat(flat: Dict[str, Any]) -> RunConfig:
    return apply_overrides(RunConfig(), flat)


def parse_assignments(items) -> Dict[str, Any]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out
