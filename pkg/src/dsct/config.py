"""Key=value configuration files and the typed dataclasses behind them.

The same serialisation is used for user-facing config files and for the
text block inside checkpoints, so a checkpoint round-trips byte-for-byte:
field order follows the dataclass definitions and floats are written with
``repr``, which is exact for binary64.
"""

from __future__ import annotations

import dataclasses
import hashlib

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


def _serialize_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce_value(raw: str, default):
    if isinstance(default, bool):
        if raw in ("true", "1"):
            return True
        if raw in ("false", "0"):
            return False
        raise ConfigError(f"expected true/false, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v != "")
    return raw


def config_lines(obj, prefix: str = "") -> list[str]:
    """Dataclass to ``prefix.field=value`` lines in declaration order."""
    return [
        f"{prefix}{f.name}={_serialize_value(getattr(obj, f.name))}"
        for f in dataclasses.fields(obj)
    ]


def parse_mapping(text: str) -> dict[str, str]:
    """Raw ``key=value`` lines to a dict; blank lines and # comments skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_from_mapping(cls, mapping: dict[str, str], prefix: str = "",
                        strict: bool = False):
    """Build a config dataclass from string values, applying defaults.

    ``strict`` additionally rejects prefixed keys that match no field.
    """
    defaults = cls()
    kwargs = {}
    known = set()
    for f in dataclasses.fields(cls):
        known.add(prefix + f.name)
        raw = mapping.get(prefix + f.name)
        if raw is not None:
            try:
                kwargs[f.name] = _coerce_value(raw, getattr(defaults, f.name))
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{prefix}{f.name}: {exc}") from None
    if strict:
        for key in mapping:
            if key.startswith(prefix) and key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
    return cls(**kwargs)


def load_config_file(path: str) -> tuple[ModelConfig, TrainConfig]:
    """A flat config file holding both model and training fields."""
    with open(path, "r", encoding="utf-8") as fh:
        mapping = parse_mapping(fh.read())
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in mapping:
        if key not in model_fields and key not in train_fields:
            raise ConfigError(f"unknown configuration key {key!r}")
    model_cfg = config_from_mapping(ModelConfig, mapping)
    train_cfg = config_from_mapping(TrainConfig, mapping)
    return model_cfg, train_cfg


def config_digest(model_cfg: ModelConfig) -> str:
    text = "\n".join(config_lines(model_cfg, "model."))
    return hashlib.sha256(text.encode()).hexdigest()[:12]
