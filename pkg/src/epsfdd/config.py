"""Run configuration: built-in defaults, an INI-style file, then CLI flags.

Recognised sections are ``[run]``, ``[orbit]``, ``[plant]``, ``[train]``,
``[classify]`` and ``[kalman]``. Keys are the dataclass field names.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import ClassifyConfig
from .env_orbit import OrbitConfig
from .eps_plant import PlantConfig
from .errors import ConfigError
from .features import SocKalmanConfig
from .sysid import TrainConfig

# stage numbers for seed fan-out: stage seed = SeedSequence([root, stage])
SEED_STAGES = {"orbit": 0, "plant": 1, "train": 2, "classify": 3}


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    n_samples: int = 2001
    dt_s: float = 60.0
    true_soc: bool = False

    def validate(self) -> None:
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if self.n_samples < 1:
            raise ConfigError("n_samples", "must be >= 1")
        if not self.dt_s > 0:
            raise ConfigError("dt_s", "must be > 0")


@dataclass(frozen=True)
class ResolvedConfig:
    run: RunSettings = field(default_factory=RunSettings)
    orbit: OrbitConfig = field(default_factory=OrbitConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    kalman: SocKalmanConfig = field(default_factory=SocKalmanConfig)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self) -> None:
        for name in SECTIONS:
            getattr(self, name).validate()


SECTIONS = ("run", "orbit", "plant", "train", "classify", "kalman")


def derive_seed(root: int, stage: str) -> int:
    return int(np.random.SeedSequence([int(root), SEED_STAGES[stage]]).generate_state(1, np.uint64)[0])


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def _coerce(text: str, hint, key: str):
    """Convert ``text`` to the annotated field type."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.strip().lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(text, inner[0], key)
    try:
        if origin is tuple:
            parts = [p for p in text.replace(",", " ").split()]
            return tuple(_coerce(p, args[0], key) for p in parts)
        if hint is bool:
            return _parse_bool(text, key)
        if hint is int:
            return int(text.strip())
        if hint is float:
            return float(text.strip())
        return text.strip()
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {getattr(hint, '__name__', hint)}") from None


def _apply(obj, values: dict[str, str], section: str):
    hints = typing.get_type_hints(type(obj))
    known = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, text in values.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}", f"unknown key; valid keys: {', '.join(sorted(known))}")
        updates[key] = _coerce(text, hints[key], f"{section}.{key}")
    return dataclasses.replace(obj, **updates)


def read_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section; valid sections: {', '.join(SECTIONS)}")
        out[section] = dict(parser.items(section))
    return out


def resolve(
    file_values: dict[str, dict[str, str]] | None = None,
    overrides: dict[str, dict[str, str]] | None = None,
) -> ResolvedConfig:
    """Defaults, then file values, then overrides; stage seeds come from the root seed."""
    cfg = ResolvedConfig()
    parts = {name: getattr(cfg, name) for name in SECTIONS}
    for layer in (file_values or {}, overrides or {}):
        for section, values in layer.items():
            if section not in SECTIONS:
                raise ConfigError(section, f"unknown section; valid sections: {', '.join(SECTIONS)}")
            parts[section] = _apply(parts[section], values, section)
    root = parts["run"].seed
    parts["run"].validate()
    for stage in SEED_STAGES:
        parts[stage] = dataclasses.replace(parts[stage], seed=derive_seed(root, stage))
    # the filter shares the plant's battery OCV line
    parts["kalman"] = dataclasses.replace(
        parts["kalman"],
        ocv_slope_v_per_soc=parts["plant"].battery_ocv_slope_v,
        ocv_offset_v=parts["plant"].battery_ocv_offset_v,
    )
    resolved = ResolvedConfig(**parts)
    resolved.validate()
    return resolved


def load_config(path: str | Path | None, overrides: dict[str, dict[str, str]] | None = None) -> ResolvedConfig:
    return resolve(read_config_file(path) if path is not None else None, overrides)
