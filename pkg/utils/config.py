# config.py
"""
Flat `key=value` configuration with dotted namespaces:

    # encoder
    encoder.architecture=gin
    encoder.layers=5
    train.epochs=100

Files are merged with `--set` overrides (overrides win), then validated into
a typed RunConfig. The sorted flat form is what gets hashed and stored.
"""
import hashlib
import json
import os
from typing import Iterable, Optional

from pydantic import BaseModel, Field, ValidationError

from data_io.splits import DataConfig
from gnn.config import EncoderConfig
from pretrain.config import ContextConfig, MaskConfig
from traineval import TrainConfig
from utils.errors import ConfigurationError, UsageError


class RunSection(BaseModel):
    workers: int = Field(1, ge=1)
    out: Optional[str] = None


class RunConfig(BaseModel):
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    context: ContextConfig = ContextConfig()
    mask: MaskConfig = MaskConfig()
    data: DataConfig = DataConfig()
    run: RunSection = RunSection()

    model_config = {"extra": "forbid"}


SECTIONS = tuple(RunConfig.model_fields)


def parse_flat(text: str, source: str = "<config>") -> dict:
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: empty key")
        flat[key] = value
    return flat


def load_flat(path: str) -> dict:
    """A flat config file, or the `config` block of a previous run.json."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path) as f:
        text = f.read()
    if path.endswith(".json"):
        try:
            return {k: str(v) for k, v in json.loads(text)["config"].items()}
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigurationError(f"{path}: not a run.json ({e})") from None
    return parse_flat(text, path)


def apply_overrides(flat: dict, overrides: Iterable[str]) -> dict:
    out = dict(flat)
    for item in overrides or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def nest(flat: dict) -> dict:
    tree = {}
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) != 2:
            raise ConfigurationError(f"config keys look like section.name, got {key!r}")
        section, name = parts
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section {section!r} in {key!r}")
        if name not in RunConfig.model_fields[section].annotation.model_fields:
            raise ConfigurationError(f"unknown config key {key!r}")
        tree.setdefault(section, {})[name] = None if value in ("", "none", "None") else value
    return tree


def build_config(flat: dict) -> RunConfig:
    try:
        return RunConfig(**nest(flat))
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigurationError(f"{where}: {first['msg']}") from None


def flatten(config: RunConfig) -> dict:
    """Every resolved key as a string, sorted; defaults included."""
    out = {}
    for section, values in config.model_dump().items():
        for name, value in values.items():
            out[f"{section}.{name}"] = "none" if value is None else str(value).lower() if isinstance(value, bool) else str(value)
    return dict(sorted(out.items()))


def config_hash(flat: dict) -> str:
    text = "\n".join(f"{k}={v}" for k, v in sorted(flat.items()))
    return hashlib.sha256(text.encode()).hexdigest()


def resolve(config_path: Optional[str], overrides=()) -> tuple:
    """(RunConfig, resolved flat dict) from an optional file plus overrides."""
    flat = load_flat(config_path) if config_path else {}
    config = build_config(apply_overrides(flat, overrides))
    return config, flatten(config)
