"""Sectioned key-value pipeline configuration.

The file format is INI-style: one section per module, keys named exactly
after the config dataclass fields. Unknown sections or keys are rejected
and every value is validated against the module's constraints at load
time (the dataclass constructors enforce them).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields

from .depthmap import DepthConfig
from .errors import ConfigError
from .fusion import FusionConfig
from .metrics import MetricsConfig
from .primitives import PrimitiveConfig
from .synth import SceneConfig

CONFIG_VERSION = "1"


@dataclass
class PipelineConfig:
    version: str = CONFIG_VERSION
    fusion: FusionConfig = field(default_factory=FusionConfig)
    depth: DepthConfig = field(default_factory=DepthConfig)
    primitives: PrimitiveConfig = field(default_factory=PrimitiveConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    synth: SceneConfig = field(default_factory=SceneConfig)


_SECTIONS = {
    "fusion": FusionConfig,
    "depth": DepthConfig,
    "primitives": PrimitiveConfig,
    "metrics": MetricsConfig,
    "synth": SceneConfig,
}


def _convert(raw: str, f: dataclasses.Field, section: str):
    text = raw.strip()
    try:
        if f.type in ("int", int):
            return int(text)
        if f.type in ("float", float):
            return float(text)
        if f.type in ("bool", bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if f.type in ("tuple", tuple):
            return tuple(float(v) for v in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {f.name}: {exc}") from exc


def load_pipeline_config(path) -> PipelineConfig:
    """Parse and validate a config file; unknown keys are an error."""
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise FileNotFoundError(path)

    cfg = PipelineConfig()
    for section in parser.sections():
        if section == "pipeline":
            for key, value in parser.items(section):
                if key != "version":
                    raise ConfigError(f"[pipeline] unknown key '{key}'")
                cfg.version = value.strip()
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section '[{section}]'")
        cls = _SECTIONS[section]
        by_name = {f.name: f for f in fields(cls)}
        overrides = {}
        for key, value in parser.items(section):
            if key not in by_name:
                raise ConfigError(f"[{section}] unknown key '{key}'")
            overrides[key] = _convert(value, by_name[key], section)
        try:
            setattr(cfg, section, dataclasses.replace(getattr(cfg, section), **overrides))
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return cfg


def default_config_text() -> str:
    """Full config file with every key at its default value."""
    out = io.StringIO()
    out.write(f"[pipeline]\nversion = {CONFIG_VERSION}\n")
    for section, cls in _SECTIONS.items():
        out.write(f"\n[{section}]\n")
        for f in fields(cls):
            value = getattr(cls(), f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            out.write(f"{f.name} = {value}\n")
    return out.getvalue()
