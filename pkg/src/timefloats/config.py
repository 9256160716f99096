"""Layered run configuration: built-in defaults <- JSON file <- command-line overrides.

The file holds up to four flat sections::

    {"pipeline": {...}, "analog": {...}, "variability": {...}, "energy": {...}}

Unknown sections or keys are rejected so typos do not pass silently.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from . import __version__
from .analog import AnalogConfig, VariabilityModel
from .energy import EnergyTable
from .pipeline import PipelineConfig

CONFIG_ENV = "TIMEFLOATS_CONFIG"

SECTIONS = {
    "pipeline": PipelineConfig,
    "analog": AnalogConfig,
    "variability": VariabilityModel,
    "energy": EnergyTable,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    analog: AnalogConfig = field(default_factory=AnalogConfig)
    variability: VariabilityModel = field(default_factory=VariabilityModel)
    energy: EnergyTable = field(default_factory=EnergyTable)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_section(self, section: str, **values) -> "RunConfig":
        return apply_overrides(self, {section: values})


def _coerce(cls, key: str, value):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
    t = str(types[key])
    if isinstance(value, str):
        if "bool" in t:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        if "int" in t and "None" in t and value.lower() in ("none", "null"):
            return None
        try:
            if "int" in t:
                return int(value)
            if "float" in t:
                return float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return value


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Return ``cfg`` with ``{section: {key: value}}`` applied and re-validated."""
    out = cfg
    for section, values in overrides.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be an object")
        cls = SECTIONS[section]
        current = getattr(out, section)
        coerced = {k: _coerce(cls, k, v) for k, v in values.items()}
        try:
            # derived defaults follow the field they derive from
            if section == "pipeline" and "rows" in coerced and "adc_full_scale" not in coerced:
                coerced["adc_full_scale"] = None
            if section == "pipeline" and "significand_mode" in coerced:
                coerced.setdefault("zeroing_threshold", None)
                coerced.setdefault("adc_full_scale", None)
            new = replace(current, **coerced)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
        out = replace(out, **{section: new})
    return out


def parse_set(items) -> dict:
    """``["pipeline.rows=32", ...]`` to a nested override dict."""
    out: dict = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section, {})[name] = value
    return out


def load(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults, then the file (``path`` or ``$TIMEFLOATS_CONFIG``), then ``overrides``."""
    cfg = RunConfig()
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = apply_overrides(cfg, data)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def header(cfg: RunConfig, command: str, seed: int, extra: dict | None = None) -> dict:
    """Reproducibility header; carries no timestamps so reruns are byte-identical."""
    h = {
        "tool": "timefloats",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
    }
    if extra:
        h["args"] = extra
    return h


def header_lines(h: dict) -> str:
    """The header as ``#`` comment lines for CSV and text reports."""
    lines = [
        f"# {h['tool']} {h['version']} command={h['command']} seed={h['seed']} config={h['config_hash']}",
        "# config: " + json.dumps(h["config"], sort_keys=True, separators=(",", ":")),
    ]
    if "args" in h:
        lines.append("# args: " + json.dumps(h["args"], sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"
