"""Spectrometer run configuration (TOML).

Every key is declared in :data:`SECTIONS` with its default; unknown sections
or keys are rejected so typos never silently fall back to defaults.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from ._toml import TOMLDecodeError, load_toml, loads_toml

REQUIRED = object()


class ConfigKeyError(ValueError):
    """A configuration file is malformed, incomplete or holds unknown keys."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(message)


@dataclass(frozen=True)
class Key:
    default: Any
    types: tuple[type, ...]
    doc: str = ""
    choices: tuple | None = None


def _k(default, *types, doc="", choices=None):
    return Key(default, types, doc, choices)


SECTIONS: dict[str, dict[str, Key]] = {
    "experiment": {
        "name": _k(REQUIRED, str, doc="experiment label"),
        "date": _k(None, str),
        "description": _k(None, str),
    },
    "station": {
        "antenna": _k("ANT1", str),
        "target": _k(None, str),
        "sample-rate": _k(60e6, int, float, doc="Hz"),
    },
    "observation": {
        "start": _k(None, str),
        "duration": _k(None, int, float, doc="seconds"),
    },
    "ingest": {
        "source": _k(REQUIRED, str, doc="file://, tcp://, stcp:// or synth:// URI"),
        "bits": _k(8, int, choices=(2, 4, 8, 16)),
        "encoding": _k("unsigned-offset", str, choices=("unsigned-offset", "twos-complement")),
        "byte-order": _k("little", str, choices=("little", "big")),
        "block-size": _k(8192, int),
        "fft-size": _k(8192, int),
        "frames-per-chunk": _k(512, int),
        "workers": _k(2, int),
        "start-offset": _k(0, int),
        "timeout": _k(10.0, int, float),
    },
    "dsp": {
        "window": _k("rectangular", str, choices=("rectangular", "hann")),
        "nyquist": _k(False, bool),
    },
    "integration": {
        "count": _k(523, int),
        "time": _k(None, int, float, doc="seconds; alias for count"),
        "emit-partial": _k(True, bool),
        "control-file": _k(None, str),
    },
    "engine": {
        "deterministic": _k(False, bool),
        "queue-capacity": _k(16, int),
        "nodes": _k(1, int),
        "capacity": _k(1e6, int, float, doc="per-node budget in CPU microseconds per second"),
    },
    "output": {
        "spectrum": _k(None, str),
        "format": _k("csv", str, choices=("csv", "bin")),
        "provenance": _k(None, str),
        "stats": _k(None, str),
    },
}

# sections that describe where results go rather than what is computed
NON_HASHED_SECTIONS = ("output",)


def _check_value(section: str, key: str, spec: Key, value: Any) -> Any:
    name = f"{section}.{key}"
    if isinstance(value, bool) and bool not in spec.types:
        raise ConfigKeyError(f"{name}: expected {'/'.join(t.__name__ for t in spec.types)}, got boolean", name)
    if not isinstance(value, spec.types):
        raise ConfigKeyError(
            f"{name}: expected {'/'.join(t.__name__ for t in spec.types)}, got {type(value).__name__}", name)
    if spec.choices is not None and value not in spec.choices:
        raise ConfigKeyError(f"{name}: {value!r} not one of {list(spec.choices)}", name)
    return value


@dataclass
class RunConfig:
    """Resolved configuration: every declared key present, defaults applied."""

    values: dict[str, dict[str, Any]]
    path: Path | None = None

    def __getitem__(self, dotted: str) -> Any:
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def get(self, dotted: str, default: Any = None) -> Any:
        try:
            v = self[dotted]
        except KeyError:
            return default
        return default if v is None else v

    def set(self, dotted: str, value: Any) -> None:
        section, key = dotted.split(".", 1)
        if section not in SECTIONS or key not in SECTIONS[section]:
            raise ConfigKeyError(f"unknown configuration key {dotted!r}", dotted)
        self.values[section][key] = _check_value(section, key, SECTIONS[section][key], value)
        if dotted == "integration.time":
            self.values["integration"]["count"] = integration_count_for(self)
        _validate(self)

    def copy(self) -> "RunConfig":
        return RunConfig(copy.deepcopy(self.values), self.path)

    def hashed(self) -> dict[str, dict[str, Any]]:
        """The part of the configuration that determines the data product."""
        return {s: dict(v) for s, v in self.values.items() if s not in NON_HASHED_SECTIONS}

    @property
    def chunk_samples(self) -> int:
        return self["ingest.fft-size"] * self["ingest.frames-per-chunk"]


def integration_count_for(cfg: RunConfig) -> int:
    t = cfg.values["integration"]["time"]
    if t is None:
        return cfg.values["integration"]["count"]
    chunk_seconds = cfg.chunk_samples / float(cfg["station.sample-rate"])
    return max(1, int(round(t / chunk_seconds)))


def _validate(cfg: RunConfig) -> None:
    ing = cfg.values["ingest"]
    fft = ing["fft-size"]
    if fft < 8 or fft > 8192 or fft & (fft - 1):
        raise ConfigKeyError(f"ingest.fft-size must be a power of two in [8, 8192], got {fft}", "ingest.fft-size")
    for key in ("frames-per-chunk", "workers", "block-size"):
        if ing[key] <= 0:
            raise ConfigKeyError(f"ingest.{key} must be positive", f"ingest.{key}")
    if ing["bits"] == 16 and ing["block-size"] % 2:
        raise ConfigKeyError("ingest.block-size must be even for 16-bit samples", "ingest.block-size")
    if ing["start-offset"] < 0:
        raise ConfigKeyError("ingest.start-offset must be >= 0", "ingest.start-offset")
    if cfg.values["integration"]["count"] <= 0:
        raise ConfigKeyError("integration.count must be positive", "integration.count")
    t = cfg.values["integration"]["time"]
    if t is not None and t <= 0:
        raise ConfigKeyError("integration.time must be positive", "integration.time")
    if cfg.values["station"]["sample-rate"] <= 0:
        raise ConfigKeyError("station.sample-rate must be positive", "station.sample-rate")
    eng = cfg.values["engine"]
    for key in ("queue-capacity", "nodes"):
        if eng[key] <= 0:
            raise ConfigKeyError(f"engine.{key} must be positive", f"engine.{key}")
    if eng["capacity"] <= 0:
        raise ConfigKeyError("engine.capacity must be positive", "engine.capacity")


def resolve_config(raw: Mapping[str, Any], path: Path | None = None) -> RunConfig:
    values: dict[str, dict[str, Any]] = {}
    for section in raw:
        if section not in SECTIONS:
            raise ConfigKeyError(f"unknown configuration section [{section}]; expected one of {list(SECTIONS)}",
                                 section)
        if not isinstance(raw[section], Mapping):
            raise ConfigKeyError(f"[{section}] must be a table", section)
    for section, keys in SECTIONS.items():
        given = dict(raw.get(section, {}))
        unknown = sorted(set(given) - set(keys))
        if unknown:
            raise ConfigKeyError(f"unknown key {section}.{unknown[0]}", f"{section}.{unknown[0]}")
        out = {}
        for key, spec in keys.items():
            if key in given:
                out[key] = _check_value(section, key, spec, given[key])
            elif spec.default is REQUIRED:
                raise ConfigKeyError(f"missing required key {section}.{key}", f"{section}.{key}")
            else:
                out[key] = spec.default
        values[section] = out
    cfg = RunConfig(values, path)
    cfg.values["integration"]["count"] = integration_count_for(cfg)
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = load_toml(path)
    except FileNotFoundError:
        raise ConfigKeyError(f"config file {str(path)!r} not found") from None
    except TOMLDecodeError as exc:
        raise ConfigKeyError(f"{path}: {exc}") from None
    return resolve_config(raw, path)


def loads_config(text: str) -> RunConfig:
    try:
        raw = loads_toml(text)
    except TOMLDecodeError as exc:
        raise ConfigKeyError(str(exc)) from None
    return resolve_config(raw)
