"""Run configuration: built-in defaults <- config file <- environment <- command line.

Config files are INI-style: ``[section]`` headers only group keys, every key
name is global. ``#`` starts a comment. A ``[components]`` section, if
present, replaces the default electronics list with ``label = seconds`` lines.
"""
from __future__ import annotations

import configparser
import dataclasses
import difflib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .apparatus import ALUMINIUM_DENSITY, GLASS_DENSITY, ApparatusConfig, ConfigError
from .selfenergy import MassBody, OverlapCoefficientVariant, PhysicalConstants

SCHEMA_VERSION = "1"
OUTPUT_DIR_ENV = "DPSIM_OUTPUT_DIR"

MODES = ("superposed", "control", "both")

_BODY_DEFAULTS = {
    "mirror": (2e-4, GLASS_DENSITY),
    "mount": (2e-2, ALUMINIUM_DENSITY),
}


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text) -> float:
    return float(str(text).strip())


def _int(text) -> int:
    value = float(str(text).strip())
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _str(text) -> str:
    return str(text).strip()


def _variant(text) -> OverlapCoefficientVariant:
    return OverlapCoefficientVariant.parse(text)


_APPARATUS_KEYS = {
    f.name: {bool: _bool, float: _float, str: _str}.get(type(f.default), _float)
    for f in dataclasses.fields(ApparatusConfig)
    if f.name not in ("mirror", "mount", "extra_component_times", "variant", "constants")
}
_APPARATUS_KEYS["variant"] = _variant

_BODY_KEYS = {f"{b}_{attr}": conv for b in _BODY_DEFAULTS
              for attr, conv in (("mass", _float), ("radius", _float),
                                 ("density", _float), ("shape_factor", _float))}

_RUN_KEYS = {
    "n_trials": _int,
    "master_seed": _int,
    "output_dir": _str,
    "mode": _str,
    "parallelism": _int,
    "debug": _bool,
}

_CONSTANT_KEYS = {"G": _float, "hbar": _float}

KNOWN_KEYS = {**_APPARATUS_KEYS, **_BODY_KEYS, **_RUN_KEYS, **_CONSTANT_KEYS}


@dataclass(frozen=True)
class RunConfig:
    apparatus: ApparatusConfig = field(default_factory=ApparatusConfig)
    n_trials: int = 1000
    master_seed: int = 0
    output_dir: str = "dpsim_out"
    mode: str = "both"
    parallelism: int = 0
    debug: bool = False

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.parallelism < 0:
            raise ConfigError("parallelism must be >= 0 (0 means all cores)")

    @property
    def workers(self) -> int:
        return self.parallelism or os.cpu_count() or 1


def _unknown(key: str) -> ConfigError:
    near = difflib.get_close_matches(key, sorted(KNOWN_KEYS), n=1, cutoff=0.0)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return ConfigError(f"unknown config key {key!r}{hint}")


def read_config_file(path: str | Path) -> tuple[dict[str, str], tuple[tuple[str, float], ...] | None]:
    """Raw key/value pairs and the optional components list from a file."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    parser.read_string("[__top__]\n" + text, source=str(path))
    values: dict[str, str] = {}
    components = None
    for section in parser.sections():
        if section == "components":
            components = tuple((k, _float(v)) for k, v in parser.items(section))
            continue
        for key, value in parser.items(section):
            if key in values:
                raise ConfigError(f"key {key!r} given twice in {path}")
            values[key] = value
    return values, components


def _convert(raw: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in raw.items():
        if key not in KNOWN_KEYS:
            raise _unknown(key)
        try:
            out[key] = KNOWN_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return out


def _body(name: str, values: Mapping[str, Any]) -> MassBody:
    mass0, density0 = _BODY_DEFAULTS[name]
    mass = values.get(f"{name}_mass", mass0)
    shape = values.get(f"{name}_shape_factor", 1.0)
    try:
        if f"{name}_radius" in values:
            return MassBody(mass, values[f"{name}_radius"], name, shape)
        return MassBody.from_density(mass, values.get(f"{name}_density", density0), name, shape)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_run_config(values: Mapping[str, Any],
                     components: tuple[tuple[str, float], ...] | None = None) -> RunConfig:
    values = _convert(values)
    app_kwargs = {k: v for k, v in values.items() if k in _APPARATUS_KEYS}
    app_kwargs["mirror"] = _body("mirror", values)
    app_kwargs["mount"] = _body("mount", values)
    if components is not None:
        app_kwargs["extra_component_times"] = tuple(components)
    if "G" in values or "hbar" in values:
        base = PhysicalConstants()
        try:
            app_kwargs["constants"] = PhysicalConstants(values.get("G", base.G), values.get("hbar", base.hbar))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    apparatus = ApparatusConfig(**app_kwargs)
    run_kwargs = {k: v for k, v in values.items() if k in _RUN_KEYS}
    return RunConfig(apparatus=apparatus, **run_kwargs)


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None,
                 environ: Mapping[str, str] | None = None) -> RunConfig:
    """Resolve defaults, then the file, then the environment, then overrides."""
    environ = os.environ if environ is None else environ
    values: dict[str, Any] = {}
    components = None
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} does not exist")
        values, components = read_config_file(path)
    if environ.get(OUTPUT_DIR_ENV):
        values["output_dir"] = environ[OUTPUT_DIR_ENV]
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise _unknown(key)
        values[key] = value
    return build_run_config(values, components)


def resolved_dict(run: RunConfig) -> dict[str, Any]:
    """Every resolved value, JSON-ready; round-trips through :func:`from_resolved_dict`."""
    a = run.apparatus
    out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    for key in _APPARATUS_KEYS:
        value = getattr(a, key)
        out[key] = value.value if isinstance(value, OverlapCoefficientVariant) else value
    for name in _BODY_DEFAULTS:
        body = getattr(a, name)
        out[f"{name}_mass"] = body.mass
        out[f"{name}_radius"] = body.radius
        out[f"{name}_shape_factor"] = body.shape_factor
    out["G"] = a.constants.G
    out["hbar"] = a.constants.hbar
    out["components"] = {label: t for label, t in a.extra_component_times}
    for key in _RUN_KEYS:
        out[key] = getattr(run, key)
    return out


def from_resolved_dict(data: Mapping[str, Any]) -> RunConfig:
    data = dict(data)
    data.pop("schema_version", None)
    components = tuple((k, float(v)) for k, v in data.pop("components", {}).items())
    for key, value in list(data.items()):
        if isinstance(value, float) and math.isinf(value):
            data[key] = "inf"
    return build_run_config(data, components)
