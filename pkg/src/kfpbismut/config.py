"""INI experiment configs: parsing, validation and object construction.

A config has four sections::

    [system]      name = linear_ou | cubic | kinetic_fp | custom, plus parameters
    [experiment]  kind = ..., t = ..., points as "x1, .. ; y1, ..", ...
    [mc]          n_paths, n_steps, master_seed, workers
    [output]      path = <prefix>, format = csv+json | csv | json

Errors are reported as :class:`ConfigError` carrying the file line and the
offending field.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import observables
from .estimators import McConfig
from .model import (SystemSpec, cubic_example, exp_potential,
                    kinetic_fokker_planck, linear_ou, linear_system, power_potential)

SYSTEMS = {
    "linear_ou": "1-d linear system Z = -x - y (exact Gaussian oracle)",
    "cubic": "1-d system Z = -x^3 - y (no global Lipschitz drift)",
    "kinetic_fp": "kinetic Fokker-Planck Z = -grad V(x) - y; V_kind = power|exp, l, dim",
    "custom": "linear drift Z = Kx x + Ky y with matrices A, sigma, Kx, Ky",
}

EXPERIMENTS = {
    "simulate": "plain Monte Carlo for P_t f",
    "gradient": "Bismut, finite-difference (and exact / Zhang when available) gradients",
    "couple": "coupling residual, E[R] and the shifted-expectation identity",
    "harnack": "power Harnack and log-Harnack inequalities",
    "bounds": "gradient and entropy-gradient inequalities",
    "lyapunov": "Lyapunov drift condition on a grid (and the W~ fit for cubic)",
    "variance-compare": "Bismut estimator variance against t and its log-log slope",
}

FORMATS = ("csv+json", "csv", "json")


class ConfigError(ValueError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class ExperimentConfig:
    system: dict[str, str]
    experiment: dict[str, str]
    mc: McConfig
    output_path: str
    output_format: str = "csv+json"
    source: Optional[str] = None
    lines: dict[tuple[str, str], int] = field(default_factory=dict)

    def echo(self) -> dict[str, Any]:
        return {
            "system": dict(self.system),
            "experiment": dict(self.experiment),
            "mc": {"n_paths": self.mc.n_paths, "n_steps": self.mc.n_steps,
                   "master_seed": self.mc.master_seed, "workers": self.mc.workers},
            "output": {"path": self.output_path, "format": self.output_format},
        }

    # --- typed accessors with diagnostics ---

    def _err(self, section: str, key: str, msg: str) -> ConfigError:
        return ConfigError(msg, f"{section}.{key}", self.lines.get((section, key)))

    def _raw(self, section: str, key: str, default=None):
        table = self.system if section == "system" else self.experiment
        if key in table:
            return table[key]
        if default is None:
            raise self._err(section, key, "missing required field")
        return default

    def get_float(self, section: str, key: str, default: Optional[float] = None) -> float:
        raw = self._raw(section, key, None if default is None else str(default))
        try:
            val = float(raw)
        except ValueError:
            raise self._err(section, key, f"expected a number, got {raw!r}") from None
        if not np.isfinite(val):
            raise self._err(section, key, "must be finite")
        return val

    def get_str(self, section: str, key: str, default: Optional[str] = None) -> str:
        return str(self._raw(section, key, default)).strip()

    def get_list(self, section: str, key: str, default: Optional[str] = None) -> list[float]:
        raw = self._raw(section, key, default)
        try:
            return [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise self._err(section, key, f"expected comma-separated numbers, got {raw!r}") from None

    def get_matrix(self, section: str, key: str, default: Optional[str] = None) -> np.ndarray:
        """Rows separated by ';', entries by ','."""
        raw = self._raw(section, key, default)
        try:
            rows = [[float(v) for v in r.split(",")] for r in raw.split(";")]
            return np.array(rows, dtype=float)
        except ValueError:
            raise self._err(section, key, f"malformed matrix {raw!r}") from None

    def get_point(self, system: SystemSpec, key: str, default: Optional[str] = None,
                  kind: str = "state"):
        """A state or direction written as ``x1, .., xm ; y1, .., yd``."""
        raw = self._raw("experiment", key, default)
        parts = raw.split(";")
        if len(parts) != 2:
            raise self._err("experiment", key, "expected 'x-block ; y-block'")
        try:
            x = [float(v) for v in parts[0].split(",")]
            y = [float(v) for v in parts[1].split(",")]
        except ValueError:
            raise self._err("experiment", key, f"malformed point {raw!r}") from None
        try:
            return system.state(x, y) if kind == "state" else system.direction(x, y)
        except ValueError as exc:
            raise self._err("experiment", key, str(exc)) from None


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"\s*([^#;=\s][^=:]*?)\s*[=:]", line)
        if m and section:
            lines.setdefault((section, m.group(1).lower()), no)
    return lines


def _int_field(parser, section: str, key: str, default, lines) -> int:
    raw = parser.get(section, key, fallback=None)
    if raw is None:
        if default is None:
            raise ConfigError("missing required field", f"{section}.{key}",
                              lines.get((section, key)))
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", f"{section}.{key}",
                          lines.get((section, key))) from None


def parse_config(text: str, source: Optional[str] = None,
                 environ: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate config text; environment overrides are applied last."""
    environ = os.environ if environ is None else environ
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.ParsingError as exc:
        line, text_line = exc.errors[0]
        raise ConfigError(f"unparseable config: cannot parse {text_line.strip()!r}", line=line) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"unparseable config: {exc.message.splitlines()[0]}", line=line) from None
    lines = _key_lines(text)
    for section in ("system", "experiment", "mc"):
        if not parser.has_section(section):
            raise ConfigError(f"missing section [{section}]", section)

    system = dict(parser["system"])
    experiment = dict(parser["experiment"])
    if system.get("name") not in SYSTEMS:
        raise ConfigError(f"unknown system {system.get('name')!r}; choose from {sorted(SYSTEMS)}",
                          "system.name", lines.get(("system", "name")))
    if experiment.get("kind") not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment.get('kind')!r}; "
                          f"choose from {sorted(EXPERIMENTS)}",
                          "experiment.kind", lines.get(("experiment", "kind")))

    n_paths = _int_field(parser, "mc", "n_paths", None, lines)
    n_steps = _int_field(parser, "mc", "n_steps", 128, lines)
    seed = _int_field(parser, "mc", "master_seed", 0, lines)
    workers = _int_field(parser, "mc", "workers", 1, lines)
    if environ.get("OVERRIDE_NPATHS"):
        try:
            n_paths = int(environ["OVERRIDE_NPATHS"])
        except ValueError:
            raise ConfigError("OVERRIDE_NPATHS must be an integer", "OVERRIDE_NPATHS") from None
    if environ.get("OVERRIDE_SEED"):
        try:
            seed = int(environ["OVERRIDE_SEED"])
        except ValueError:
            raise ConfigError("OVERRIDE_SEED must be an integer", "OVERRIDE_SEED") from None
    if n_paths < 100:
        raise ConfigError("n_paths must be >= 100", "mc.n_paths", lines.get(("mc", "n_paths")))
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1", "mc.n_steps", lines.get(("mc", "n_steps")))
    if workers < 1:
        raise ConfigError("workers must be >= 1", "mc.workers", lines.get(("mc", "workers")))

    out_path = parser.get("output", "path", fallback="results")
    out_format = parser.get("output", "format", fallback="csv+json")
    if out_format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}", "output.format",
                          lines.get(("output", "format")))

    cfg = ExperimentConfig(system, experiment, McConfig(n_paths, n_steps, seed, workers),
                           out_path, out_format, source, lines)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    """Range checks that do not need the system to be built."""
    exp = cfg.experiment
    if "t" in exp and not cfg.get_float("experiment", "t") > 0:
        raise cfg._err("experiment", "t", "t must be positive")
    if "alpha" in exp and not cfg.get_float("experiment", "alpha") > 1:
        raise cfg._err("experiment", "alpha", "alpha must exceed 1")
    if "delta" in exp and not cfg.get_float("experiment", "delta") > 0:
        raise cfg._err("experiment", "delta", "delta must be positive")
    if "t_values" in exp and not all(t > 0 for t in cfg.get_list("experiment", "t_values")):
        raise cfg._err("experiment", "t_values", "t must be positive")
    if "observable" in exp and exp["observable"] not in observables.CATALOG:
        raise cfg._err("experiment", "observable",
                       f"unknown observable; choose from {sorted(observables.CATALOG)}")
    build_system(cfg)


def load_config(path: str | Path, environ: Optional[dict] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, str(path), environ)


def build_system(cfg: ExperimentConfig) -> SystemSpec:
    name = cfg.system["name"]
    try:
        if name == "linear_ou":
            return linear_ou()
        if name == "cubic":
            return cubic_example()
        if name == "kinetic_fp":
            kind = cfg.get_str("system", "v_kind", "power")
            if kind not in ("power", "exp"):
                raise cfg._err("system", "v_kind", "V_kind must be 'power' or 'exp'")
            l = cfg.get_float("system", "l", 1.0)
            if not l > 0:
                raise cfg._err("system", "l", "l must be positive")
            dim = int(cfg.get_float("system", "dim", 1))
            pot = power_potential(l) if kind == "power" else exp_potential(l)
            return kinetic_fokker_planck(pot, dim)
        A = cfg.get_matrix("system", "a")
        d = A.shape[1]
        return linear_system(A, cfg.get_matrix("system", "sigma", ";".join(
            ",".join("1" if i == j else "0" for j in range(d)) for i in range(d))),
            cfg.get_matrix("system", "kx"), cfg.get_matrix("system", "ky"), name="custom")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "system") from None


def build_observable(cfg: ExperimentConfig, key: str = "observable", default: str = "tanh_x1"):
    name = cfg.get_str("experiment", key, default)
    if name not in observables.CATALOG:
        raise cfg._err("experiment", key, f"unknown observable {name!r}")
    params = {}
    if name in ("x1_clipped", "y1_clipped", "quad_clipped"):
        params["radius"] = cfg.get_float("experiment", "clip_radius", observables.DEFAULT_CLIP)
    return name, observables.get(name, **params)


def zero_point(system: SystemSpec) -> str:
    return ",".join(["0"] * system.m) + ";" + ",".join(["0"] * system.d)


def unit_direction(system: SystemSpec) -> str:
    return ",".join(["1"] + ["0"] * (system.m - 1)) + ";" + ",".join(["0"] * system.d)


__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "build_system",
           "build_observable", "SYSTEMS", "EXPERIMENTS"]
