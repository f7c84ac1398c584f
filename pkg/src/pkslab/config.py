"""Experiment configuration: flat dotted keys with recorded defaults.

A config file is TOML.  Tables and dotted keys are interchangeable, so

    [potential]
    lam = 0.5

and ``potential.lam = 0.5`` mean the same thing.  Every key has a default in
:data:`DEFAULTS`; unknown keys and wrongly typed values raise
:class:`~pkslab.errors.ConfigError`.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, OutputError
from .potentials import PotentialSpec
from .torus import GridDensity

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "KINDS",
    "DEFAULTS",
    "ExperimentConfig",
    "load_config",
    "dumps_toml",
    "initial_density",
]

KINDS = ("simulate", "pde", "liouville", "ldp", "converge", "phase")

DEFAULTS: dict = {
    "experiment.kind": "simulate",
    "experiment.seed": 0,
    "experiment.threads": 1,
    "experiment.out": "results",
    "potential.lam": 0.5,
    "potential.sigma": 1.0,
    "potential.d": 1,
    "potential.eta": 0.25,
    "potential.epsilon": 0.0,
    "potential.offset": 0.0,
    "potential.correction_modes": [],
    # reference / initial density: uniform, cosine (1 + a cos 2 pi x_0) or bump
    "initial.kind": "cosine",
    "initial.amplitude": 0.5,
    "initial.width": 0.05,
    "initial.m": 256,
    "simulate.n": 256,
    "simulate.replicas": 8,
    "simulate.dt": 1e-3,
    "simulate.t_end": 0.1,
    "simulate.eps": 0.0,
    "simulate.output_times": [],
    "simulate.snapshots": False,
    "pde.m": 128,
    "pde.dt": 1e-3,
    "pde.t_end": 1.0,
    "pde.threshold": 0.0,
    "pde.eps": 0.0,
    "pde.record_every": 1,
    "pde.snapshots": False,
    "liouville.n": 2,
    "liouville.m": 128,
    "liouville.eps": 0.0,
    "liouville.dt": 1e-3,
    "liouville.t_end": 0.2,
    "liouville.output_every": 10,
    "liouville.rtol": 1e-13,
    "ldp.n_values": [16, 32, 64, 128, 256, 512],
    "ldp.p_values": [2, 4, 8],
    "ldp.mc_n": 8,
    "ldp.mc_p": 2,
    "ldp.mc_samples": 100000,
    "ldp.moment_n_values": [100, 1000, 10000],
    "ldp.moment_samples": 100000,
    "ldp.alpha": 0.05,
    "ldp.fixed_point_l1": 0.01,
    "ldp.fixed_point_m": 256,
    "ldp.damping": 0.5,
    "converge.n_values": [64, 256, 1024, 4096],
    "converge.replicas": 64,
    "converge.dt": 0.025,
    "converge.t_end": 0.5,
    "converge.output_times": [],
    "converge.hn_M": 8,
    "converge.marginal_M1": 0,
    "converge.marginal_M2": 0,
    "converge.pde_dt": 1e-3,
    "phase.lam_values": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
    "phase.m": 64,
    "phase.t_end": 1.0,
    "phase.dt": 1e-3,
    "phase.threshold": 250.0,
    "phase.bisect_steps": 4,
}

# a zero in these means "use the documented automatic choice"
AUTO_ZERO = {
    "potential.epsilon",
    "simulate.eps",
    "pde.threshold",
    "pde.eps",
    "liouville.eps",
    "converge.marginal_M1",
    "converge.marginal_M2",
}


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _check_type(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected an array, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported value {value!r}")


class ExperimentConfig:
    """Resolved configuration; ``cfg["pde.m"]`` returns the effective value."""

    def __init__(self, values: dict | None = None):
        resolved = dict(DEFAULTS)
        for key, value in (values or {}).items():
            if key not in DEFAULTS:
                near = [k for k in DEFAULTS if k.split(".")[-1] == key.split(".")[-1]]
                hint = f" (did you mean {', '.join(near)}?)" if near else ""
                raise ConfigError(f"unknown config key {key!r}{hint}")
            resolved[key] = _check_type(key, value, DEFAULTS[key])
        if resolved["experiment.kind"] not in KINDS:
            raise ConfigError(f"experiment.kind must be one of {', '.join(KINDS)}")
        if resolved["experiment.threads"] < 1:
            raise ConfigError("experiment.threads must be >= 1")
        if resolved["initial.kind"] not in ("uniform", "cosine", "bump"):
            raise ConfigError("initial.kind must be uniform, cosine or bump")
        self.values = resolved

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def section(self, name: str) -> dict:
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    def replace(self, **overrides) -> "ExperimentConfig":
        """Copy with overrides given as ``section__key=value``."""
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[k.replace("__", ".")] = v
        return ExperimentConfig(vals)

    def with_values(self, values: dict) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(values)
        return ExperimentConfig(vals)

    def potential_spec(self) -> PotentialSpec:
        p = self.section("potential")
        try:
            return PotentialSpec.from_dict(p)
        except ValueError as exc:
            raise ConfigError(f"invalid potential: {exc}") from exc

    def to_toml(self) -> str:
        return dumps_toml(self.values)

    def hash(self) -> str:
        """SHA-256 of the resolved config excluding the worker count and output path."""
        vals = {k: v for k, v in self.values.items() if k not in ("experiment.threads", "experiment.out")}
        return hashlib.sha256(dumps_toml(vals).encode()).hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.to_toml())
        except OSError as exc:
            raise OutputError(f"cannot write config {path}: {exc}") from exc
        return path


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML file (or none) and apply flat-key overrides on top."""
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OutputError(f"cannot read config {path}: {exc}") from exc
        try:
            values = _flatten(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    values.update(overrides or {})
    return ExperimentConfig(values)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        r = repr(v)
        return r if any(c in r for c in ".en") else r + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise {v!r}")


def dumps_toml(flat: dict) -> str:
    """Write flat dotted keys as one table per section, keys in sorted order."""
    sections: dict = {}
    for key in sorted(flat):
        sec, _, name = key.rpartition(".")
        sections.setdefault(sec, []).append((name, flat[key]))
    lines = []
    for sec in sorted(sections):
        if lines:
            lines.append("")
        if sec:
            lines.append(f"[{sec}]")
        lines.extend(f"{name} = {_toml_value(v)}" for name, v in sections[sec])
    return "\n".join(lines) + "\n"


def initial_density(cfg: ExperimentConfig, m: int | None = None, d: int | None = None) -> GridDensity:
    """The configured reference density on an ``m^d`` grid."""
    m = cfg["initial.m"] if m is None else m
    d = cfg["potential.d"] if d is None else d
    kind = cfg["initial.kind"]
    if kind == "uniform":
        return GridDensity.uniform(m, d)
    centres = (np.arange(m) + 0.5) / m
    grids = np.meshgrid(*([centres] * d), indexing="ij")
    if kind == "cosine":
        a = cfg["initial.amplitude"]
        if not abs(a) < 1:
            raise ConfigError("initial.amplitude must lie in (-1, 1) for a positive density")
        vals = 1.0 + a * np.cos(2 * np.pi * grids[0])
    else:
        w = cfg["initial.width"]
        if not w > 0:
            raise ConfigError("initial.width must be positive")
        r2 = sum((g - 0.5) ** 2 for g in grids)
        vals = np.exp(-r2 / (2 * w * w)) + 1e-8
    vals = vals / vals.mean()
    return GridDensity(vals)
