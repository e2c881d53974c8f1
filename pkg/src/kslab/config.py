"""Experiment configuration: TOML in and out, validation, and builders for the run objects."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np
import tomli
import tomli_w

from . import functions as fn
from . import measures as ms
from .calculus import exponential, linear, squared
from .errors import ConfigurationError, UsageError
from .filter import Scenario
from .model import PRESETS, make_preset, stability_limit

PHI_PRESETS = ("linear-cos", "squared-cos", "exp-sin", "mean", "d2-benchmark")
MEASURE_PRESETS = ("bump", "dirac", "uniform")
SCALES = ("full", "smoke")

# TOML section -> (config attribute, TOML key)
LAYOUT = {
    "domain": (("lower", "lower"), ("upper", "upper"), ("n", "n"), ("boundary_mode", "boundary_mode")),
    "coefficients": (("preset", "preset"), ("params", "params")),
    "solver": (
        ("dt", "dt"),
        ("T", "T"),
        ("M", "M"),
        ("M_p", "M_p"),
        ("ess_threshold", "ess_threshold"),
        ("override_stability", "override_stability"),
    ),
    "functional": (("phi", "phi"), ("t", "t")),
    "measure": (("measure", "preset"), ("measure_center", "center"), ("measure_width", "width")),
    "metric": (("metric_m", "m"),),
    "run": (("seed", "seed"), ("out", "out"), ("workers", "workers")),
    "acceptance": (("scale", "scale"),),
}


@dataclass(frozen=True)
class ExperimentConfig:
    lower: float = 0.0
    upper: float = 1.0
    n: int = 128
    boundary_mode: str = "torus"
    preset: str = "torus-ou"
    params: dict = field(default_factory=dict)
    dt: float = 1e-3
    T: float = 0.5
    M: int = 1000
    M_p: int = 2000
    ess_threshold: float = 0.5
    override_stability: bool = False
    phi: str = "linear-cos"
    t: float = 0.0
    measure: str = "bump"
    measure_center: float = 0.2
    measure_width: float = 0.05
    metric_m: int = 16
    seed: int = 0
    out: str = "out"
    workers: int = 1
    scale: str = "full"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = {}
        for section, keys in LAYOUT.items():
            d[section] = {key: _plain(getattr(self, attr)) for attr, key in keys}
        return d

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    @property
    def hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_toml(cls, text, overrides=None):
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigurationError(f"cannot parse config: {exc}", line=int(m.group(1)) if m else None) from None
        return cls.from_dict(data, text, overrides)

    @classmethod
    def from_dict(cls, data, text="", overrides=None):
        """Build and validate; ``overrides`` (attribute -> value, e.g. from command-line
        flags) replace file values before validation."""
        kwargs = {}
        for section, body in data.items():
            if section not in LAYOUT:
                raise ConfigurationError(f"unknown config section [{section}]", field=section, line=_locate(text, section))
            if not isinstance(body, dict):
                raise ConfigurationError(f"[{section}] must be a table", field=section, line=_locate(text, section))
            keys = dict((key, attr) for attr, key in LAYOUT[section])
            for key, value in body.items():
                if key not in keys:
                    raise ConfigurationError(f"unknown key {section}.{key}", field=f"{section}.{key}", line=_locate(text, section, key))
                kwargs[keys[key]] = (value, f"{section}.{key}", _locate(text, section, key))
        for attr, value in (overrides or {}).items():
            kwargs[attr] = (value, _field_name(attr), None)
        defaults = cls()
        values = {}
        for f in dataclasses.fields(cls):
            if f.name not in kwargs:
                continue
            value, name, line = kwargs[f.name]
            values[f.name] = _coerce(value, getattr(defaults, f.name), name, line)
        cfg = cls(**values)
        cfg.validate({attr: (name, line) for attr, (_, name, line) in kwargs.items()})
        return cfg

    @classmethod
    def load(cls, path, overrides=None):
        with open(path) as fh:
            return cls.from_toml(fh.read(), overrides)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_toml())

    def validate(self, where=None):
        where = where or {}

        def fail(attr, msg):
            name, line = where.get(attr, (_field_name(attr), None))
            raise ConfigurationError(f"{name}: {msg}", field=name, line=line)

        if not self.upper > self.lower:
            fail("upper", "domain upper end must exceed the lower end")
        if self.n < 3:
            fail("n", "grid needs at least 3 points")
        if self.boundary_mode not in ms.BOUNDARY_MODES:
            fail("boundary_mode", f"must be one of {ms.BOUNDARY_MODES}")
        if self.preset not in PRESETS:
            fail("preset", f"unknown coefficient preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if not self.dt > 0:
            fail("dt", f"time step must be positive, got {self.dt}")
        if not self.T > 0:
            fail("T", f"horizon must be positive, got {self.T}")
        if self.M < 2:
            fail("M", "need at least 2 Monte Carlo paths")
        if self.M_p < 2:
            fail("M_p", "need at least 2 particles")
        if not 0 < self.ess_threshold <= 1:
            fail("ess_threshold", "must lie in (0, 1]")
        if self.phi not in PHI_PRESETS:
            fail("phi", f"unknown functional preset {self.phi!r}; choose from {PHI_PRESETS}")
        if not 0 <= self.t <= self.T:
            fail("t", f"start time must lie in [0, T = {self.T}]")
        if self.measure not in MEASURE_PRESETS:
            fail("measure", f"unknown measure preset {self.measure!r}; choose from {MEASURE_PRESETS}")
        if not self.lower <= self.measure_center <= self.upper:
            fail("measure_center", "must lie in the domain")
        if not self.measure_width > 0:
            fail("measure_width", "must be positive")
        if self.metric_m < 1:
            fail("metric_m", "metric family needs at least one function")
        if not 0 <= self.seed < 2**64:
            fail("seed", "must be an unsigned 64-bit integer")
        if self.workers < 1:
            fail("workers", "need at least one worker")
        if self.scale not in SCALES:
            fail("scale", f"must be one of {SCALES}")
        try:
            coeffs = self.coefficients()
        except ConfigurationError as exc:
            fail("params", str(exc))
        try:
            grid = self.grid()
        except UsageError as exc:
            fail("n", str(exc))
        limit = stability_limit(coeffs, grid)
        if self.dt > limit * (1 + 1e-12) and not self.override_stability:
            fail("dt", f"time step {self.dt:g} exceeds the stability bound {limit:.3g}; lower it or set override_stability")

    # builders ---------------------------------------------------------------

    def grid(self):
        return ms.DomainGrid(float(self.lower), float(self.upper), int(self.n), self.boundary_mode)

    def coefficients(self):
        params = dict(self.params)
        if self.preset != "constant":
            params.update(lower=self.lower, upper=self.upper)
        return make_preset(self.preset, **params)

    def scenario(self):
        return Scenario(self.grid(), self.coefficients(), float(self.T), float(self.dt), bool(self.override_stability))

    def initial_measure(self, grid=None):
        grid = grid or self.grid()
        if self.measure == "bump":
            return ms.gaussian_bump(grid, self.measure_center, self.measure_width)
        if self.measure == "dirac":
            return ms.dirac(grid, self.measure_center)
        return ms.uniform(grid)

    def terminal_functional(self, grid=None):
        grid = grid or self.grid()
        return build_phi(self.phi, grid, self.metric_m)


def mode(grid, j=1, kind="cos"):
    """Lowest admissible oscillation on the grid: periodic on the torus, Neumann on a box."""
    w = (2.0 if grid.periodic else 1.0) * np.pi * j / grid.length
    return (fn.cosine if kind == "cos" else fn.sine)(w, grid.lower)


def build_phi(name, grid, m=16):
    from .kolmogorov import TerminalFunctional
    from .varprinciple import lipschitz_benchmark

    if name == "linear-cos":
        return TerminalFunctional.from_cylinder(linear(mode(grid)), bound=1.0)
    if name == "squared-cos":
        return TerminalFunctional.from_cylinder(squared(mode(grid)), bound=1.0)
    if name == "exp-sin":
        return TerminalFunctional.from_cylinder(exponential(mode(grid, 1, "sin")), bound=float(np.e))
    if name == "mean":
        return TerminalFunctional.from_cylinder(linear(fn.monomial(1, grid.lower, grid.upper)), bound=1.0)
    if name == "d2-benchmark":
        fam = ms.build_metric_family(grid, m)
        mu_star = ms.gaussian_bump(grid, grid.lower + 0.5 * grid.length, 0.1 * grid.length)
        return lipschitz_benchmark(mu_star, fam)
    raise ConfigurationError(f"unknown functional preset {name!r}", field="functional.phi")


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _field_name(attr):
    for section, keys in LAYOUT.items():
        for a, key in keys:
            if a == attr:
                return f"{section}.{key}"
    return attr


def _coerce(value, default, name, line):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name}: expected true/false, got {value!r}", field=name, line=line)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{name}: expected an integer, got {value!r}", field=name, line=line)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name}: expected a number, got {value!r}", field=name, line=line)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{name}: expected a string, got {value!r}", field=name, line=line)
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value.values()):
            raise ConfigurationError(f"{name}: expected a table of numbers", field=name, line=line)
        return {k: float(v) for k, v in value.items()}
    return value


def _locate(text, section, key=None):
    """1-based line of ``[section]`` (or of ``key = ...`` inside it) in the TOML source."""
    if not text:
        return None
    current = None
    sub = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]\s*$")
    for i, raw in enumerate(text.splitlines(), 1):
        m = sub.match(raw)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i
            if key is not None and current == f"{section}.{key}":
                return i
            continue
        if key is not None and current == section and re.match(rf"^\s*{re.escape(key)}\s*=", raw):
            return i
    return None
