"""Discrete probability measures on a 1-D compact domain and the weighted metric d2.

Measures live on a fixed :class:`DomainGrid`; a :class:`GridMeasure` is a
probability vector over its points.  The metric is

    d2(mu, nu)^2 = sum_k 2^-k / q_k * <mu - nu, f_k>^2,   q_k = max(a_k, a_k^2, 1),

with ``a_k = max |f_k'|`` over the domain, computed from closed-form
derivatives of a truncated test-function family (see
:func:`build_metric_family`).  With a finite family d2 is a pseudometric on
grid measures; with the full countable family it is the complete metric that
induces weak convergence.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import functions as fn
from .errors import UsageError

MASS_TOL = 1e-12
BOUNDARY_MODES = ("torus", "reflecting")


@dataclass(frozen=True)
class DomainGrid:
    lower: float = 0.0
    upper: float = 1.0
    n: int = 128
    boundary_mode: str = "torus"

    def __post_init__(self):
        if self.n < 2:
            raise UsageError(f"grid needs at least 2 points, got n={self.n}")
        if not self.upper > self.lower:
            raise UsageError("grid requires upper > lower")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise UsageError(f"boundary_mode must be one of {BOUNDARY_MODES}, got {self.boundary_mode!r}")

    @property
    def length(self):
        return self.upper - self.lower

    @property
    def periodic(self):
        return self.boundary_mode == "torus"

    @property
    def dx(self):
        if self.periodic:
            return self.length / self.n
        return self.length / (self.n - 1)

    @cached_property
    def points(self):
        x = self.lower + self.dx * np.arange(self.n)
        x.flags.writeable = False
        return x

    def sample(self, f):
        """Values of a callable (or a ready-made array) at the grid points."""
        if isinstance(f, np.ndarray):
            if f.shape != (self.n,):
                raise UsageError(f"grid function has shape {f.shape}, expected ({self.n},)")
            return f
        return np.broadcast_to(np.asarray(f(self.points), dtype=float), (self.n,)).copy()

    def snap(self, x):
        """Index of the grid point nearest to ``x``."""
        if self.periodic:
            s = (x - self.lower) / self.dx
            return int(np.round(s)) % self.n
        return int(np.clip(np.round((x - self.lower) / self.dx), 0, self.n - 1))

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "n": self.n, "boundary_mode": self.boundary_mode}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lower"]), float(d["upper"]), int(d["n"]), str(d["boundary_mode"]))


def _check_weights(w, tol=MASS_TOL):
    if w.ndim != 1:
        raise UsageError("weights must be one-dimensional")
    if np.any(w < 0):
        raise UsageError(f"negative weight {w.min():.3e}")
    s = w.sum()
    if abs(s - 1.0) > tol:
        raise UsageError(f"weights sum to {s!r}, not 1")


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Probability vector on the points of ``grid``."""

    grid: DomainGrid
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.grid.n,):
            raise UsageError(f"weights have shape {w.shape}, grid has {self.grid.n} points")
        _check_weights(w)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, grid, w):
        """Normalise nonnegative weights (raises on negative entries or zero mass)."""
        w = np.asarray(w, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise UsageError("weights must be nonnegative with positive total mass")
        return cls(grid, w / w.sum())

    def __eq__(self, other):
        return isinstance(other, GridMeasure) and self.grid == other.grid and np.array_equal(self.weights, other.weights)

    __hash__ = None

    def mean(self):
        return float(self.weights @ self.grid.points)

    def to_json(self):
        return json.dumps({"grid": self.grid.to_dict(), "weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(DomainGrid.from_dict(d["grid"]), np.asarray(d["weights"], dtype=float))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["index", "x", "weight"])
            for i, (x, w) in enumerate(zip(self.grid.points, self.weights)):
                out.writerow([i, repr(float(x)), repr(float(w))])


def dirac(grid, x):
    """Point mass snapped to the nearest grid cell."""
    w = np.zeros(grid.n)
    w[grid.snap(x)] = 1.0
    return GridMeasure(grid, w)


def uniform(grid):
    return GridMeasure(grid, np.full(grid.n, 1.0 / grid.n))


def gaussian_bump(grid, center, width):
    """Discretised (wrapped, on the torus) Gaussian profile, normalised on the grid."""
    x = grid.points
    if grid.periodic:
        d = (x - center + 0.5 * grid.length) % grid.length - 0.5 * grid.length
    else:
        d = x - center
    return GridMeasure.from_weights(grid, np.exp(-0.5 * (d / width) ** 2))


def pair(mu, phi):
    """Integral ``<mu, phi>`` of a grid function (array or callable) against ``mu``."""
    w = mu.weights if isinstance(mu, GridMeasure) else np.asarray(mu, dtype=float)
    if isinstance(phi, np.ndarray):
        if phi.shape != w.shape:
            raise UsageError(f"grid function has shape {phi.shape}, measure has {w.shape}")
        vals = phi
    else:
        if not isinstance(mu, GridMeasure):
            raise UsageError("callable test functions need a GridMeasure to be sampled")
        vals = mu.grid.sample(phi)
    return float(w @ vals)


def interpolate(mu, nu, theta):
    """Convex combination ``theta * mu + (1 - theta) * nu``."""
    if not 0.0 <= theta <= 1.0:
        raise UsageError(f"theta must lie in [0, 1], got {theta}")
    if mu.grid != nu.grid:
        raise UsageError("measures live on different grids")
    if theta == 1.0:
        return mu
    if theta == 0.0:
        return nu
    w = theta * mu.weights + (1.0 - theta) * nu.weights
    w = np.maximum(w, 0.0)
    return GridMeasure(mu.grid, w / w.sum())


def sample_random_measure(grid, seed, concentration=1.0):
    """Dirichlet(concentration, ..., concentration) weights, reproducible from ``seed``."""
    if not concentration > 0:
        raise UsageError("concentration must be positive")
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.full(grid.n, float(concentration)))
    # Dirichlet draws with tiny concentration can underflow to an all-zero-but-one vector; that is still a measure.
    w = np.maximum(w, 0.0)
    return GridMeasure(grid, w / w.sum())


@dataclass(frozen=True, eq=False)
class MetricFamily:
    """Truncated test-function family ``f_1 = 1, f_2, ..., f_m`` used by d2."""

    grid: DomainGrid
    funcs: tuple
    values: np.ndarray  # (m, n) samples on the grid
    a: np.ndarray  # max |f_k'| over the domain
    q: np.ndarray  # max(a_k, a_k^2, 1)
    frequencies: tuple = field(default=())

    @property
    def m(self):
        return len(self.funcs)

    @cached_property
    def coefficients(self):
        """Series weights ``2^-k / q_k`` for k = 1..m."""
        k = np.arange(1, self.m + 1)
        return 2.0 ** (-k) / self.q

    def features(self, w):
        """Pairings ``<w, f_k>``; ``w`` is a weight vector (n,) or a batch (n, M)."""
        w = w.weights if isinstance(w, GridMeasure) else np.asarray(w, dtype=float)
        if w.ndim == 1:
            return (self.values * w).sum(axis=1)
        return np.stack([(fv[:, None] * w).sum(axis=0) for fv in self.values])


def build_metric_family(grid, m=16):
    """Constant function followed by ``m - 1`` oscillatory modes with sup-norm 1.

    Reflecting (box) grids get the Neumann cosine basis
    ``cos(j pi (x - lower) / L)``, j = 1, 2, ...; torus grids get the
    periodic Fourier basis ``cos, sin(2 pi j (x - lower) / L)``.  For a mode of
    angular frequency ``w`` the derivative bound is exactly ``a = w``.
    """
    if m < 1:
        raise UsageError(f"metric family needs m >= 1, got {m}")
    L = grid.length
    funcs = [fn.constant(1.0)]
    a = [0.0]
    freqs = [0.0]
    j = 1
    while len(funcs) < m:
        if grid.periodic:
            w = 2.0 * np.pi * j / L
            funcs.append(fn.cosine(w, grid.lower))
            a.append(w)
            freqs.append(w)
            if len(funcs) < m:
                funcs.append(fn.sine(w, grid.lower))
                a.append(w)
                freqs.append(w)
        else:
            w = np.pi * j / L
            funcs.append(fn.cosine(w, grid.lower))
            a.append(w)
            freqs.append(w)
        j += 1
    a = np.asarray(a)
    q = np.maximum.reduce([a, a**2, np.ones_like(a)])
    values = np.stack([grid.sample(f) for f in funcs])
    return MetricFamily(grid, tuple(funcs), values, a, q, tuple(freqs))


def d2(mu, nu, fam):
    if mu.grid != fam.grid or nu.grid != fam.grid:
        raise UsageError("measures and metric family must share a grid")
    diff = fam.features(mu.weights - nu.weights)
    return float(np.sqrt(np.sum(fam.coefficients * diff**2)))


def d2_from_features(fa, fb, fam):
    """d2 between measures given by precomputed feature vectors (broadcasts over leading axes)."""
    diff = np.asarray(fa) - np.asarray(fb)
    return np.sqrt(np.sum(fam.coefficients * diff**2, axis=-1))
