"""Model coefficients b, sigma, sigma_bar, h and the operators A and B on the grid.

    A phi = b phi' + 1/2 (sigma^2 + sigma_bar^2) phi''
    B phi = sigma_bar phi'

Grid functions (arrays) go through second-order central-difference stencils;
smooth functions with closed-form derivatives are applied exactly.  The
forward (dual) operators used by the filter are the exact transposes of the
stencil matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import functions as fn
from .errors import ConfigurationError
from .functions import SmoothFunction
from .measures import DomainGrid

FIELDS = ("b", "sigma", "sigma_bar", "h")


def _as_smooth(f, name):
    if isinstance(f, SmoothFunction):
        return f
    if np.isscalar(f):
        return fn.constant(float(f))
    return SmoothFunction(f, name=name)


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Scalar model fields with declared sup-bounds and Lipschitz constants."""

    b: SmoothFunction
    sigma: SmoothFunction
    sigma_bar: SmoothFunction
    h: SmoothFunction
    bounds: dict = field(default_factory=dict)
    lipschitz: dict = field(default_factory=dict)
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for f in FIELDS:
            object.__setattr__(self, f, _as_smooth(getattr(self, f), f))

    def field(self, name):
        return getattr(self, name)

    def diffusion(self, x):
        """``a(x) = sigma(x)^2 + sigma_bar(x)^2``."""
        return self.sigma(x) ** 2 + self.sigma_bar(x) ** 2

    def on(self, grid):
        """Dict of field samples on the grid (cached)."""
        return {f: fn.on_grid(getattr(self, f), grid) for f in FIELDS}

    def max_diffusion(self, grid):
        s = self.on(grid)
        return float(np.max(s["sigma"] ** 2 + s["sigma_bar"] ** 2))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def torus_ou(beta=0.5, sigma=0.1, sigma_bar=0.05, gamma=1.5, center=0.5, lower=0.0, upper=1.0):
    """Mean reversion to ``center`` on the circle, constant diffusions, ``h = gamma sin(2 pi x / L)``."""
    L = upper - lower
    w = 2.0 * np.pi / L
    b = fn.sine(w, center, -beta)
    h = fn.sine(w, lower, gamma)
    return Coefficients(
        b,
        fn.constant(sigma),
        fn.constant(sigma_bar),
        h,
        bounds={"b": abs(beta), "sigma": abs(sigma), "sigma_bar": abs(sigma_bar), "h": abs(gamma)},
        lipschitz={"b": abs(beta) * w, "sigma": 0.0, "sigma_bar": 0.0, "h": abs(gamma) * w},
        name="torus-ou",
        params=dict(beta=beta, sigma=sigma, sigma_bar=sigma_bar, gamma=gamma, center=center),
    )


def pinned_box(beta=0.5, sigma=0.4, sigma_bar=0.2, gamma=1.0, lower=0.0, upper=1.0):
    """Box coefficients vanishing quadratically-in-product at both walls.

    ``sigma(x) = s * 4 xi (1 - xi)`` and ``b(x) = beta (1/2 - xi) 4 xi (1 - xi)``
    with ``xi = (x - lower) / L``, so the diffusion matrix and the drift vanish on
    the boundary.  Ellipticity fails there by construction.
    """
    L = upper - lower
    bump = fn.quadratic_bump(lower, upper, 4.0 / L**2)

    def b(x):
        xi = (x - lower) / L
        return beta * (0.5 - xi) * 4.0 * xi * (1.0 - xi)

    # sup |(1/2 - xi) 4 xi (1 - xi)| = 2 / (3 sqrt 12); its xi-derivative peaks at the walls with value 2
    return Coefficients(
        SmoothFunction(b, name="b"),
        bump.scaled(sigma, "sigma"),
        bump.scaled(sigma_bar, "sigma_bar"),
        fn.cosine(np.pi / L, lower, gamma),
        bounds={"b": abs(beta) * 2.0 / (3.0 * np.sqrt(12.0)), "sigma": abs(sigma), "sigma_bar": abs(sigma_bar), "h": abs(gamma)},
        lipschitz={"b": 2.0 * abs(beta) / L, "sigma": 4.0 * abs(sigma) / L, "sigma_bar": 4.0 * abs(sigma_bar) / L, "h": abs(gamma) * np.pi / L},
        name="pinned-box",
        params=dict(beta=beta, sigma=sigma, sigma_bar=sigma_bar, gamma=gamma),
    )


def constant_coefficients(b=0.0, sigma=1.0, sigma_bar=0.0, h=0.0):
    return Coefficients(
        fn.constant(b),
        fn.constant(sigma),
        fn.constant(sigma_bar),
        fn.constant(h),
        bounds={"b": abs(b), "sigma": abs(sigma), "sigma_bar": abs(sigma_bar), "h": abs(h)},
        lipschitz={f: 0.0 for f in FIELDS},
        name="constant",
        params=dict(b=b, sigma=sigma, sigma_bar=sigma_bar, h=h),
    )


PRESETS = {
    "torus-ou": torus_ou,
    "pinned-box": pinned_box,
    "constant": constant_coefficients,
}


def make_preset(name, **params):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown coefficient preset {name!r}; choose from {sorted(PRESETS)}", field="coefficients.preset")
    try:
        return PRESETS[name](**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for preset {name!r}: {exc}", field="coefficients") from None


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------


def difference_matrices(grid):
    """Central first and second difference matrices for the grid's boundary mode.

    Torus: wraparound.  Reflecting: even ghost values ``phi_{-1} = phi_1`` and
    ``phi_N = phi_{N-2}``, which zero the first difference at the walls.
    """
    n, h = grid.n, grid.dx
    D1 = sp.lil_matrix((n, n))
    D2 = sp.lil_matrix((n, n))
    for i in range(n):
        if grid.periodic:
            lo, hi = (i - 1) % n, (i + 1) % n
            D1[i, hi] += 0.5 / h
            D1[i, lo] -= 0.5 / h
            D2[i, hi] += 1.0 / h**2
            D2[i, lo] += 1.0 / h**2
            D2[i, i] -= 2.0 / h**2
        else:
            lo = 1 if i == 0 else i - 1
            hi = n - 2 if i == n - 1 else i + 1
            if 0 < i < n - 1:
                D1[i, hi] += 0.5 / h
                D1[i, lo] -= 0.5 / h
            D2[i, hi] += 1.0 / h**2
            D2[i, lo] += 1.0 / h**2
            D2[i, i] -= 2.0 / h**2
    return D1.tocsr(), D2.tocsr()


@dataclass(frozen=True, eq=False)
class OperatorStencil:
    grid: DomainGrid
    D1: sp.csr_matrix
    D2: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    A_adj: sp.csr_matrix
    B_adj: sp.csr_matrix


@lru_cache(maxsize=64)
def build_stencil(coeffs, grid):
    D1, D2 = difference_matrices(grid)
    s = coeffs.on(grid)
    a = s["sigma"] ** 2 + s["sigma_bar"] ** 2
    A = (sp.diags(s["b"]) @ D1 + 0.5 * sp.diags(a) @ D2).tocsr()
    B = (sp.diags(s["sigma_bar"]) @ D1).tocsr()
    return OperatorStencil(grid, D1, D2, A, B, A.T.tocsr(), B.T.tocsr())


def apply_A(coeffs, phi, grid):
    """``A phi`` on the grid.  Arrays use the stencil; smooth functions are applied exactly."""
    if isinstance(phi, SmoothFunction):
        x = grid.points
        return coeffs.b(x) * phi.derivative(x, 1) + 0.5 * coeffs.diffusion(x) * phi.derivative(x, 2)
    return build_stencil(coeffs, grid).A @ grid.sample(np.asarray(phi, dtype=float))


def apply_B(coeffs, phi, grid):
    """``B phi = sigma_bar phi'`` on the grid."""
    if isinstance(phi, SmoothFunction):
        x = grid.points
        return coeffs.sigma_bar(x) * phi.derivative(x, 1)
    return build_stencil(coeffs, grid).B @ grid.sample(np.asarray(phi, dtype=float))


def apply_A_adjoint(coeffs, p, grid):
    return build_stencil(coeffs, grid).A_adj @ p


def apply_B_adjoint(coeffs, p, grid):
    return build_stencil(coeffs, grid).B_adj @ p


def stability_limit(coeffs, grid, safety=0.25):
    """Largest admissible explicit step ``safety * dx^2 / max(sigma^2 + sigma_bar^2)``."""
    amax = coeffs.max_diffusion(grid)
    if amax == 0.0:
        return np.inf
    return safety * grid.dx**2 / amax


# ---------------------------------------------------------------------------
# Hypothesis and invariance reports
# ---------------------------------------------------------------------------


def _lipschitz_quotient(values, grid):
    x = grid.points
    dx = np.abs(x[:, None] - x[None, :])
    if grid.periodic:
        dx = np.minimum(dx, grid.length - dx)
    dv = np.abs(values[:, None] - values[None, :])
    mask = dx > 0
    return float(np.max(dv[mask] / dx[mask]))


@dataclass
class HypothesisReport:
    entries: list
    min_sigma_sq: float
    elliptic: bool

    @property
    def passed(self):
        return self.elliptic and all(e["passed"] for e in self.entries)

    def to_dict(self):
        return {"passed": self.passed, "elliptic": self.elliptic, "min_sigma_sq": self.min_sigma_sq, "entries": self.entries}


def check_hypotheses(coeffs, grid, rtol=1e-12):
    """Boundedness, Lipschitz and ellipticity checks of the coefficients on the grid.

    Violations are recorded in the report, never raised.
    """
    s = coeffs.on(grid)
    entries = []
    for f in FIELDS:
        sup = float(np.max(np.abs(s[f])))
        bound = coeffs.bounds.get(f)
        entries.append(
            {
                "field": f,
                "check": "bounded",
                "value": sup,
                "declared": bound,
                "passed": bool(np.isfinite(sup) and (bound is None or sup <= bound * (1 + rtol) + rtol)),
            }
        )
    for f in ("b", "sigma", "sigma_bar"):
        q = _lipschitz_quotient(s[f], grid)
        lip = coeffs.lipschitz.get(f)
        entries.append(
            {
                "field": f,
                "check": "lipschitz",
                "value": q,
                "declared": lip,
                "passed": bool(lip is not None and q <= lip * (1 + rtol) + rtol),
            }
        )
    sig2 = s["sigma"] ** 2
    min_sig2 = float(np.min(sig2))
    return HypothesisReport(entries, min_sig2, bool(min_sig2 > 0.0))


@dataclass
class InvarianceReport:
    mode: str
    conditions: list
    invariant: bool
    vacuous: bool = False

    def to_dict(self):
        return {"mode": self.mode, "invariant": self.invariant, "vacuous": self.vacuous, "conditions": self.conditions}


def check_invariance(coeffs, grid, sign_flip=False, tol=1e-12):
    """Boundary conditions for invariance of the box under the signal dynamics.

    At each wall with outward normal ``nu``: ``a nu^2 = 0`` (degeneracy) and
    ``b nu + 1/2 a rho'' >= 0`` as printed (``<= 0`` with ``sign_flip``); in one
    dimension the curvature term of the distance function vanishes.
    """
    if grid.periodic:
        return InvarianceReport("torus", [], True, vacuous=True)
    conds = []
    for x, nu in ((grid.lower, -1.0), (grid.upper, 1.0)):
        xa = np.array([x])
        a = float(coeffs.diffusion(xa)[0])
        b = float(coeffs.b(xa)[0])
        degeneracy = a * nu * nu
        drift = b * nu + 0.5 * a * 0.0
        drift_ok = drift <= tol if sign_flip else drift >= -tol
        conds.append(
            {
                "x": x,
                "normal": nu,
                "degeneracy": degeneracy,
                "degeneracy_ok": bool(abs(degeneracy) <= tol),
                "drift": drift,
                "drift_ok": bool(drift_ok),
            }
        )
    ok = all(c["degeneracy_ok"] and c["drift_ok"] for c in conds)
    return InvarianceReport("reflecting", conds, ok)
