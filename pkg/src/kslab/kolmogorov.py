"""The measure-valued generator and the representation-formula solution of the backward equation.

For a cylinder functional ``u`` the generator is

    L u(mu) = <mu, A du/dm> + 1/2 <mu x mu, (h + B - <mu,h>)(x) (h + B - <mu,h>)(y) d2u/dm2>

and, expanded, the sum of nine terms (see :func:`generator_apply`).  The
solution with terminal condition ``Phi`` is ``u(mu, t) = E Phi(pi_T^{mu,t})``,
estimated by Monte Carlo over grid filter paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import oracles
from .calculus import (
    CylinderFunctional,
    l_derivative,
    l_derivative_dx,
    l_second,
    lf_l_mixed,
    lf_second,
)
from .errors import ConfigurationError, UsageError
from .filter import Scenario, _mean_se, run_grid_batch, solve_particle_filter
from .measures import GridMeasure
from .model import apply_A, apply_B, build_stencil

TERM_NAMES = (
    "drift",
    "sigma_diffusion",
    "sigma_bar_diffusion",
    "hh",
    "sigma_bar_sigma_bar",
    "hbar_sq",
    "h_sigma_bar_cross",
    "hbar_h",
    "hbar_sigma_bar",
)


@dataclass(frozen=True, eq=False)
class TerminalFunctional:
    """Terminal condition ``Phi``: either a cylinder functional or a generic continuous map.

    ``batch`` (generic variant) maps a weight batch (N, M) to M values; when
    absent ``func`` is applied column by column.
    """

    kind: str
    func: Callable
    cylinder: Optional[CylinderFunctional] = None
    bound: Optional[float] = None
    batch_func: Optional[Callable] = None
    name: str = "Phi"

    @classmethod
    def from_cylinder(cls, F, bound=None):
        return cls("cylinder", F.value, F, bound, None, F.name)

    @classmethod
    def generic(cls, func, bound=None, batch=None, name="Phi"):
        return cls("generic", func, None, bound, batch, name)

    def __call__(self, mu):
        return float(self.func(mu))

    def evaluate_batch(self, W, grid):
        W = np.asarray(W, dtype=float)
        if self.cylinder is not None:
            return np.atleast_1d(self.cylinder.batch(W, grid))
        if self.batch_func is not None:
            return np.atleast_1d(np.asarray(self.batch_func(W), dtype=float))
        return np.array([self.func(GridMeasure(grid, W[:, j])) for j in range(W.shape[1])])

    def check_bound(self, samples):
        """Empirical sup over sample measures, compared to the declared bound when there is one."""
        sup = max(abs(self(m)) for m in samples)
        ok = self.bound is None or sup <= self.bound * (1 + 1e-12)
        return sup, ok


@dataclass(frozen=True, eq=False)
class KolmogorovEstimate:
    value: float
    stderr: float
    M: int
    solver: str
    seed: int
    level: int = 0
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diagnostics: dict = field(default_factory=dict)


@dataclass
class GeneratorBreakdown:
    terms: dict
    compact: float
    expanded: float

    @property
    def discrepancy(self):
        return abs(self.compact - self.expanded)

    @property
    def agrees(self):
        return self.discrepancy <= 1e-9 * (1.0 + abs(self.compact))


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


def _double(mu_w, K):
    """``<mu x mu, K>`` as an explicit double sum over the grid."""
    return float(mu_w @ K @ mu_w)


def generator_apply(coeffs, F, mu, discrete=False):
    """Compact and expanded forms of ``L F(mu)``.

    ``discrete=False`` uses the closed-form derivatives of the inner functions;
    ``discrete=True`` replaces every spatial derivative by the grid stencils
    (this is the generator seen by the grid filter).
    """
    if not isinstance(F, CylinderFunctional):
        raise UsageError("generator_apply needs a cylinder functional")
    F._require_derivatives()
    grid = mu.grid
    w = mu.weights
    x = grid.points
    s = coeffs.on(grid)
    h, sb, sg = s["h"], s["sigma_bar"], s["sigma"]
    b = s["b"]
    hbar = float(w @ h)
    r = F.moments(mu)
    dg = F.g.grad(r)
    H = F.g.hess(r)
    P = F.samples(grid)

    # compact form
    if discrete:
        st = build_stencil(coeffs, grid)
        lf = dg @ P
        APsi = st.A @ lf
        K = np.stack([(h - hbar) * p + st.B @ p for p in P])
    else:
        APsi = sum(d * apply_A(coeffs, phi, grid) for d, phi in zip(dg, F.phis))
        K = np.stack([(h - hbar) * p + apply_B(coeffs, phi, grid) for p, phi in zip(P, F.phis)])
    Kmat = K.T @ H @ K
    compact = float(w @ APsi) + 0.5 * _double(w, Kmat)

    # expanded form
    X, Y = np.meshgrid(x, x, indexing="ij")
    if discrete:
        lf = dg @ P
        d_mu = st.D1 @ lf
        dx_d_mu = st.D2 @ lf
        lf2 = P.T @ H @ P
        mixed = (st.D1 @ lf2.T).T  # d_y of lf2(x, y)
        l2 = st.D1 @ mixed
    else:
        d_mu = l_derivative(F, mu, x)
        dx_d_mu = l_derivative_dx(F, mu, x)
        lf2 = lf_second(F, mu, X, Y)
        mixed = lf_l_mixed(F, mu, X, Y)
        l2 = l_second(F, mu, X, Y)
    terms = {
        "drift": float(w @ (b * d_mu)),
        "sigma_diffusion": 0.5 * float(w @ (sg**2 * dx_d_mu)),
        "sigma_bar_diffusion": 0.5 * float(w @ (sb**2 * dx_d_mu)),
        "hh": 0.5 * _double(w, lf2 * np.outer(h, h)),
        "sigma_bar_sigma_bar": 0.5 * _double(w, l2 * np.outer(sb, sb)),
        "hbar_sq": 0.5 * hbar**2 * _double(w, lf2),
        "h_sigma_bar_cross": _double(w, mixed * np.outer(h, sb)),
        "hbar_h": -hbar * _double(w, lf2 * h[:, None]),
        "hbar_sigma_bar": -hbar * _double(w, mixed * sb[None, :]),
    }
    expanded = math.fsum(terms.values())
    return GeneratorBreakdown(terms, compact, expanded)


# ---------------------------------------------------------------------------
# Representation formula
# ---------------------------------------------------------------------------


def _as_terminal(Phi):
    if isinstance(Phi, TerminalFunctional):
        return Phi
    if isinstance(Phi, CylinderFunctional):
        return TerminalFunctional.from_cylinder(Phi)
    if callable(Phi):
        return TerminalFunctional.generic(Phi)
    raise UsageError("terminal condition must be a TerminalFunctional, a cylinder functional or a callable")


def terminal_batch(mu, t, scenario, M, seed=0, level=0, workers=1, first_index=0):
    """Grid filter terminal weights (N, M) from ``(mu, t)`` plus the batch diagnostics."""
    return run_grid_batch(mu, t, scenario, range(first_index, first_index + M), seed, level, workers=workers)[0]


def solve_u(Phi, mu, t, M, scenario, solver="grid", seed=0, level=0, workers=1, M_p=2000, first_index=0):
    """Monte Carlo estimate of ``u(mu, t) = E Phi(pi_T^{mu,t})``.

    Paths ``first_index .. first_index + M - 1`` of the (seed, level) stream are
    used, so two calls with the same seed share their noise (common random
    numbers) whatever ``mu``, ``t`` or ``Phi``.
    """
    Phi = _as_terminal(Phi)
    if M < 2:
        raise UsageError("solve_u needs M >= 2")
    T = scenario.T
    if not 0.0 <= t <= T:
        raise UsageError(f"t = {t} outside [0, {T}]")
    grid = mu.grid
    if t == T:
        v = Phi(mu)
        return KolmogorovEstimate(v, 0.0, M, solver, seed, level, np.full(M, v), {"max_mass_error": 0.0, "min_weight": float(mu.weights.min())})
    if solver == "grid":
        batch = terminal_batch(mu, t, scenario, M, seed, level, workers, first_index)
        vals = Phi.evaluate_batch(batch.terminal, grid)
        diag = {
            "max_mass_error": batch.max_mass_error,
            "min_weight": batch.min_weight,
            "clipped_mass": float(batch.clipped_mass.sum()),
            "projections": batch.projections,
        }
    elif solver == "particle":
        W = []
        for j in range(first_index, first_index + M):
            p = solve_particle_filter(mu, t, scenario.coeffs, seed, M_p, T, scenario.dt, index=j, level=level)
            W.append(p.weights[-1])
        W = np.stack(W, axis=1)
        vals = Phi.evaluate_batch(W, grid)
        diag = {"max_mass_error": float(np.max(np.abs(W.sum(axis=0) - 1.0))), "min_weight": float(W.min())}
    else:
        raise UsageError(f"unknown solver {solver!r}")
    mean, se = _mean_se(vals)
    return KolmogorovEstimate(mean, se, M, solver, seed, level, vals, diag)


def tower_oracle(phi, mu, t, scenario):
    """``<mu, P_{T-t} phi>`` from the deterministic signal equation."""
    return oracles.signal_expectation(mu, phi, scenario.coeffs, scenario.T - t)


@dataclass
class MartingaleResult:
    residual: float
    stderr: float
    mean: float
    M_outer: int
    M_inner: int


def martingale_residual(Phi, mu, t, s, M_outer, M_inner, scenario, seed=0, workers=1, budget=200_000):
    """Nested estimate of ``|E u(pi_s^{mu,t}, s) - u(mu, t)|``.

    Outer path ``j`` is the prefix on ``[t, s]`` of the path used for the direct
    estimate of ``u(mu, t)``; the inner estimate at ``pi_s^j`` uses
    ``M_inner`` fresh paths of level 1.  The residual is the mean of the
    per-path differences, so the shared outer noise cancels.
    """
    Phi = _as_terminal(Phi)
    T = scenario.T
    if not t < s <= T:
        raise UsageError(f"need t < s <= T, got t={t}, s={s}, T={T}")
    if M_outer < 2 or M_inner < 1:
        raise UsageError("need M_outer >= 2 and M_inner >= 1")
    if M_outer * M_inner > budget:
        inner = max(1, budget // max(M_outer, 1))
        raise UsageError(
            f"nested budget {M_outer} x {M_inner} = {M_outer * M_inner} exceeds {budget}; "
            f"try M_outer={M_outer}, M_inner={inner} or M_outer={max(2, budget // M_inner)}, M_inner={M_inner}"
        )
    grid = mu.grid
    direct = terminal_batch(mu, t, scenario, M_outer, seed, 0, workers)
    phi_direct = Phi.evaluate_batch(direct.terminal, grid)
    sc_s = Scenario(grid, scenario.coeffs, s, scenario.dt, scenario.override_stability)
    outer = terminal_batch(mu, t, sc_s, M_outer, seed, 0, workers)
    diffs = np.empty(M_outer)
    for j in range(M_outer):
        m_s = outer.terminal[:, j]
        if s == T:
            inner_mean = float(Phi.evaluate_batch(m_s[:, None], grid)[0])
        else:
            inner = run_grid_batch(m_s, s, scenario, range(j * M_inner, (j + 1) * M_inner), seed, 1, workers=1)[0]
            vals = Phi.evaluate_batch(inner.terminal, grid)
            inner_mean = math.fsum(vals) / vals.size
        diffs[j] = inner_mean - phi_direct[j]
    mean, se = _mean_se(diffs)
    return MartingaleResult(abs(mean), se, mean, M_outer, M_inner)


@dataclass
class ExpScaleResult:
    scaled: np.ndarray
    residual: Optional[np.ndarray]
    lam: float


def exp_scale(values, times, lam, generator_values=None):
    """``u^lam = e^{lam t} u`` on a (measure, time) surface and the residual of
    ``d_t u^lam + L u^lam - lam u^lam = 0``.

    ``values`` has shape (n_measures, n_times).  The time derivative is a
    second-order difference, central inside and one-sided at the ends.  ``generator_values`` are
    ``L u`` at the same points; without them no residual is formed.
    """
    if lam < 0:
        raise UsageError("lambda must be nonnegative")
    u = np.atleast_2d(np.asarray(values, dtype=float))
    times = np.asarray(times, dtype=float)
    growth = np.exp(lam * times)
    scaled = u * growth[None, :]
    residual = None
    if generator_values is not None:
        Lu = np.atleast_2d(np.asarray(generator_values, dtype=float)) * growth[None, :]
        if times.size > 2:
            dt_scaled = np.gradient(scaled, times, axis=1, edge_order=2)
        elif times.size == 2:
            dt_scaled = np.gradient(scaled, times, axis=1)
        else:
            dt_scaled = np.zeros_like(scaled)
        residual = np.abs(dt_scaled + Lu - lam * scaled)
    return ExpScaleResult(scaled, residual, float(lam))


def linear_generator_surface(phi, mus, times, scenario):
    """``L u(mu, t) = <mu, A P_{T-t} phi>`` for the linear terminal condition ``<., phi>``."""
    out = np.empty((len(mus), len(times)))
    for j, t in enumerate(times):
        Av = oracles.generator_of_semigroup(phi, scenario.coeffs, scenario.grid, scenario.T - t)
        for i, m in enumerate(mus):
            out[i, j] = float(m.weights @ Av)
    return out
