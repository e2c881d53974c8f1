"""Linear functional derivatives and L-derivatives of cylinder functionals.

A cylinder functional is ``F(mu) = g(<mu, phi_1>, ..., <mu, phi_n>)``.  Its
derivatives have the closed forms

    dF/dm(mu, x)        = sum_i  d_i g(r) phi_i(x)
    d2F/dm2(mu, x, y)   = sum_ij d_ij g(r) phi_i(x) phi_j(y)
    d_mu F(mu, x)       = sum_i  d_i g(r) phi_i'(x)
    d2_mu F(mu, x, y)   = sum_ij d_ij g(r) phi_i'(x) phi_j'(y)

with ``r = <mu, phi>``.  Everything is analytic; finite differences only appear
in the verifiers at the bottom of the module.

Throughout, a "weights" argument may be a :class:`~kslab.measures.GridMeasure`
or the bare probability vector; functions that need a grid take it from the
measure or from an explicit ``grid`` argument.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import functions as fn
from .errors import ConfigurationError, UsageError
from .measures import GridMeasure, interpolate


# ---------------------------------------------------------------------------
# Outer maps g: R^n -> R with closed-form gradient and Hessian.
# Arguments carry the moment index on axis 0 and arbitrary batch axes after it.
# ---------------------------------------------------------------------------


class OuterMap:
    n: int

    def value(self, r):
        raise NotImplementedError

    def grad(self, r):
        raise NotImplementedError

    def hess(self, r):
        raise NotImplementedError

    def __add__(self, other):
        return SumMap((self, other))


@dataclass(frozen=True, eq=False)
class QuadraticMap(OuterMap):
    """``c + b.r + 1/2 r^T Q r`` (Q symmetrised on construction)."""

    Q: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))

    @property
    def n(self):
        return self.b.size

    def value(self, r):
        r = np.asarray(r, dtype=float)
        Qr = np.tensordot(self.Q, r, axes=1)
        return self.c + np.tensordot(self.b, r, axes=1) + 0.5 * np.sum(r * Qr, axis=0)

    def grad(self, r):
        r = np.asarray(r, dtype=float)
        return self.b.reshape((-1,) + (1,) * (r.ndim - 1)) + np.tensordot(self.Q, r, axes=1)

    def hess(self, r):
        r = np.asarray(r, dtype=float)
        return np.broadcast_to(self.Q.reshape(self.Q.shape + (1,) * (r.ndim - 1)), self.Q.shape + r.shape[1:])


@dataclass(frozen=True, eq=False)
class RidgeMap(OuterMap):
    """``scale * psi(v.r)`` for a scalar profile ``psi`` in {exp, sin, cos, tanh}."""

    v: np.ndarray
    profile: str = "exp"
    scale: float = 1.0

    _PROFILES = {
        "exp": (np.exp, np.exp, np.exp),
        "sin": (np.sin, np.cos, lambda s: -np.sin(s)),
        "cos": (np.cos, lambda s: -np.sin(s), lambda s: -np.cos(s)),
        "tanh": (np.tanh, lambda s: 1.0 - np.tanh(s) ** 2, lambda s: -2.0 * np.tanh(s) * (1.0 - np.tanh(s) ** 2)),
    }

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(-1))
        if self.profile not in self._PROFILES:
            raise UsageError(f"unknown ridge profile {self.profile!r}")

    @property
    def n(self):
        return self.v.size

    def _s(self, r):
        return np.tensordot(self.v, np.asarray(r, dtype=float), axes=1)

    def value(self, r):
        return self.scale * self._PROFILES[self.profile][0](self._s(r))

    def grad(self, r):
        r = np.asarray(r, dtype=float)
        d1 = self._PROFILES[self.profile][1](self._s(r))
        return self.scale * self.v.reshape((-1,) + (1,) * (r.ndim - 1)) * d1

    def hess(self, r):
        r = np.asarray(r, dtype=float)
        d2 = self._PROFILES[self.profile][2](self._s(r))
        vv = np.outer(self.v, self.v).reshape((self.n, self.n) + (1,) * (r.ndim - 1))
        return self.scale * vv * d2


@dataclass(frozen=True, eq=False)
class PolynomialMap(OuterMap):
    """``sum_a coeff_a * prod_i r_i^{a_i}`` over a list of exponent tuples."""

    exponents: np.ndarray  # (n_terms, n) nonnegative integers
    coeffs: np.ndarray  # (n_terms,)

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.exponents, dtype=int))
        object.__setattr__(self, "exponents", E)
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(-1))
        if E.shape[0] != self.coeffs.size:
            raise UsageError("one coefficient per exponent tuple required")

    @property
    def n(self):
        return self.exponents.shape[1]

    @staticmethod
    def _mono(r, e):
        out = np.ones(r.shape[1:])
        for i, p in enumerate(e):
            if p:
                out = out * r[i] ** p
        return out

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return sum(c * self._mono(r, e) for c, e in zip(self.coeffs, self.exponents)) + np.zeros(r.shape[1:])

    def grad(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        for c, e in zip(self.coeffs, self.exponents):
            for i, p in enumerate(e):
                if p:
                    d = e.copy()
                    d[i] -= 1
                    out[i] = out[i] + c * p * self._mono(r, d)
        return out

    def hess(self, r):
        r = np.asarray(r, dtype=float)
        n = self.n
        out = np.zeros((n, n) + r.shape[1:])
        for c, e in zip(self.coeffs, self.exponents):
            for i, j in itertools.product(range(n), repeat=2):
                d = e.copy()
                if i == j:
                    if d[i] < 2:
                        continue
                    k = d[i] * (d[i] - 1)
                    d[i] -= 2
                else:
                    if d[i] < 1 or d[j] < 1:
                        continue
                    k = d[i] * d[j]
                    d[i] -= 1
                    d[j] -= 1
                out[i, j] = out[i, j] + c * k * self._mono(r, d)
        return out


@dataclass(frozen=True, eq=False)
class SumMap(OuterMap):
    parts: tuple

    @property
    def n(self):
        return self.parts[0].n

    def value(self, r):
        return sum(p.value(r) for p in self.parts)

    def grad(self, r):
        return sum(p.grad(r) for p in self.parts)

    def hess(self, r):
        return sum(p.hess(r) for p in self.parts)


# ---------------------------------------------------------------------------
# Cylinder functionals
# ---------------------------------------------------------------------------


def _weights(mu):
    return mu.weights if isinstance(mu, GridMeasure) else np.asarray(mu, dtype=float)


@dataclass(frozen=True, eq=False)
class CylinderFunctional:
    """``F(mu) = g(<mu, phi_1>, ..., <mu, phi_n>)``."""

    phis: tuple
    g: OuterMap
    name: str = "F"

    def __post_init__(self):
        object.__setattr__(self, "phis", tuple(self.phis))
        if len(self.phis) < 1:
            raise UsageError("cylinder functional needs at least one inner function")
        if self.g.n != len(self.phis):
            raise UsageError(f"outer map takes {self.g.n} arguments, {len(self.phis)} inner functions given")

    @property
    def n(self):
        return len(self.phis)

    def samples(self, grid, order=0):
        """(n, N) array of ``phi_i`` (or their derivatives) on the grid."""
        return np.stack([fn.on_grid(p, grid, order) for p in self.phis])

    def moments(self, mu, grid=None):
        """``<mu, phi_i>``; ``mu`` may be a weight batch of shape (N, M)."""
        grid = grid or mu.grid
        w = _weights(mu)
        P = self.samples(grid)
        if w.ndim == 1:
            return (P * w).sum(axis=1)
        return np.stack([(p[:, None] * w).sum(axis=0) for p in P])

    def __call__(self, mu, grid=None):
        return self.g.value(self.moments(mu, grid))

    def value(self, mu, grid=None):
        return float(self(mu, grid))

    def batch(self, W, grid):
        return np.asarray(self.g.value(self.moments(W, grid)), dtype=float)

    def _require_derivatives(self):
        missing = [p.name for p in self.phis if not p.has_derivatives]
        if missing:
            raise ConfigurationError(f"{self.name}: inner functions without derivative callables: {missing}")

    # grid-field forms ------------------------------------------------------

    def lf_grid(self, mu, normalize=True, grid=None):
        grid = grid or mu.grid
        r = self.moments(mu, grid)
        dg = self.g.grad(r)
        out = dg @ self.samples(grid)
        if normalize:
            out = out - float(dg @ r)
        return out

    def lf2_grid(self, mu, grid=None):
        grid = grid or mu.grid
        H = self.g.hess(self.moments(mu, grid))
        P = self.samples(grid)
        return P.T @ H @ P


def linear(phi, name=None):
    """``<mu, phi>``."""
    return CylinderFunctional((phi,), QuadraticMap(np.zeros((1, 1)), [1.0]), name or f"<mu,{phi.name}>")


def squared(phi, name=None):
    """``<mu, phi>^2``."""
    return CylinderFunctional((phi,), QuadraticMap(2.0 * np.eye(1), [0.0]), name or f"<mu,{phi.name}>^2")


def exponential(phi, name=None):
    """``exp(<mu, phi>)``."""
    return CylinderFunctional((phi,), RidgeMap([1.0], "exp"), name or f"exp<mu,{phi.name}>")


def constant_functional(c, phi=None):
    phi = phi or fn.constant(1.0)
    return CylinderFunctional((phi,), QuadraticMap(np.zeros((1, 1)), [0.0], float(c)), f"const {c:g}")


def random_cylinder(rng, grid, max_n=3):
    """Random cylinder functional with trigonometric inner maps and a smooth outer map."""
    n = int(rng.integers(1, max_n + 1))
    if grid.periodic:
        phis = tuple(fn.random_trig(rng, 3, 3, grid.length, grid.lower) for _ in range(n))
    else:
        phis = tuple(
            fn.linear_combination(
                [fn.cosine(np.pi * k / grid.length, grid.lower) for k in range(1, 4)],
                rng.uniform(-1, 1, 3) / 3.0,
                name="cos-mix",
            )
            for _ in range(n)
        )
    A = rng.normal(size=(n, n))
    g = QuadraticMap(A + A.T, rng.normal(size=n), float(rng.normal()))
    profile = ["exp", "sin", "cos", "tanh"][int(rng.integers(0, 4))]
    g = g + RidgeMap(rng.normal(size=n), profile, float(rng.normal()))
    return CylinderFunctional(phis, g, f"random[{n},{profile}]")


# ---------------------------------------------------------------------------
# Pointwise derivative operations
# ---------------------------------------------------------------------------


def _at(phis, x, order=0):
    x = np.asarray(x, dtype=float)
    if order == 0:
        return np.stack([p(x) for p in phis])
    return np.stack([p.derivative(x, order) for p in phis])


def lf_derivative(F, mu, x, normalize=True):
    """Linear functional derivative ``dF/dm(mu, x)``.

    With ``normalize`` the version with ``<mu, dF/dm(mu, .)> = 0`` is returned.
    ``x`` may be a scalar or an array of abscissae.
    """
    r = F.moments(mu)
    dg = F.g.grad(r)
    out = np.tensordot(dg, _at(F.phis, x), axes=1)
    if normalize:
        out = out - float(dg @ r)
    return out


def lf_second(F, mu, x, y):
    """Second linear functional derivative ``d2F/dm2(mu, x, y)`` (raw version)."""
    H = F.g.hess(F.moments(mu))
    return np.einsum("i...,ij,j...->...", _at(F.phis, x), H, _at(F.phis, y))


def l_derivative(F, mu, x):
    """L-derivative ``d_mu F(mu, x) = d/dx dF/dm(mu, x)``."""
    F._require_derivatives()
    dg = F.g.grad(F.moments(mu))
    return np.tensordot(dg, _at(F.phis, x, 1), axes=1)


def l_second(F, mu, x, y):
    """Second L-derivative ``d_x d_y d2F/dm2(mu, x, y)``."""
    F._require_derivatives()
    H = F.g.hess(F.moments(mu))
    return np.einsum("i...,ij,j...->...", _at(F.phis, x, 1), H, _at(F.phis, y, 1))


def l_derivative_dx(F, mu, x):
    """``d/dx d_mu F(mu, x)``, the spatial second derivative of dF/dm."""
    F._require_derivatives()
    dg = F.g.grad(F.moments(mu))
    return np.tensordot(dg, _at(F.phis, x, 2), axes=1)


def lf_l_mixed(F, mu, x, y):
    """``d_y d2F/dm2(mu, x, y)``: second linear derivative differentiated in its second slot."""
    F._require_derivatives()
    H = F.g.hess(F.moments(mu))
    return np.einsum("i...,ij,j...->...", _at(F.phis, x), H, _at(F.phis, y, 1))


@dataclass(frozen=True)
class DerivativeField:
    """A derivative of a functional as a callable in ``(mu, x)`` or ``(mu, x, y)``."""

    kind: str  # "lf", "lf2", "Lfirst", "Lsecond"
    evaluate: Callable
    normalized: bool = False

    def __call__(self, mu, *points):
        return self.evaluate(mu, *points)


def derivative_field(F, kind="lf", normalize=True):
    table = {
        "lf": (lambda mu, x: lf_derivative(F, mu, x, normalize)),
        "lf2": (lambda mu, x, y: lf_second(F, mu, x, y)),
        "Lfirst": (lambda mu, x: l_derivative(F, mu, x)),
        "Lsecond": (lambda mu, x, y: l_second(F, mu, x, y)),
    }
    if kind not in table:
        raise UsageError(f"unknown derivative kind {kind!r}")
    return DerivativeField(kind, table[kind], normalized=(kind == "lf" and normalize))


# ---------------------------------------------------------------------------
# Verifiers
# ---------------------------------------------------------------------------


def verify_lfd_identity(F, mu, nu, n_quad=32, normalize=True):
    """Residual of ``F(mu) - F(nu) = int_0^1 <mu - nu, dF/dm(theta mu + (1-theta) nu, .)> dtheta``.

    The derivative is evaluated as a grid field at every Gauss-Legendre node
    and paired with the signed measure ``mu - nu`` over the grid.
    """
    if n_quad < 1:
        raise UsageError("n_quad must be positive")
    nodes, wq = np.polynomial.legendre.leggauss(int(n_quad))
    theta = 0.5 * (nodes + 1.0)
    wq = 0.5 * wq
    diff = mu.weights - nu.weights
    integral = 0.0
    for th, w in zip(theta, wq):
        m = interpolate(mu, nu, float(th))
        integral += w * float(diff @ F.lf_grid(m, normalize=normalize))
    return abs(F.value(mu) - F.value(nu) - integral)


def directional_fd(F, mu, nu, eps):
    """Finite-difference quotient ``(F((1-eps) mu + eps nu) - F(mu)) / eps`` and its predicted limit."""
    m = interpolate(nu, mu, eps)
    quotient = (F.value(m) - F.value(mu)) / eps
    predicted = float((nu.weights - mu.weights) @ F.lf_grid(mu))
    return quotient, predicted
