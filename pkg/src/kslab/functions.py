"""Smooth scalar functions on the domain, carried together with their analytic derivatives.

A :class:`SmoothFunction` is the currency for test functions, coefficient fields
and the inner maps of cylinder functionals.  Derivatives are closed forms; no
numerical differentiation happens here.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class SmoothFunction:
    """Scalar function with optional first and second derivative callables.

    All callables are vectorised: they accept an array of abscissae and return
    an array of the same shape.
    """

    f: Callable[[Array], Array]
    df: Optional[Callable[[Array], Array]] = None
    d2f: Optional[Callable[[Array], Array]] = None
    name: str = "f"

    def __call__(self, x):
        return np.asarray(self.f(np.asarray(x, dtype=float)), dtype=float) + 0.0 * np.asarray(x, dtype=float)

    def derivative(self, x, order=1):
        fn = {1: self.df, 2: self.d2f}[order]
        if fn is None:
            from .errors import ConfigurationError

            raise ConfigurationError(f"{self.name}: derivative of order {order} is not available")
        x = np.asarray(x, dtype=float)
        return np.asarray(fn(x), dtype=float) + 0.0 * x

    @property
    def has_derivatives(self):
        return self.df is not None and self.d2f is not None

    def scaled(self, c, name=None):
        c = float(c)
        return SmoothFunction(
            lambda x: c * self.f(x),
            None if self.df is None else (lambda x: c * self.df(x)),
            None if self.d2f is None else (lambda x: c * self.d2f(x)),
            name or f"{c:g}*{self.name}",
        )

    def __add__(self, other):
        if not isinstance(other, SmoothFunction):
            return NotImplemented
        both = self.has_derivatives and other.has_derivatives
        return SmoothFunction(
            lambda x: self.f(x) + other.f(x),
            (lambda x: self.df(x) + other.df(x)) if both else None,
            (lambda x: self.d2f(x) + other.d2f(x)) if both else None,
            f"({self.name}+{other.name})",
        )


def constant(c=1.0):
    c = float(c)
    zero = lambda x: np.zeros_like(x, dtype=float)
    return SmoothFunction(lambda x: np.full_like(x, c, dtype=float), zero, zero, f"{c:g}")


def monomial(p, lower=0.0, upper=1.0):
    """``((x - lower) / (upper - lower)) ** p``, i.e. a monomial in the rescaled variable."""
    p = int(p)
    L = float(upper - lower)
    lo = float(lower)
    if p == 0:
        return constant(1.0)

    def f(x):
        return ((x - lo) / L) ** p

    def df(x):
        return p * ((x - lo) / L) ** (p - 1) / L

    def d2f(x):
        if p == 1:
            return np.zeros_like(x, dtype=float)
        return p * (p - 1) * ((x - lo) / L) ** (p - 2) / L**2

    return SmoothFunction(f, df, d2f, f"xi^{p}")


def cosine(omega, shift=0.0, amplitude=1.0):
    """``amplitude * cos(omega * (x - shift))``."""
    w, s, a = float(omega), float(shift), float(amplitude)
    return SmoothFunction(
        lambda x: a * np.cos(w * (x - s)),
        lambda x: -a * w * np.sin(w * (x - s)),
        lambda x: -a * w * w * np.cos(w * (x - s)),
        f"{a:g}cos({w:g}(x-{s:g}))",
    )


def sine(omega, shift=0.0, amplitude=1.0):
    """``amplitude * sin(omega * (x - shift))``."""
    w, s, a = float(omega), float(shift), float(amplitude)
    return SmoothFunction(
        lambda x: a * np.sin(w * (x - s)),
        lambda x: a * w * np.cos(w * (x - s)),
        lambda x: -a * w * w * np.sin(w * (x - s)),
        f"{a:g}sin({w:g}(x-{s:g}))",
    )


def quadratic_bump(lower=0.0, upper=1.0, amplitude=1.0):
    """``amplitude * (x - lower)(upper - x)``; vanishes at both endpoints."""
    lo, hi, a = float(lower), float(upper), float(amplitude)
    return SmoothFunction(
        lambda x: a * (x - lo) * (hi - x),
        lambda x: a * (lo + hi - 2.0 * x),
        lambda x: np.full_like(x, -2.0 * a, dtype=float),
        f"{a:g}(x-{lo:g})({hi:g}-x)",
    )


def linear_combination(funcs, coeffs, name=None):
    """``sum_i c_i f_i`` keeping derivatives when every term has them."""
    funcs = tuple(funcs)
    c = np.asarray(coeffs, dtype=float)
    both = all(fn.has_derivatives for fn in funcs)

    def f(x):
        return sum(ci * fn.f(x) for ci, fn in zip(c, funcs))

    def df(x):
        return sum(ci * fn.df(x) for ci, fn in zip(c, funcs))

    def d2f(x):
        return sum(ci * fn.d2f(x) for ci, fn in zip(c, funcs))

    return SmoothFunction(f, df if both else None, d2f if both else None, name or "lincomb")


def random_trig(rng, n_terms=3, max_freq=3, period=1.0, lower=0.0):
    """Random periodic trigonometric polynomial with sup-norm at most 1."""
    funcs, coeffs = [], []
    for _ in range(n_terms):
        k = int(rng.integers(1, max_freq + 1))
        w = 2.0 * np.pi * k / period
        fn = cosine(w, lower) if rng.random() < 0.5 else sine(w, lower)
        funcs.append(fn)
        coeffs.append(rng.uniform(-1.0, 1.0))
    coeffs = np.asarray(coeffs)
    coeffs = coeffs / max(1.0, np.abs(coeffs).sum())
    return linear_combination(funcs, coeffs, name="trig")


_SAMPLES = weakref.WeakKeyDictionary()


def on_grid(func, grid, order=0):
    """Cached samples of ``func`` (or its derivative of ``order``) at the grid points."""
    per_func = _SAMPLES.setdefault(func, {})
    key = (grid, order)
    if key not in per_func:
        x = grid.points
        vals = func(x) if order == 0 else func.derivative(x, order)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), x.shape).copy()
        vals.flags.writeable = False
        per_func[key] = vals
    return per_func[key]
