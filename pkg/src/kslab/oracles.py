"""Deterministic reference solutions for the signal process.

These do not reuse the stencils of :mod:`kslab.model`.  On the torus the
backward and forward signal equations are discretised by Fourier collocation
on a refined grid; on a box by second-order finite differences with Neumann
ghost points on a refined grid.  Time is integrated exactly with a matrix
exponential.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .measures import DomainGrid, GridMeasure

REFINE = 4


def _fourier_matrices(n, L):
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=L / n)
    ik = 1j * k
    if n % 2 == 0:
        ik[n // 2] = 0.0  # odd derivative of the Nyquist mode
    eye = np.eye(n)
    F = np.fft.fft(eye, axis=0)
    D1 = np.fft.ifft(ik[:, None] * F, axis=0).real
    D2 = np.fft.ifft(-(k**2)[:, None] * F, axis=0).real
    return D1, D2


def _neumann_matrices(n, L):
    h = L / (n - 1)
    D1 = np.zeros((n, n))
    D2 = np.zeros((n, n))
    for i in range(n):
        lo = 1 if i == 0 else i - 1
        hi = n - 2 if i == n - 1 else i + 1
        if 0 < i < n - 1:
            D1[i, hi] += 0.5 / h
            D1[i, lo] -= 0.5 / h
        D2[i, hi] += 1.0 / h**2
        D2[i, lo] += 1.0 / h**2
        D2[i, i] -= 2.0 / h**2
    return D1, D2


def fine_grid(grid, refine=REFINE):
    n = grid.n * refine if grid.periodic else (grid.n - 1) * refine + 1
    return DomainGrid(grid.lower, grid.upper, n, grid.boundary_mode)


@lru_cache(maxsize=32)
def _generator_matrix(coeffs, grid, refine):
    fg = fine_grid(grid, refine)
    x = fg.points
    if fg.periodic:
        D1, D2 = _fourier_matrices(fg.n, fg.length)
    else:
        D1, D2 = _neumann_matrices(fg.n, fg.length)
    b = coeffs.b(x)
    a = coeffs.diffusion(x)
    return fg, b[:, None] * D1 + 0.5 * a[:, None] * D2


def signal_semigroup(phi, coeffs, grid, tau, refine=REFINE):
    """``P_tau phi(x) = E[phi(X_tau) | X_0 = x]`` at the points of ``grid``.

    ``phi`` is a callable; it is sampled on the refined grid.
    """
    fg, Lmat = _generator_matrix(coeffs, grid, refine)
    vals = expm(float(tau) * Lmat) @ np.asarray(phi(fg.points), dtype=float)
    return vals[::refine]


def signal_expectation(mu, phi, coeffs, tau, refine=REFINE):
    """``<mu, P_tau phi>``."""
    return float(mu.weights @ signal_semigroup(phi, coeffs, mu.grid, tau, refine))


def generator_of_semigroup(phi, coeffs, grid, tau, refine=REFINE):
    """``A P_tau phi`` at the points of ``grid`` (same refined discretisation)."""
    fg, Lmat = _generator_matrix(coeffs, grid, refine)
    E = expm(float(tau) * Lmat)
    vals = Lmat @ (E @ np.asarray(phi(fg.points), dtype=float))
    return vals[::refine]
