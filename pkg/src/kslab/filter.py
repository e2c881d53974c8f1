"""Numerical solvers for the Kushner-Stratonovich filter equation.

Two independent routes:

* :func:`solve_ks_grid` integrates the dual (forward) form on the grid weights,

      w <- w + dt A^T w + dI [ (h - <w, h>) w + B^T w ],

  followed by a projection back onto the simplex (clip negatives, renormalise).
  ``A^T`` and ``B^T`` are the exact transposes of the stencils of
  :mod:`kslab.model`, so pairing a snapshot with a grid function reproduces
  the weak form step by step.

* :func:`solve_particle_filter` simulates a signal/observation pair and runs a
  weighted particle filter on the observations.

Seeds: every noise path is generated from ``SeedSequence([base, level, index])``
so that a path is identified by (base seed, path index, level) regardless of
how a batch is split across workers.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import functions as fn
from .calculus import CylinderFunctional, linear
from .errors import SolverError, UsageError
from .functions import SmoothFunction
from .measures import DomainGrid, GridMeasure
from .model import Coefficients, build_stencil, stability_limit

log = logging.getLogger(__name__)

BLOWUP = 10.0


def path_seed(base, index=0, level=0):
    return np.random.SeedSequence([int(base), int(level), int(index)])


def _step_sizes(t0, T, dt):
    if not dt > 0:
        raise UsageError(f"time step must be positive, got {dt}")
    if T < t0:
        raise UsageError(f"horizon end {T} precedes start {t0}")
    span = T - t0
    n = math.ceil(span / dt - 1e-9)
    if n == 0:
        return np.zeros(0)
    dts = np.full(n, float(dt))
    dts[-1] = span - (n - 1) * dt
    return dts


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Brownian increments of the innovation process on ``[t0, T]``."""

    seed: int
    dt: float
    t0: float
    T: float
    increments: np.ndarray
    index: int = 0
    level: int = 0

    @classmethod
    def generate(cls, seed, dt, t0, T, index=0, level=0):
        dts = _step_sizes(t0, T, dt)
        rng = np.random.default_rng(path_seed(seed, index, level))
        inc = rng.standard_normal(dts.size) * np.sqrt(dts)
        inc.flags.writeable = False
        return cls(int(seed), float(dt), float(t0), float(T), inc, int(index), int(level))

    @property
    def steps(self):
        return _step_sizes(self.t0, self.T, self.dt)

    @property
    def times(self):
        return self.t0 + np.concatenate([[0.0], np.cumsum(self.steps)])

    def coarsen(self, factor):
        """Same Brownian path sampled on a grid ``factor`` times coarser."""
        factor = int(factor)
        n = self.increments.size
        if n % factor or not np.allclose(self.steps, self.dt):
            raise UsageError("coarsening needs a uniform step count divisible by the factor")
        inc = self.increments.reshape(-1, factor).sum(axis=1)
        return NoisePath(self.seed, self.dt * factor, self.t0, self.T, inc, self.index, self.level)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Grid, coefficients, horizon and time step shared by a family of runs."""

    grid: DomainGrid
    coeffs: Coefficients
    T: float = 0.5
    dt: float = 1e-3
    override_stability: bool = False

    @property
    def stencil(self):
        return build_stencil(self.coeffs, self.grid)

    def with_dt(self, dt):
        return Scenario(self.grid, self.coeffs, self.T, dt, self.override_stability)

    def check_time_step(self, dt=None):
        check_time_step(self.grid, self.coeffs, self.dt if dt is None else dt, self.override_stability)


def check_time_step(grid, coeffs, dt, override=False):
    limit = stability_limit(coeffs, grid)
    if dt > limit * (1 + 1e-12):
        msg = f"time step {dt:g} exceeds the explicit stability bound {limit:.3g} = 0.25 dx^2 / max(sigma^2 + sigma_bar^2)"
        if not override:
            raise UsageError(msg + "; reduce dt or set the stability override")
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# Grid solver
# ---------------------------------------------------------------------------


@dataclass
class BatchResult:
    terminal: np.ndarray  # (N, M)
    clipped_mass: np.ndarray  # (M,) total mass removed by projection
    projections: int  # number of (step, path) pairs where clipping occurred
    max_mass_error: float
    min_weight: float
    snapshots: Optional[list] = None


def integrate_ks(W, stencil, h, increments, dts, observer=None, record_every=None, path_offset=0):
    """Euler-Maruyama on a batch of weight vectors.

    ``W`` is (N, M) with one path per column, ``increments`` is (M, n).
    ``observer(k, W, dI)`` is called at every time level before the step
    (``dI`` is None at the final level).
    """
    W = np.array(W, dtype=float, copy=True)
    if W.ndim == 1:
        W = W[:, None]
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    M = W.shape[1]
    n = dts.size
    if increments.shape != (M, n):
        raise UsageError(f"increments have shape {increments.shape}, expected {(M, n)}")
    # numpy sums a lone column pairwise but several columns row by row; pad single paths to
    # two columns so a path's arithmetic gives the same bits in whatever batch it runs
    if M == 1:
        W = np.hstack([W, W])
        increments = np.vstack([increments, increments])
    hc = h[:, None]
    A_adj, B_adj = stencil.A_adj, stencil.B_adj
    clipped = np.zeros(W.shape[1])
    projections = 0
    max_err = 0.0
    min_w = float(W[:, :M].min())
    snaps = [W[:, :M].copy()] if record_every else None
    for k in range(n):
        dI = increments[:, k]
        if observer is not None:
            observer(k, W[:, :M], dI[:M])
        hbar = (hc * W).sum(axis=0)
        noise = (hc - hbar) * W + B_adj @ W
        W = W + dts[k] * (A_adj @ W) + dI * noise
        big = np.abs(W[:, :M]) > BLOWUP
        if big.any():
            j = int(np.argmax(big.any(axis=0)))
            raise SolverError(
                f"grid solver blew up at step {k} (|w| > {BLOWUP}); reduce the time step",
                path_index=path_offset + j,
                diagnostics={"step": k, "dt": float(dts[k])},
            )
        neg = W < 0.0
        if neg.any():
            lost = -np.where(neg, W, 0.0).sum(axis=0)
            clipped += lost
            projections += int(np.count_nonzero(lost[:M]))
            W = np.where(neg, 0.0, W)
        W = W / W.sum(axis=0)
        max_err = max(max_err, float(np.max(np.abs(W[:, :M].sum(axis=0) - 1.0))))
        min_w = min(min_w, float(W[:, :M].min()))
        if record_every and ((k + 1) % record_every == 0 or k + 1 == n):
            snaps.append(W[:, :M].copy())
    W = W[:, :M]
    clipped = clipped[:M]
    if observer is not None:
        observer(n, W, None)
    return BatchResult(W, clipped, projections, max_err, min_w, snaps)


@dataclass(frozen=True, eq=False)
class FilterPath:
    """Time-indexed trajectory of grid measures for one noise realisation."""

    grid: DomainGrid
    times: np.ndarray
    weights: np.ndarray  # (n_snap, N)
    solver: str
    coeffs: Coefficients
    noise: Optional[NoisePath] = None
    seed: Optional[int] = None
    clipped_mass: float = 0.0
    projections: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def snapshot(self, i):
        return GridMeasure(self.grid, self.weights[i])

    @property
    def terminal(self):
        return self.snapshot(-1)

    def pair(self, phi):
        """``<pi_t, phi>`` at every snapshot."""
        return self.weights @ self.grid.sample(phi)

    def to_csv(self, path):
        x = self.grid.points
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "x", "weight"])
            for t, w in zip(self.times, self.weights):
                for xi, wi in zip(x, w):
                    out.writerow([repr(float(t)), repr(float(xi)), repr(float(wi))])

    def to_json(self):
        return json.dumps(
            {
                "solver": self.solver,
                "seed": self.seed,
                "grid": self.grid.to_dict(),
                "coefficients": {"preset": self.coeffs.name, **self.coeffs.params},
                "times": [float(t) for t in self.times],
                "weights": self.weights.tolist(),
                "clipped_mass": self.clipped_mass,
                "projections": self.projections,
            }
        )


def solve_ks_grid(mu0, t0, coeffs, noise, record_every=1, override_stability=False):
    """Grid solution of the filter equation from ``mu0`` at ``t0`` driven by ``noise``."""
    grid = mu0.grid
    if abs(noise.t0 - t0) > 1e-12:
        raise UsageError(f"noise path starts at {noise.t0}, solver at {t0}")
    check_time_step(grid, coeffs, noise.dt, override_stability)
    dts = noise.steps
    res = integrate_ks(
        mu0.weights, build_stencil(coeffs, grid), coeffs.on(grid)["h"], noise.increments[None, :], dts, record_every=record_every
    )
    times = noise.times
    if record_every and record_every > 1:
        keep = [0] + [k + 1 for k in range(dts.size) if (k + 1) % record_every == 0 or k + 1 == dts.size]
        times = times[keep]
    weights = np.stack([s[:, 0] for s in res.snapshots])
    if res.projections:
        log.debug("grid solver clipped %.3e mass over %d steps", res.clipped_mass[0], res.projections)
    return FilterPath(
        grid,
        times,
        weights,
        "grid",
        coeffs,
        noise,
        noise.seed,
        float(res.clipped_mass[0]),
        res.projections,
        {"max_mass_error": res.max_mass_error, "min_weight": res.min_weight},
    )


def _chunks(indices, workers):
    indices = list(indices)
    workers = max(1, int(workers))
    size = max(2, math.ceil(len(indices) / workers))
    chunks = [indices[i : i + size] for i in range(0, len(indices), size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        # keep every chunk at two columns or more (see integrate_ks)
        chunks[-2].extend(chunks.pop())
    return chunks


def run_grid_batch(mu0, t0, scenario, path_indices, seed, level=0, observer_factory=None, workers=1, increments=None, dt=None):
    """Simulate many grid paths; returns (BatchResult over all paths, list of observer results).

    Column ``j`` of the result is the path with index ``path_indices[j]``.  The
    output does not depend on ``workers``: every column is computed by the same
    elementwise and sparse-row operations whichever chunk it lands in.
    """
    dt = scenario.dt if dt is None else dt
    scenario.check_time_step(dt)
    grid = scenario.grid
    stencil = scenario.stencil
    h = scenario.coeffs.on(grid)["h"]
    dts = _step_sizes(t0, scenario.T, dt)
    w0 = mu0.weights if isinstance(mu0, GridMeasure) else np.asarray(mu0, dtype=float)
    indices = list(path_indices)

    def work(pos):
        idx = [indices[p] for p in pos]
        if increments is None:
            inc = np.stack([NoisePath.generate(seed, dt, t0, scenario.T, i, level).increments for i in idx]) if idx else np.zeros((0, dts.size))
        else:
            inc = np.asarray(increments)[pos]
        W = np.repeat(w0[:, None], len(idx), axis=1) if w0.ndim == 1 else w0[:, pos]
        obs = observer_factory(len(idx)) if observer_factory else None
        res = integrate_ks(W, stencil, h, inc, dts, observer=obs, path_offset=pos[0] if pos else 0)
        return res, (obs.result() if obs is not None else None)

    chunks = _chunks(range(len(indices)), workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    terminal = np.concatenate([p[0].terminal for p in parts], axis=1)
    merged = BatchResult(
        terminal,
        np.concatenate([p[0].clipped_mass for p in parts]),
        sum(p[0].projections for p in parts),
        max(p[0].max_mass_error for p in parts),
        min(p[0].min_weight for p in parts),
    )
    obs_results = [p[1] for p in parts]
    return merged, obs_results


# ---------------------------------------------------------------------------
# Particle filter
# ---------------------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    weights: np.ndarray
    ess_threshold: float = 0.5

    @property
    def size(self):
        return self.positions.size

    @property
    def ess(self):
        return float(1.0 / np.sum(self.weights**2))


def wrap_positions(x, grid):
    if grid.periodic:
        return grid.lower + np.mod(x - grid.lower, grid.length)
    lo, hi = grid.lower, grid.upper
    L = grid.length
    y = np.mod(x - lo, 2.0 * L)
    return lo + np.where(y > L, 2.0 * L - y, y)


def bin_particles(positions, weights, grid):
    """Linear (cloud-in-cell) deposit of weighted particles onto the grid."""
    s = (positions - grid.lower) / grid.dx
    if grid.periodic:
        i = np.floor(s).astype(int)
        frac = s - i
        i0 = np.mod(i, grid.n)
        i1 = np.mod(i + 1, grid.n)
    else:
        s = np.clip(s, 0.0, grid.n - 1)
        i = np.minimum(np.floor(s).astype(int), grid.n - 2)
        frac = s - i
        i0, i1 = i, i + 1
    w = np.bincount(i0, weights * (1.0 - frac), minlength=grid.n) + np.bincount(i1, weights * frac, minlength=grid.n)
    w = np.maximum(w, 0.0)
    return w / w.sum()


def systematic_resample(weights, u):
    """Indices of a systematic resample given one uniform ``u`` in [0, 1)."""
    M = weights.size
    c = np.cumsum(weights)
    c[-1] = 1.0
    return np.searchsorted(c, (u + np.arange(M)) / M, side="right")


def solve_particle_filter(mu0, t0, coeffs, seed, M_p, T, dt, ess_threshold=0.5, record_every=None, index=0, level=0):
    """Weighted particle filter on one simulated signal/observation pair.

    Signal ``dX = b dt + sigma dB + sigma_bar dW``, observation ``dY = h(X) dt + dW``.
    Particles move under the signal law conditioned on the shared noise,
    ``dX^j = (b - sigma_bar h) dt + sigma dB^j + sigma_bar dY``, and carry the
    likelihood weight ``exp(h dY - h^2 dt / 2)``.
    """
    if M_p < 2:
        raise UsageError("particle filter needs M_p >= 2")
    grid = mu0.grid
    dts = _step_sizes(t0, T, dt)
    n = dts.size
    ss_init, ss_signal, ss_obs, ss_part = path_seed(seed, index, level).spawn(4)
    rng_init = np.random.default_rng(ss_init)
    rng_sig = np.random.default_rng(ss_signal)
    rng_obs = np.random.default_rng(ss_obs)
    rng_p = np.random.default_rng(ss_part)
    x = grid.points
    probs = mu0.weights
    X = x[rng_init.choice(grid.n, p=probs)]
    P = x[rng_init.choice(grid.n, size=M_p, p=probs)]
    logw = np.zeros(M_p)
    wts = np.full(M_p, 1.0 / M_p)
    b, sig, sbar, h = coeffs.b, coeffs.sigma, coeffs.sigma_bar, coeffs.h
    times = [t0]
    snaps = [bin_particles(P, wts, grid)]
    ess_log = []
    resamples = 0
    t = t0
    for k in range(n):
        d = dts[k]
        sd = math.sqrt(d)
        dB = rng_sig.standard_normal() * sd
        dW = rng_obs.standard_normal() * sd
        Xa = np.array([X])
        dY = float(h(Xa)[0]) * d + dW
        X = float(wrap_positions(Xa + b(Xa) * d + sig(Xa) * dB + sbar(Xa) * dW, grid)[0])
        hp = h(P)
        sb = sbar(P)
        P = P + (b(P) - sb * hp) * d + sig(P) * sd * rng_p.standard_normal(M_p) + sb * dY
        P = wrap_positions(P, grid)
        logw = logw + hp * dY - 0.5 * hp * hp * d
        wts = np.exp(logw - logw.max())
        wts /= wts.sum()
        ess = 1.0 / np.sum(wts**2)
        ess_log.append(ess)
        if ess < 2.0:
            raise SolverError(
                f"particle weights collapsed at step {k} (ESS = {ess:.2f})",
                path_index=index,
                diagnostics={"step": k, "ess": ess, "max_weight": float(wts.max())},
            )
        u = rng_p.random()
        if ess < ess_threshold * M_p:
            P = P[systematic_resample(wts, u)]
            logw = np.zeros(M_p)
            wts = np.full(M_p, 1.0 / M_p)
            resamples += 1
        t = t0 + float(np.sum(dts[: k + 1]))
        if record_every and ((k + 1) % record_every == 0 or k + 1 == n) or (not record_every and k + 1 == n):
            times.append(t)
            snaps.append(bin_particles(P, wts, grid))
    return FilterPath(
        grid,
        np.asarray(times),
        np.stack(snaps),
        "particle",
        coeffs,
        None,
        int(seed),
        0.0,
        0,
        {"ess_min": float(min(ess_log)) if ess_log else float(M_p), "resamples": resamples, "M_p": M_p, "index": index},
    )


# ---------------------------------------------------------------------------
# Discrete generator pieces for cylinder functionals along a batch
# ---------------------------------------------------------------------------


def _as_cylinder(u):
    if isinstance(u, CylinderFunctional):
        return u
    if isinstance(u, SmoothFunction):
        return linear(u)
    raise UsageError("expected a CylinderFunctional or a SmoothFunction")


class CylinderDynamics:
    """Per-step moment-space quantities of a cylinder functional along the discrete filter.

    For ``u = g(<pi, phi>)`` with noise coefficients
    ``c_i = <pi, (h - <pi,h>) phi_i + B phi_i>``:

        drift  = sum_i d_i g <pi, A phi_i> + 1/2 sum_ij d_ij g c_i c_j     (= L u with stencils)
        stoch  = sum_i d_i g c_i
    """

    def __init__(self, u, scenario):
        self.u = _as_cylinder(u)
        grid = scenario.grid
        st = scenario.stencil
        self.h = scenario.coeffs.on(grid)["h"]
        self.P = self.u.samples(grid)
        self.AP = np.stack([st.A @ p for p in self.P])
        self.BP = np.stack([st.B @ p for p in self.P])

    @staticmethod
    def _pair(vals, W):
        return np.stack([(v[:, None] * W).sum(axis=0) for v in vals])

    def evaluate(self, W):
        r = self._pair(self.P, W)
        hbar = (self.h[:, None] * W).sum(axis=0)
        c = self._pair(self.P * self.h, W) - r * hbar + self._pair(self.BP, W)
        dg = self.u.g.grad(r)
        H = self.u.g.hess(r)
        value = self.u.g.value(r)
        drift = np.sum(dg * self._pair(self.AP, W), axis=0) + 0.5 * np.einsum("i...,ij...,j...->...", c, H, c)
        stoch = np.sum(dg * c, axis=0)
        quad = 0.5 * np.einsum("i...,ij...,j...->...", c, H, c)
        return value, drift, stoch, quad


class _ResidualObserver:
    """Accumulates the discretised Ito/Dynkin identity along a batch (trapezoid in time, left point in dI)."""

    def __init__(self, dyn, dts):
        self.dyn = dyn
        self.dts = dts
        self.start = None
        self.prev_drift = None
        self.dt_integral = 0.0
        self.martingale = 0.0
        self.second_order_cv = 0.0
        self.end = None

    def __call__(self, k, W, dI):
        value, drift, stoch, quad = self.dyn.evaluate(W)
        if k == 0:
            self.start = value
        else:
            self.dt_integral = self.dt_integral + 0.5 * self.dts[k - 1] * (self.prev_drift + drift)
        if dI is None:
            self.end = value
        else:
            self.martingale = self.martingale + stoch * dI
            self.second_order_cv = self.second_order_cv + quad * (dI * dI - self.dts[k])
        self.prev_drift = drift

    def result(self):
        return {
            "start": np.atleast_1d(self.start),
            "end": np.atleast_1d(self.end),
            "dt_integral": np.atleast_1d(self.dt_integral),
            "martingale": np.atleast_1d(self.martingale),
            "second_order_cv": np.atleast_1d(self.second_order_cv),
        }


class _MultiObserver:
    def __init__(self, observers):
        self.observers = observers

    def __call__(self, k, W, dI):
        for o in self.observers:
            o(k, W, dI)

    def result(self):
        return [o.result() for o in self.observers]


@dataclass
class DynkinResult:
    name: str
    residual: float
    stderr: float
    mean: float
    dt: float
    M: int
    control_variate: bool


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    M = values.size
    mean = math.fsum(values) / M
    var = math.fsum((values - mean) ** 2) / (M - 1) if M > 1 else 0.0
    return mean, math.sqrt(var / M)


def dynkin_residual(scenario, tests, mu0, t, M, seed=0, control_variate=True, workers=1, dt=None, increments=None, level=0):
    """Monte Carlo estimate of ``|E u(pi_t) - u(mu0) - E int_0^t L u(pi_s) ds|`` for each test functional.

    ``tests`` are cylinder functionals or smooth functions ``phi`` (meaning
    ``u = <., phi>``).  The time integral is a trapezoid sum.  With
    ``control_variate`` the discrete martingale ``sum c_k dI_k`` and the
    zero-mean second-order term ``sum 1/2 c_k^T H c_k (dI_k^2 - dt_k)`` are
    subtracted path by path; both have expectation exactly zero, so only the
    variance changes.

    Returns ``(results, batch)``: one :class:`DynkinResult` per test plus the
    batch diagnostics.
    """
    if M < 2:
        raise UsageError("dynkin_residual needs M >= 2")
    if isinstance(tests, (CylinderFunctional, SmoothFunction)):
        tests = [tests]
    dt = scenario.dt if dt is None else dt
    sc = Scenario(scenario.grid, scenario.coeffs, t, dt, scenario.override_stability)
    dts = _step_sizes(0.0, t, dt)
    dyns = [CylinderDynamics(u, sc) for u in tests]
    factory = lambda m: _MultiObserver([_ResidualObserver(d, dts) for d in dyns])
    batch, parts = run_grid_batch(mu0, 0.0, sc, range(M), seed, level, factory, workers, increments=increments, dt=dt)
    out = []
    for i, d in enumerate(dyns):
        rows = [p[i] for p in parts]
        cat = {key: np.concatenate([r[key] for r in rows]) for key in rows[0]}
        per_path = cat["end"] - cat["start"] - cat["dt_integral"]
        if control_variate:
            per_path = per_path - cat["martingale"] - cat["second_order_cv"]
        mean, se = _mean_se(per_path)
        out.append(DynkinResult(d.u.name, abs(mean), se, mean, dt, M, control_variate))
    return out, batch


def ito_residual(u, path):
    """Pathwise residual of the Ito expansion of ``u(pi_t)`` along a recorded grid path.

    ``u(pi_T) - u(pi_t0) - int L u dt - int <pi, (h + B - <pi,h>) du/dm> dI``
    with trapezoid ``dt`` sums and left-point ``dI`` sums, using the path's own
    noise increments.
    """
    if path.noise is None:
        raise UsageError("ito_residual needs a grid path that carries its noise")
    dts = path.noise.steps
    if len(path) != dts.size + 1:
        raise UsageError("ito_residual needs every time step recorded (record_every=1)")
    sc = Scenario(path.grid, path.coeffs, path.noise.T, path.noise.dt, True)
    dyn = CylinderDynamics(u, sc)
    obs = _ResidualObserver(dyn, dts)
    W = path.weights.T  # (N, n+1)
    for k in range(dts.size + 1):
        dI = path.noise.increments[k] if k < dts.size else None
        obs(k, W[:, k : k + 1], None if dI is None else np.array([dI]))
    r = obs.result()
    return float(abs(r["end"][0] - r["start"][0] - r["dt_integral"][0] - r["martingale"][0]))


def ito_residuals(u, mu0, t0, scenario, noises, workers=1):
    """:func:`ito_residual` for many noise paths at once, simulating the grid paths in a batch."""
    noises = list(noises)
    if not noises:
        raise UsageError("need at least one noise path")
    dt = noises[0].dt
    if any(nz.dt != dt or nz.t0 != t0 or nz.T != noises[0].T for nz in noises):
        raise UsageError("noise paths must share their time grid")
    sc = Scenario(scenario.grid, scenario.coeffs, noises[0].T, dt, scenario.override_stability)
    dts = _step_sizes(t0, sc.T, dt)
    dyn = CylinderDynamics(u, sc)
    inc = np.stack([nz.increments for nz in noises])
    batch, parts = run_grid_batch(
        mu0, t0, sc, range(len(noises)), 0, 0, lambda m: _ResidualObserver(dyn, dts), workers, increments=inc, dt=dt
    )
    r = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    return np.abs(r["end"] - r["start"] - r["dt_integral"] - r["martingale"]), batch
