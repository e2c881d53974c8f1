import math

import numpy as np
import pytest

from kslab import functions as fn
from kslab import measures as ms
from kslab import model, oracles
from kslab.calculus import CylinderFunctional, QuadraticMap, constant_functional, exponential, linear, random_cylinder, squared
from kslab.errors import ConfigurationError, UsageError
from kslab.filter import Scenario
from kslab.kolmogorov import (
    TERM_NAMES,
    TerminalFunctional,
    exp_scale,
    generator_apply,
    linear_generator_surface,
    martingale_residual,
    solve_u,
    tower_oracle,
)

COS = fn.cosine(2 * np.pi)


def _random_coefficients(rng, grid):
    if grid.periodic:
        return model.torus_ou(*rng.uniform([0.0, 0.05, 0.0, 0.0, 0.0], [1.0, 0.4, 0.3, 2.0, 1.0]))
    return model.pinned_box(*rng.uniform([0.0, 0.1, 0.0, 0.0], [1.0, 0.5, 0.3, 2.0]))


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


def test_generator_of_constant_is_zero(torus, ou):
    out = generator_apply(ou, constant_functional(2.5), ms.sample_random_measure(torus, 1))
    assert out.compact == 0.0 and out.expanded == 0.0
    assert set(out.terms) == set(TERM_NAMES) and all(v == 0.0 for v in out.terms.values())


@pytest.mark.parametrize("discrete", [False, True])
def test_generator_of_linear_functional_is_signal_generator(rng, torus, box, discrete):
    for grid in (torus, box):
        c = _random_coefficients(rng, grid)
        mu = ms.sample_random_measure(grid, int(rng.integers(100)))
        psi = fn.random_trig(rng, 3, 3, grid.length, grid.lower) if grid.periodic else fn.cosine(np.pi * 2, grid.lower)
        out = generator_apply(c, linear(psi), mu, discrete=discrete)
        Apsi = model.apply_A(c, grid.sample(psi) if discrete else psi, grid)
        assert out.compact == pytest.approx(mu.weights @ Apsi, rel=1e-12, abs=1e-12)
        assert out.agrees


def test_compact_and_expanded_forms_agree_on_random_triples(rng, torus, box):
    worst = 0.0
    for i in range(100):
        grid = torus if i % 2 == 0 else box
        c = _random_coefficients(rng, grid)
        F = random_cylinder(rng, grid)
        mu = ms.sample_random_measure(grid, i, float(rng.uniform(0.2, 5.0)))
        out = generator_apply(c, F, mu)
        assert out.agrees, (i, out.compact, out.expanded)
        worst = max(worst, out.discrepancy / (1.0 + abs(out.compact)))
    assert worst <= 1e-9


def test_squared_functional_forms_agree(rng, torus, ou):
    # F = <mu, phi>^2 with random phi, both the analytic and the stencil generator
    for seed in range(10):
        phi = fn.random_trig(rng, 3, 3)
        mu = ms.sample_random_measure(torus, seed)
        for discrete in (False, True):
            out = generator_apply(ou, squared(phi), mu, discrete=discrete)
            assert out.discrepancy <= 1e-9 * (1 + abs(out.compact))


def test_generator_second_order_part_of_squared_functional(torus, ou):
    # L<mu,phi>^2 = 2<mu,phi><mu,A phi> + |<mu,(h - hbar) phi + B phi>|^2
    mu = ms.gaussian_bump(torus, 0.35, 0.08)
    w, x = mu.weights, torus.points
    h = ou.h(x)
    m = w @ COS(x)
    K = (h - w @ h) * COS(x) + model.apply_B(ou, COS, torus)
    expected = 2 * m * (w @ model.apply_A(ou, COS, torus)) + (w @ K) ** 2
    assert generator_apply(ou, squared(COS), mu).compact == pytest.approx(expected, rel=1e-12)


def test_generator_needs_derivatives(torus, ou):
    bare = fn.SmoothFunction(np.cos, name="bare")
    F = CylinderFunctional((bare,), QuadraticMap(2.0 * np.eye(1), [0.0]), "bare^2")
    with pytest.raises(ConfigurationError):
        generator_apply(ou, F, ms.uniform(torus))


# ---------------------------------------------------------------------------
# Representation formula
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def scenario(torus):
    return Scenario(torus, model.torus_ou(), 0.5, 1e-3)


def test_terminal_time_is_exact(torus, scenario):
    mu = ms.gaussian_bump(torus, 0.3, 0.05)
    est = solve_u(squared(COS), mu, 0.5, 10, scenario)
    assert est.value == squared(COS).value(mu) and est.stderr == 0.0


def test_constant_terminal_condition(torus, scenario):
    est = solve_u(constant_functional(0.7), ms.gaussian_bump(torus, 0.3, 0.05), 0.1, 20, scenario)
    assert est.value == pytest.approx(0.7, abs=1e-15) and est.stderr <= 1e-15


def test_solve_u_is_deterministic_given_seed(torus, scenario):
    mu = ms.gaussian_bump(torus, 0.3, 0.05)
    a = solve_u(squared(COS), mu, 0.3, 8, scenario, seed=4)
    b = solve_u(squared(COS), mu, 0.3, 8, scenario, seed=4, workers=3)
    assert np.array_equal(a.samples, b.samples)
    assert a.stderr == pytest.approx(np.std(a.samples, ddof=1) / math.sqrt(8), rel=1e-12)


def test_solve_u_rejects_bad_arguments(torus, scenario):
    mu = ms.uniform(torus)
    with pytest.raises(UsageError):
        solve_u(linear(COS), mu, 0.1, 1, scenario)
    with pytest.raises(UsageError):
        solve_u(linear(COS), mu, 0.6, 10, scenario)
    with pytest.raises(UsageError):
        solve_u(linear(COS), mu, 0.1, 10, scenario, solver="spectral")


@pytest.mark.parametrize(
    "center,width,t,phi",
    [(0.3, 0.05, 0.0, COS), (0.7, 0.1, 0.2, fn.sine(2 * np.pi)), (0.5, 0.06, 0.4, fn.cosine(4 * np.pi))],
)
def test_linear_terminal_condition_follows_tower_property(torus, scenario, center, width, t, phi):
    mu = ms.gaussian_bump(torus, center, width)
    est = solve_u(linear(phi), mu, t, 400, scenario, seed=1)
    assert abs(est.value - tower_oracle(phi, mu, t, scenario)) <= 3 * est.stderr


def test_oracle_matches_closed_form_for_constant_coefficients(torus):
    # P_tau cos(2 pi x) = exp(-a (2 pi)^2 tau / 2) cos(2 pi (x + b tau))
    b, s, sb, tau = 0.3, 0.2, 0.1, 0.4
    c = model.constant_coefficients(b=b, sigma=s, sigma_bar=sb)
    a = s**2 + sb**2
    exact = np.exp(-0.5 * a * (2 * np.pi) ** 2 * tau) * np.cos(2 * np.pi * (torus.points + b * tau))
    assert np.allclose(oracles.signal_semigroup(COS, c, torus, tau), exact, atol=1e-10)


def test_box_oracle_converges():
    c = model.pinned_box()
    phi = fn.cosine(np.pi)
    coarse = ms.DomainGrid(0.0, 1.0, 33, "reflecting")
    vals = [oracles.signal_semigroup(phi, c, coarse, 0.3, refine=r) for r in (2, 4, 8)]
    e1, e2 = np.max(np.abs(vals[0] - vals[2])), np.max(np.abs(vals[1] - vals[2]))
    assert e1 / e2 > 3.0  # second order in dx


def test_grid_and_particle_solvers_agree(torus64):
    sc = Scenario(torus64, model.torus_ou(), 0.3, 1e-3)
    mu = ms.gaussian_bump(torus64, 0.3, 0.08)
    Phi = linear(COS)
    g = solve_u(Phi, mu, 0.0, 200, sc, seed=3)
    p = solve_u(Phi, mu, 0.0, 100, sc, solver="particle", seed=3, M_p=1000)
    assert abs(g.value - p.value) <= 3 * math.hypot(g.stderr, p.stderr)


def test_common_random_numbers_preserve_order(torus, scenario):
    mu = ms.gaussian_bump(torus, 0.3, 0.05)
    low = solve_u(squared(COS), mu, 0.1, 50, scenario, seed=2)
    high = solve_u(TerminalFunctional.generic(lambda m: abs(ms.pair(m, COS)), bound=1.0), mu, 0.1, 50, scenario, seed=2)
    assert np.all(low.samples <= high.samples) and low.value <= high.value


def test_estimates_respect_the_terminal_bound(torus, scenario):
    Phi = TerminalFunctional.from_cylinder(exponential(fn.sine(2 * np.pi)), bound=float(np.e))
    est = solve_u(Phi, ms.dirac(torus, 0.25), 0.0, 50, scenario, seed=5)
    assert abs(est.value) <= np.e and np.all(np.abs(est.samples) <= np.e)
    assert Phi.check_bound([ms.dirac(torus, 0.25), ms.uniform(torus)])[1]


# ---------------------------------------------------------------------------
# Martingale property
# ---------------------------------------------------------------------------


def test_martingale_residual_at_terminal_time(torus64):
    sc = Scenario(torus64, model.torus_ou(), 0.3, 1e-3)
    r = martingale_residual(squared(COS), ms.gaussian_bump(torus64, 0.3, 0.05), 0.1, 0.3, 50, 1, sc, seed=1)
    # the outer prefix is the direct path itself
    assert r.residual <= 1e-15


def test_martingale_residual_linear(torus64):
    sc = Scenario(torus64, model.torus_ou(), 0.3, 1e-3)
    r = martingale_residual(linear(COS), ms.gaussian_bump(torus64, 0.3, 0.05), 0.0, 0.15, 100, 40, sc, seed=2)
    assert r.residual <= 3 * r.stderr


def test_martingale_budget_is_enforced(torus64):
    sc = Scenario(torus64, model.torus_ou(), 0.3, 1e-3)
    with pytest.raises(UsageError, match="M_outer="):
        martingale_residual(linear(COS), ms.uniform(torus64), 0.0, 0.1, 1000, 1000, sc)
    with pytest.raises(UsageError):
        martingale_residual(linear(COS), ms.uniform(torus64), 0.2, 0.1, 10, 10, sc)


# ---------------------------------------------------------------------------
# Exponential rescaling
# ---------------------------------------------------------------------------


def test_exp_scale_identity_at_zero():
    vals = np.arange(6.0).reshape(2, 3)
    out = exp_scale(vals, [0.0, 0.1, 0.2], 0.0, np.zeros((2, 3)))
    assert np.array_equal(out.scaled, vals)
    assert np.allclose(out.residual, np.abs(np.gradient(vals, [0.0, 0.1, 0.2], axis=1)))


def test_exp_scale_constant_terminal_condition():
    times = np.linspace(0.0, 0.5, 11)
    out = exp_scale(np.full((1, 11), 0.8), times, 2.0, np.zeros((1, 11)))
    assert np.allclose(out.scaled, 0.8 * np.exp(2.0 * times))
    # only the time-difference error of a smooth exponential remains
    assert out.residual.max() < 2e-2


def test_exp_scale_rejects_negative_lambda():
    with pytest.raises(UsageError):
        exp_scale(np.zeros((1, 2)), [0.0, 1.0], -1.0)


def test_exp_scale_linear_surface(torus):
    sc = Scenario(torus, model.torus_ou(), 0.5, 1e-3)
    times = np.linspace(0.1, 0.4, 7)
    mus = [ms.gaussian_bump(torus, 0.3, 0.05), ms.gaussian_bump(torus, 0.7, 0.1)]
    est = [[solve_u(linear(COS), m, t, 400, sc, seed=1) for t in times] for m in mus]
    U = np.array([[e.value for e in row] for row in est])
    S = np.array([[e.stderr for e in row] for row in est])
    exact = np.array([[tower_oracle(COS, m, t, sc) for t in times] for m in mus])
    Lu = linear_generator_surface(COS, mus, times, sc)
    r_exact = exp_scale(exact, times, 1.0, Lu).residual
    r_mc = exp_scale(U, times, 1.0, Lu).residual
    # the exact surface leaves only the time-difference error
    assert r_exact.max() < 0.05
    # propagate the Monte Carlo errors through the difference stencil
    D = np.gradient(np.eye(times.size), times, axis=0, edge_order=2)
    g = np.exp(times)
    sd = np.sqrt((D**2) @ ((S * g) ** 2).T).T + g * S
    assert np.all(r_mc <= r_exact + 3 * sd)
