import json
import math

import numpy as np
import pytest

from kslab import functions as fn
from kslab import measures as ms
from kslab import model, oracles
from kslab.calculus import constant_functional, exponential, linear, squared
from kslab.errors import SolverError, UsageError
from kslab.filter import (
    CylinderDynamics,
    NoisePath,
    Scenario,
    bin_particles,
    dynkin_residual,
    ito_residual,
    ito_residuals,
    run_grid_batch,
    solve_ks_grid,
    solve_particle_filter,
    systematic_resample,
    wrap_positions,
)
from kslab.kolmogorov import generator_apply

COS = fn.cosine(2 * np.pi)


def test_noise_path_is_determined_by_seed_index_level():
    a = NoisePath.generate(3, 1e-3, 0.0, 0.1, 5, 0)
    assert np.array_equal(a.increments, NoisePath.generate(3, 1e-3, 0.0, 0.1, 5, 0).increments)
    assert not np.array_equal(a.increments, NoisePath.generate(3, 1e-3, 0.0, 0.1, 6, 0).increments)
    assert not np.array_equal(a.increments, NoisePath.generate(3, 1e-3, 0.0, 0.1, 5, 1).increments)
    assert a.increments.size == 100 and a.times[-1] == pytest.approx(0.1)


def test_noise_paths_are_start_aligned():
    long = NoisePath.generate(1, 1e-3, 0.0, 0.5, 2)
    short = NoisePath.generate(1, 1e-3, 0.3, 0.5, 2)
    # same draws, scaled by step sizes that agree up to rounding
    assert np.allclose(short.increments, long.increments[: short.increments.size], rtol=1e-12, atol=0)


def test_last_step_is_shortened():
    p = NoisePath.generate(0, 0.03, 0.0, 0.1)
    assert np.allclose(p.steps, [0.03, 0.03, 0.03, 0.01])


def test_coarsening_sums_increments():
    p = NoisePath.generate(0, 1e-3, 0.0, 0.1)
    c = p.coarsen(5)
    assert c.dt == pytest.approx(5e-3)
    assert np.allclose(c.increments, p.increments.reshape(-1, 5).sum(axis=1))
    with pytest.raises(UsageError):
        p.coarsen(3)


def test_grid_path_conserves_mass_and_positivity(torus, ou):
    mu = ms.dirac(torus, 0.3)
    path = solve_ks_grid(mu, 0.0, ou, NoisePath.generate(4, 1e-3, 0.0, 0.2))
    assert path.weights.shape == (201, torus.n)
    assert np.max(np.abs(path.weights.sum(axis=1) - 1.0)) <= 1e-12
    assert path.weights.min() >= 0.0
    assert path.projections > 0 and path.clipped_mass > 0.0  # a Dirac start needs projection


def test_record_every_thins_snapshots(torus, ou):
    path = solve_ks_grid(ms.uniform(torus), 0.0, ou, NoisePath.generate(4, 1e-3, 0.0, 0.1), record_every=25)
    assert np.allclose(path.times, [0, 0.025, 0.05, 0.075, 0.1])


def test_stability_bound_is_enforced(torus, ou):
    noise = NoisePath.generate(0, 1e-2, 0.0, 0.1)
    with pytest.raises(UsageError):
        solve_ks_grid(ms.uniform(torus), 0.0, ou, noise)
    with pytest.warns(RuntimeWarning):
        solve_ks_grid(ms.uniform(torus), 0.0, ou, noise, override_stability=True)
    with pytest.warns(RuntimeWarning):
        with pytest.raises(SolverError) as info:
            solve_ks_grid(ms.dirac(torus, 0.5), 0.0, ou, NoisePath.generate(0, 0.5, 0.0, 5.0), override_stability=True)
    assert info.value.path_index == 0


def test_single_path_matches_batch_column_bitwise(torus64, ou):
    sc = Scenario(torus64, ou, 0.2, 1e-3)
    mu = ms.gaussian_bump(torus64, 0.4, 0.05)
    batch, _ = run_grid_batch(mu, 0.0, sc, range(6), 9)
    for j in (0, 5):
        single = solve_ks_grid(mu, 0.0, ou, NoisePath.generate(9, 1e-3, 0.0, 0.2, j))
        assert np.array_equal(single.weights[-1], batch.terminal[:, j])


@pytest.mark.parametrize("workers", [2, 3, 5])
def test_batches_do_not_depend_on_worker_count(torus64, ou, workers):
    sc = Scenario(torus64, ou, 0.1, 1e-3)
    mu = ms.gaussian_bump(torus64, 0.4, 0.05)
    ref = run_grid_batch(mu, 0.0, sc, range(11), 2)[0].terminal
    assert np.array_equal(run_grid_batch(mu, 0.0, sc, range(11), 2, workers=workers)[0].terminal, ref)


def test_uninformative_observation_leaves_filter_at_prior(torus):
    # constant h carries no information and the signal is frozen
    c = model.constant_coefficients(b=0.0, sigma=0.0, sigma_bar=0.0, h=2.0)
    mu = ms.gaussian_bump(torus, 0.3, 0.1)
    path = solve_ks_grid(mu, 0.0, c, NoisePath.generate(1, 1e-2, 0.0, 0.5))
    assert np.allclose(path.weights[-1], mu.weights, rtol=1e-12, atol=1e-15)


def test_frozen_signal_filter_is_a_martingale(torus):
    c = model.torus_ou(beta=0.0, sigma=0.0, sigma_bar=0.0, gamma=1.5)
    sc = Scenario(torus, c, 0.5, 1e-3)
    mu = ms.gaussian_bump(torus, 0.3, 0.1)
    batch, _ = run_grid_batch(mu, 0.0, sc, range(400), 3)
    vals = torus.sample(COS) @ batch.terminal
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - ms.pair(mu, COS)) <= 3 * se
    # the observations make the posterior random
    assert vals.std() > 0.05


def test_path_exports(tmp_path, torus, ou):
    path = solve_ks_grid(ms.uniform(torus), 0.0, ou, NoisePath.generate(4, 1e-3, 0.0, 0.01), record_every=5)
    path.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,x,weight" and len(lines) == 1 + 3 * torus.n
    doc = json.loads(path.to_json())
    assert doc["seed"] == 4 and len(doc["weights"]) == 3


# ---------------------------------------------------------------------------
# Particle filter
# ---------------------------------------------------------------------------


def test_wrap_and_reflect_positions(torus, box):
    assert np.allclose(wrap_positions(np.array([-0.25, 1.25, 0.5]), torus), [0.75, 0.25, 0.5])
    assert np.allclose(wrap_positions(np.array([-0.25, 1.25, 2.5]), box), [0.25, 0.75, 0.5])


def test_binning_preserves_mass_and_mean(torus, box):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.2, 0.8, 500)
    w = rng.random(500)
    w /= w.sum()
    for grid in (torus, box):
        b = bin_particles(x, w, grid)
        assert b.sum() == pytest.approx(1.0, abs=1e-15)
        assert b @ grid.points == pytest.approx(w @ x, abs=1e-12)


def test_systematic_resampling_counts():
    w = np.array([0.5, 0.25, 0.25])
    idx = systematic_resample(w, 0.1)
    # offsets 0.033, 0.367, 0.7 against cumulative weights 0.5, 0.75, 1
    assert np.bincount(idx, minlength=3).tolist() == [2, 1, 0]
    assert np.bincount(systematic_resample(np.full(4, 0.25), 0.5), minlength=4).tolist() == [1, 1, 1, 1]


def test_particle_filter_output(torus, ou):
    p = solve_particle_filter(ms.gaussian_bump(torus, 0.3, 0.05), 0.0, ou, 1, 500, 0.2, 1e-3, record_every=50)
    assert len(p) == 5
    assert np.max(np.abs(p.weights.sum(axis=1) - 1.0)) <= 1e-12 and p.weights.min() >= 0.0
    assert p.diagnostics["ess_min"] >= 2.0


def test_particle_weight_collapse_raises(torus):
    c = model.torus_ou(gamma=50.0)
    with pytest.raises(SolverError) as info:
        solve_particle_filter(ms.uniform(torus), 0.0, c, 0, 2, 0.1, 1e-3, index=7)
    assert info.value.path_index == 7


# ---------------------------------------------------------------------------
# Residual verifiers
# ---------------------------------------------------------------------------


def test_discrete_dynamics_match_stencil_generator(torus, ou, rng):
    from kslab.calculus import random_cylinder

    sc = Scenario(torus, ou, 0.5, 1e-3)
    F = random_cylinder(rng, torus)
    mu = ms.sample_random_measure(torus, 2)
    _, drift, _, _ = CylinderDynamics(F, sc).evaluate(mu.weights[:, None])
    assert drift[0] == pytest.approx(generator_apply(ou, F, mu, discrete=True).compact, rel=1e-12, abs=1e-12)


def test_dynkin_constant_test_function_is_zero(torus64, ou):
    sc = Scenario(torus64, ou, 0.5, 1e-3)
    res, _ = dynkin_residual(sc, fn.constant(1.0), ms.gaussian_bump(torus64, 0.3, 0.1), 0.2, 16)
    assert res[0].residual <= 1e-14 and res[0].stderr <= 1e-14


def test_dynkin_without_observation_noise_is_quadrature_error(torus64):
    # h = 0 and sigma_bar = 0: the filter is the deterministic forward scheme, each Euler step
    # advances <w, phi> by exactly dt <w, A phi>, so only the trapezoid end correction remains
    c = model.torus_ou(sigma_bar=0.0, gamma=0.0)
    sc = Scenario(torus64, c, 0.5, 1e-3)
    mu = ms.gaussian_bump(torus64, 0.2, 0.05)
    for phi in (COS, fn.sine(4 * np.pi)):
        for t in (0.1, 0.5):
            r = dynkin_residual(sc, [phi], mu, t, 2)[0][0]
            path = solve_ks_grid(mu, 0.0, c, NoisePath.generate(0, 1e-3, 0.0, t))
            Aphi = model.apply_A(c, torus64.sample(phi), torus64)
            quad = 0.5e-3 * abs((path.weights[-1] - mu.weights) @ Aphi)
            assert r.stderr == 0.0
            assert r.residual == pytest.approx(quad, rel=1e-9, abs=1e-15)
            if t == 0.1:
                assert r.residual < 1e-4


def test_dynkin_residual_first_order(torus64, ou):
    sc = Scenario(torus64, ou, 0.5, 1e-3)
    mu = ms.gaussian_bump(torus64, 0.2, 0.08)
    out = [dynkin_residual(sc, [squared(COS)], mu, 0.5, 200, seed=2, dt=dt)[0][0] for dt in (4e-3, 2e-3, 1e-3)]
    r = [o.residual for o in out]
    assert 1.5 < r[0] / r[1] < 2.5 and 1.5 < r[1] / r[2] < 2.5


def test_dynkin_needs_two_paths(torus64, ou):
    with pytest.raises(UsageError):
        dynkin_residual(Scenario(torus64, ou), COS, ms.uniform(torus64), 0.1, 1)


def test_forward_solution_converges_to_signal_oracle():
    # without observations the grid filter is the explicit scheme for the Fokker-Planck equation;
    # halving dt and dx together should cut the O(dt + dx^2) error by about two or more
    c = model.torus_ou(sigma_bar=0.0, gamma=0.0)
    for phi in (COS, fn.sine(2 * np.pi), fn.cosine(4 * np.pi)):
        errs = []
        for n, dt in ((64, 1e-3), (128, 5e-4)):
            grid = ms.DomainGrid(0.0, 1.0, n, "torus")
            mu = ms.gaussian_bump(grid, 0.2, 0.05)
            path = solve_ks_grid(mu, 0.0, c, NoisePath.generate(0, dt, 0.0, 0.5))
            errs.append(abs(path.terminal.weights @ grid.sample(phi) - oracles.signal_expectation(mu, phi, c, 0.5)))
        assert errs[0] < 1e-2 and errs[0] / errs[1] > 1.7


def test_ito_residual_constant_is_zero(torus64, ou):
    path = solve_ks_grid(ms.uniform(torus64), 0.0, ou, NoisePath.generate(0, 1e-3, 0.0, 0.1))
    assert ito_residual(constant_functional(3.0), path) == 0.0


def test_ito_residual_needs_full_record(torus64, ou):
    path = solve_ks_grid(ms.uniform(torus64), 0.0, ou, NoisePath.generate(0, 1e-3, 0.0, 0.1), record_every=10)
    with pytest.raises(UsageError):
        ito_residual(squared(COS), path)


def test_batched_ito_residuals_match_single_paths(torus64, ou):
    sc = Scenario(torus64, ou, 0.2, 1e-3)
    mu = ms.gaussian_bump(torus64, 0.2, 0.08)
    noises = [NoisePath.generate(5, 1e-3, 0.0, 0.2, j) for j in range(4)]
    r, _ = ito_residuals(exponential(COS), mu, 0.0, sc, noises)
    for j in (0, 3):
        single = ito_residual(exponential(COS), solve_ks_grid(mu, 0.0, ou, noises[j]))
        assert r[j] == pytest.approx(single, rel=1e-9, abs=1e-15)


def _rms_under_refinement(u, grid, ou, n_paths=40):
    sc = Scenario(grid, ou, 0.5, 1e-3)
    mu = ms.gaussian_bump(grid, 0.2, 0.08)
    fine = [NoisePath.generate(7, 5e-4, 0.0, 0.5, j) for j in range(n_paths)]
    rms = []
    for f in (4, 2, 1):
        r, _ = ito_residuals(u, mu, 0.0, sc, [nz.coarsen(f) if f > 1 else nz for nz in fine])
        rms.append(np.sqrt(np.mean(r**2)))
    return rms


def test_ito_residual_linear_is_first_order(torus64, ou):
    rms = _rms_under_refinement(linear(COS), torus64, ou)
    assert 1.7 < rms[0] / rms[1] < 2.3 and 1.7 < rms[1] / rms[2] < 2.3


def test_ito_residual_squared_strong_order(torus64, ou):
    # the realised quadratic variation term makes the pathwise error O(sqrt(dt)) for nonlinear u
    rms = _rms_under_refinement(squared(COS), torus64, ou)
    for a, b in zip(rms, rms[1:]):
        assert 2**0.5 * 0.85 < a / b < 2.0


def test_particle_filter_monte_carlo_rate(torus64):
    # h = 0 and sigma_bar = 0: weights stay uniform and the ensemble samples the signal law
    c = model.torus_ou(sigma_bar=0.0, gamma=0.0)
    fam = ms.build_metric_family(torus64, 16)
    mu = ms.gaussian_bump(torus64, 0.2, 0.05)
    exact = np.array([oracles.signal_expectation(mu, f, c, 0.2) for f in fam.funcs])
    sizes = np.array([250, 1000, 4000, 16000])
    rms = []
    for M_p in sizes:
        errs = []
        for s in range(12):
            p = solve_particle_filter(mu, 0.0, c, s, int(M_p), 0.2, 1e-3)
            assert p.diagnostics["resamples"] == 0
            errs.append(ms.d2_from_features(fam.features(p.terminal), exact, fam))
        rms.append(np.sqrt(np.mean(np.square(errs))))
    slope = np.polyfit(np.log(sizes), np.log(rms), 1)[0]
    assert -0.7 < slope < -0.35
