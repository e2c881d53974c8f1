import numpy as np
import pytest

from kslab import functions as fn
from kslab import measures as ms
from kslab import model
from kslab.errors import ConfigurationError


def test_presets_satisfy_declared_bounds(torus, box):
    rep = model.check_hypotheses(model.torus_ou(), torus)
    assert rep.passed and rep.elliptic
    rep = model.check_hypotheses(model.pinned_box(), box)
    assert all(e["passed"] for e in rep.entries)
    assert not rep.elliptic and rep.min_sigma_sq == 0.0


def test_violated_bound_is_reported_not_raised(torus):
    c = model.torus_ou()
    bad = model.Coefficients(c.b, c.sigma, c.sigma_bar, c.h, dict(c.bounds, h=0.1), c.lipschitz)
    rep = model.check_hypotheses(bad, torus)
    assert not rep.passed
    assert [e["field"] for e in rep.entries if not e["passed"]] == ["h"]


def test_unknown_preset_names_the_field():
    with pytest.raises(ConfigurationError) as info:
        model.make_preset("nope")
    assert info.value.field == "coefficients.preset"


def test_invariance_reports(torus, box):
    assert model.check_invariance(model.torus_ou(), torus).vacuous
    rep = model.check_invariance(model.pinned_box(), box)
    assert rep.invariant and all(c["degeneracy"] == 0.0 for c in rep.conditions)
    assert model.check_invariance(model.pinned_box(), box, sign_flip=True).invariant  # drift vanishes at the walls
    rep = model.check_invariance(model.constant_coefficients(b=0.3, sigma=0.2), box)
    assert not rep.invariant


def test_generator_annihilates_constants(torus, box):
    for grid, c in ((torus, model.torus_ou()), (box, model.pinned_box())):
        st = model.build_stencil(c, grid)
        one = np.ones(grid.n)
        assert np.max(np.abs(st.A @ one)) < 1e-9 and np.max(np.abs(st.B @ one)) < 1e-9


def test_dual_operators_are_transposes(torus):
    st = model.build_stencil(model.torus_ou(), torus)
    assert (st.A_adj - st.A.T).count_nonzero() == 0
    assert (st.B_adj - st.B.T).count_nonzero() == 0


@pytest.mark.parametrize("mode", ["torus", "reflecting"])
def test_stencil_is_second_order(mode):
    c = model.torus_ou() if mode == "torus" else model.pinned_box()
    phi = fn.cosine(2 * np.pi) if mode == "torus" else fn.cosine(np.pi)
    errs = []
    for n in (32, 64, 128):
        grid = ms.DomainGrid(0, 1, n if mode == "torus" else n + 1, mode)
        exact = model.apply_A(c, phi, grid)
        disc = model.apply_A(c, grid.sample(phi), grid)
        errs.append(np.max(np.abs(exact - disc)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_apply_B_exact(torus):
    c = model.torus_ou()
    phi = fn.sine(2 * np.pi)
    assert np.allclose(model.apply_B(c, phi, torus), 0.05 * 2 * np.pi * np.cos(2 * np.pi * torus.points))


def test_stability_limit(torus):
    c = model.torus_ou()
    assert model.stability_limit(c, torus) == pytest.approx(0.25 * torus.dx**2 / (0.1**2 + 0.05**2))
    assert model.stability_limit(model.constant_coefficients(sigma=0.0), torus) == np.inf


def test_pinned_box_fields_vanish_on_walls(box):
    c = model.pinned_box()
    walls = np.array([0.0, 1.0])
    for f in (c.b, c.sigma, c.sigma_bar):
        assert np.all(f(walls) == 0.0)
