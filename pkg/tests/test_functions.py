import numpy as np
import pytest

from kslab import functions as fn
from kslab import measures as ms
from kslab.errors import ConfigurationError

X = np.linspace(0.05, 0.95, 37)
H = 1e-5


def fd1(f, x):
    return (f(x + H) - f(x - H)) / (2 * H)


def fd2(f, x):
    return (f(x + H) - 2 * f(x) + f(x - H)) / H**2


@pytest.mark.parametrize(
    "f",
    [
        fn.monomial(3, 0.0, 1.0),
        fn.monomial(1, -1.0, 2.0),
        fn.cosine(2 * np.pi, 0.3, 0.7),
        fn.sine(3.0, 0.1, -2.0),
        fn.quadratic_bump(0.0, 1.0, 4.0),
        fn.linear_combination([fn.cosine(1.0), fn.monomial(2)], [0.5, -1.5]),
    ],
    ids=lambda f: f.name,
)
def test_closed_form_derivatives_match_finite_differences(f):
    assert np.allclose(f.derivative(X, 1), fd1(f, X), atol=1e-7)
    assert np.allclose(f.derivative(X, 2), fd2(f, X), atol=2e-3)


def test_monomial_degree_zero_is_constant():
    f = fn.monomial(0)
    assert np.all(f(X) == 1.0) and np.all(f.derivative(X, 1) == 0.0)


def test_missing_derivative_raises():
    f = fn.SmoothFunction(np.sin, name="bare")
    assert not f.has_derivatives
    with pytest.raises(ConfigurationError):
        f.derivative(X, 1)


def test_sum_and_scale_keep_derivatives():
    f = fn.cosine(2.0) + fn.sine(2.0).scaled(3.0)
    assert np.allclose(f.derivative(X, 1), -2 * np.sin(2 * X) + 6 * np.cos(2 * X))


def test_random_trig_is_bounded_and_periodic(rng):
    f = fn.random_trig(rng, 4, 3, 1.0)
    x = np.linspace(0, 1, 1001)
    assert np.max(np.abs(f(x))) <= 1.0 + 1e-12
    assert np.isclose(f(np.array([0.0]))[0], f(np.array([1.0]))[0])


def test_grid_samples_are_cached_and_read_only():
    grid = ms.DomainGrid(0, 1, 16)
    f = fn.cosine(2 * np.pi)
    a = fn.on_grid(f, grid)
    assert a is fn.on_grid(f, grid)
    with pytest.raises(ValueError):
        a[0] = 1.0
