import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from mlpcm import moments
from mlpcm.types import NumericalError

positive = st.floats(min_value=1e-3, max_value=1e4, allow_nan=False, allow_infinity=False)


@given(positive)
def test_digamma_matches_scipy(x):
    assert moments.digamma(x) == pytest.approx(special.digamma(x), rel=1e-12, abs=1e-12)


@given(positive)
def test_trigamma_matches_scipy(x):
    assert moments.trigamma(x) == pytest.approx(special.polygamma(1, x), rel=1e-12)


@given(st.floats(min_value=1e-2, max_value=1e3))
def test_digamma_recurrence(x):
    assert moments.digamma(x + 1) - moments.digamma(x) == pytest.approx(1.0 / x, rel=1e-10)


@given(st.floats(min_value=0.05, max_value=50))
def test_trigamma_is_derivative_of_digamma(x):
    h = 1e-5 * x
    fd = (moments.digamma(x + h) - moments.digamma(x - h)) / (2 * h)
    assert moments.trigamma(x) == pytest.approx(fd, rel=1e-6)


def test_special_values():
    euler_gamma = 0.5772156649015329
    assert moments.digamma(1.0) == pytest.approx(-euler_gamma, abs=1e-14)
    assert moments.digamma(0.5) == pytest.approx(-euler_gamma - 2 * math.log(2), abs=1e-14)
    assert moments.trigamma(1.0) == pytest.approx(math.pi ** 2 / 6, abs=1e-14)


def test_vectorized_and_scalar_returns():
    xs = np.array([0.1, 1.0, 7.5, 100.0])
    assert isinstance(moments.digamma(2.0), float)
    np.testing.assert_allclose(moments.digamma(xs), special.digamma(xs), rtol=1e-13)
    np.testing.assert_allclose(moments.trigamma(xs), special.polygamma(1, xs), rtol=1e-13)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_domain_errors(bad):
    with pytest.raises(ValueError):
        moments.digamma(bad)
    with pytest.raises(ValueError):
        moments.trigamma(bad)


def test_e_exp_normal_overflow_is_reported():
    with pytest.raises(NumericalError):
        moments.e_exp_normal(800.0, 1.0)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_gaussian_moments_by_quadrature(d):
    """Per-coordinate 1-D quadrature: E exp(-x^2) factorizes over coordinates."""
    from scipy.integrate import quad
    rng = np.random.default_rng(d)
    m = rng.normal(size=d)
    c = 0.3
    total_sq, total_exp = 0.0, 1.0
    for mi in m:
        dens = lambda x, mi=mi: math.exp(-(x - mi) ** 2 / (2 * c)) / math.sqrt(2 * math.pi * c)
        total_sq += quad(lambda x: x * x * dens(x), -np.inf, np.inf)[0]
        total_exp *= quad(lambda x: math.exp(-x * x) * dens(x), -np.inf, np.inf)[0]
    assert moments.e_sqnorm_diff(m, c, d) == pytest.approx(total_sq, rel=1e-9)
    assert moments.e_exp_neg_sqnorm(m, c, d) == pytest.approx(total_exp, rel=1e-9)


def test_batched_layout_matches_loop():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(2, 5))
    c = rng.uniform(0.1, 1, size=5)
    batch = moments.e_exp_neg_sqnorm(m, c, 2)
    loop = [moments.e_exp_neg_sqnorm(m[:, i], c[i], 2) for i in range(5)]
    np.testing.assert_allclose(batch, loop, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 20), st.floats(0.1, 10))
def test_e_log_gamma_dist_against_quadrature(shape, rate):
    from scipy.integrate import quad
    from scipy.stats import gamma
    dist = gamma(a=shape, scale=1.0 / rate)
    lo, hi = dist.ppf(1e-14), dist.ppf(1 - 1e-14)
    val = quad(lambda x: math.log(x) * dist.pdf(x), lo, hi, limit=200)[0]
    assert moments.e_log_gamma_dist(shape, rate) == pytest.approx(val, abs=1e-7)


def test_e_log_dirichlet_component_and_vector_agree():
    delta = np.array([0.7, 2.0, 5.5])
    vec = moments.e_log_dirichlet(delta)
    for k in range(3):
        assert moments.e_log_dirichlet_component(delta, k) == vec[k]
    np.testing.assert_allclose(vec, special.digamma(delta) - special.digamma(delta.sum()))


def test_e_log_dirichlet_monte_carlo():
    rng = np.random.default_rng(1)
    delta = np.array([0.8, 1.5, 3.0])
    draws = np.log(rng.dirichlet(delta, size=200_000))
    se = draws.std(axis=0) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - moments.e_log_dirichlet(delta)) < 4 * se)
