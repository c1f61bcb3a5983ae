import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlpcm import updates as up
from mlpcm.elbo import elbo_delta_for_block, elbo_mlpcm, elbo_poislpcm
from mlpcm.types import Hyperparams, Network, NumericalError, VariationalState

from _helpers import random_hyper, random_network, random_state

H = 1e-5


def fd(f, state, name, index, h=H):
    """Central difference of f(state) in one scalar entry of a state field."""
    plus, minus = state.copy(), state.copy()
    if np.ndim(getattr(state, name)) == 0:
        setattr(plus, name, getattr(state, name) + h)
        setattr(minus, name, getattr(state, name) - h)
    else:
        getattr(plus, name)[index] += h
        getattr(minus, name)[index] -= h
    return (f(plus) - f(minus)) / (2 * h)


def fd_log(f, state, name, index, h=H):
    """Central difference in log-space, i.e. x * df/dx, for positive parameters."""
    plus, minus = state.copy(), state.copy()
    getattr(plus, name)[index] *= math.exp(h)
    getattr(minus, name)[index] *= math.exp(-h)
    return (f(plus) - f(minus)) / (2 * h)


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1.0)


def instance(seed, model="mlpcm"):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(3, 9)), int(rng.integers(1, 4))
    net, s, h = random_network(rng, n), random_state(rng, n, k), random_hyper(rng, k)
    f = (lambda t: elbo_mlpcm(net, t, h).total) if model == "mlpcm" else \
        (lambda t: elbo_poislpcm(net, t, h).total)
    return rng, net, s, h, f


@pytest.mark.parametrize("seed", range(5))
def test_grad_u_sigma_fd(seed):
    rng, net, s, h, f = instance(seed)
    i = int(rng.integers(s.n))
    gu, gs = up.grad_u_sigma(s, net, h, i)
    for a in range(s.d):
        assert rel_err(gu[a], fd(f, s, "u_tilde", (a, i))) < 1e-5
    assert rel_err(gs, fd(f, s, "sigma2_tilde", i)) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_grad_v_varphi_fd(seed):
    rng, net, s, h, f = instance(seed)
    i, j = rng.choice(s.n, size=2, replace=False)
    gv, gp = up.grad_v_varphi(s, net, h, int(i), int(j))
    for a in range(s.d):
        assert rel_err(gv[a], fd(f, s, "v_tilde", (a, i, j))) < 1e-5
    assert rel_err(gp, fd(f, s, "varphi2_tilde", (i, j))) < 1e-5


@pytest.mark.parametrize("model", ["mlpcm", "poislpcm"])
@pytest.mark.parametrize("seed", range(4))
def test_grad_eta_rho_fd(seed, model):
    _, net, s, h, f = instance(seed, model)
    g = up.grad_eta_rho(s, net, h) if model == "mlpcm" else up.grad_eta_rho_pois(s, net, h)
    assert rel_err(g[0], fd(f, s, "eta_tilde", None)) < 1e-5
    assert rel_err(g[1], fd(f, s, "rho2_tilde", None)) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_grad_delta_fd(seed):
    _, _, s, h, f = instance(seed)
    g = up.grad_delta(s, h)
    for k in range(s.k):
        assert rel_err(g[k], fd(f, s, "delta_tilde", k)) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_grad_u_sigma_pois_fd(seed):
    rng, net, s, h, f = instance(seed, "poislpcm")
    i = int(rng.integers(s.n))
    gu, gs = up.grad_u_sigma_pois(s, net, h, i)
    for a in range(s.d):
        assert rel_err(gu[a], fd(f, s, "u_tilde", (a, i))) < 1e-5
    assert rel_err(gs, fd(f, s, "sigma2_tilde", i)) < 1e-5
    gu_all, gs_all = up.grad_u_sigma_pois_all(net, s, h)
    np.testing.assert_allclose(gu_all[:, i], gu, rtol=1e-12, atol=1e-12)
    assert gs_all[i] == pytest.approx(gs, rel=1e-12)


def test_vectorized_gradients_match_single_block():
    _, net, s, h, _ = instance(11)
    gu, gs = up.grad_u_sigma_all(net, s, h)
    gv, gp = up.grad_v_varphi_all(net, s, h)
    for i in range(s.n):
        a, b = up.grad_u_sigma(s, net, h, i)
        np.testing.assert_allclose(gu[:, i], a, rtol=1e-12)
        assert gs[i] == pytest.approx(b, rel=1e-12)
    a, b = up.grad_v_varphi(s, net, h, 0, 1)
    np.testing.assert_allclose(gv[:, 0, 1], a, rtol=1e-12)
    assert gp[0, 1] == pytest.approx(b, rel=1e-12)


# --- closed forms ---------------------------------------------------------------

def test_pi_examples():
    rng = np.random.default_rng(0)
    s = random_state(rng, 3, 1)
    np.testing.assert_allclose(up.update_pi_closed(s, None, Hyperparams(k=1), j=0), [1.0])
    s2 = random_state(rng, 3, 2)
    s2.mu_tilde[:] = 0.0
    s2.omega2_tilde[:] = 0.5
    s2.xi_tilde[:] = 2.0
    s2.psi_tilde[:] = 1.0
    s2.delta_tilde[:] = 1.5
    np.testing.assert_allclose(up.update_pi_closed(s2, None, Hyperparams(k=2), j=1), [0.5, 0.5])
    s2.delta_tilde = np.array([1.0, 2.5])
    logits = up.pi_logits(s2)[:, 0]
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    np.testing.assert_allclose(up.update_pi_closed(s2, None, Hyperparams(k=2), j=0), expected)
    # identical cluster factors; Dirichlet log-means differing by ln 3 give (1/4, 3/4)
    from scipy.optimize import brentq
    from scipy.special import digamma
    d2 = brentq(lambda x: digamma(x) - digamma(1.0) - math.log(3.0), 1.0, 10.0)
    s2.delta_tilde = np.array([1.0, d2])
    np.testing.assert_allclose(up.update_pi_closed(s2, None, Hyperparams(k=2), j=0),
                               [0.25, 0.75], rtol=1e-10)


def test_mu_omega_examples():
    s = VariationalState(
        u_tilde=np.array([[1.0], [1.0]]), sigma2_tilde=np.ones(1), v_tilde=np.zeros((2, 1, 1)),
        varphi2_tilde=np.ones((1, 1)), pi_tilde=np.ones((1, 1)), eta_tilde=0.0, rho2_tilde=1.0,
        mu_tilde=np.zeros((2, 1)), omega2_tilde=np.ones(1), xi_tilde=np.ones(1),
        psi_tilde=np.ones(1), a_tilde=np.ones(1), b_tilde=np.ones(1), delta_tilde=np.ones(1),
    )
    mu, om = up.update_mu_omega_closed(s, Hyperparams(k=1), k=0)
    np.testing.assert_allclose(mu, [0.5, 0.5])
    assert om == pytest.approx(0.5)
    rng = np.random.default_rng(2)
    s2 = random_state(rng, 4, 2)
    s2.pi_tilde = np.vstack([np.ones(4), np.zeros(4)])
    h = Hyperparams(k=2, omega2=2.0)
    mu, om = up.update_mu_omega_closed(s2, h, k=1)
    np.testing.assert_allclose(mu, 0.0)
    assert om == pytest.approx(2.0)
    xi, psi = up.update_xi_psi_closed(s2, h, k=1)
    assert (xi, psi) == (h.xi, h.psi)


def test_xi_and_a_examples():
    rng = np.random.default_rng(3)
    s = random_state(rng, 100, 1)
    s.pi_tilde = np.ones((1, 100))
    xi, _ = up.update_xi_psi_closed(s, Hyperparams(k=1), k=0)
    assert xi == pytest.approx(101.0)
    a, _ = up.update_ab_closed(s, None, Hyperparams(k=1), j=0)
    assert a == pytest.approx(109.0)


def test_ab_zero_dispersion_limit():
    rng = np.random.default_rng(4)
    s = random_state(rng, 4, 1)
    s.v_tilde = np.repeat(s.u_tilde[:, None, :], 4, axis=1)
    s.varphi2_tilde[:] = 1e-300
    s.sigma2_tilde[:] = 1e-300
    _, b = up.update_ab_closed(s, None, Hyperparams(k=1, b=1.7))
    np.testing.assert_allclose(b, 1.7)


def _apply_closed(s, net, h, which):
    t = s.copy()
    if which == "pi":
        t.pi_tilde = up.update_pi_closed(t, net, h)
    elif which == "mu":
        t.mu_tilde, t.omega2_tilde = up.update_mu_omega_closed(t, h)
    elif which == "xi":
        t.xi_tilde, t.psi_tilde = up.update_xi_psi_closed(t, h)
    else:
        t.a_tilde, t.b_tilde = up.update_ab_closed(t, net, h)
    return t


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["pi", "mu", "xi", "ab"]))
def test_closed_forms_never_decrease_elbo(seed, which):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(2, 8)), int(rng.integers(1, 4))
    net, s, h = random_network(rng, n), random_state(rng, n, k), random_hyper(rng, k)
    t = _apply_closed(s, net, h, which)
    assert elbo_mlpcm(net, t, h).total - elbo_mlpcm(net, s, h).total >= -1e-9
    assert np.allclose(t.pi_tilde.sum(axis=0), 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_closed_forms_are_stationary(seed):
    rng, net, s, h, f = instance(seed + 20)
    t = _apply_closed(s, net, h, "mu")
    for kk in range(t.k):
        for a in range(t.d):
            assert abs(fd(f, t, "mu_tilde", (a, kk))) < 1e-6
        assert abs(fd_log(f, t, "omega2_tilde", kk)) < 1e-6
    t = _apply_closed(t, net, h, "xi")
    for kk in range(t.k):
        assert abs(fd_log(f, t, "xi_tilde", kk)) < 1e-6
        assert abs(fd_log(f, t, "psi_tilde", kk)) < 1e-6
    t = _apply_closed(t, net, h, "ab")
    for j in range(t.n):
        assert abs(fd_log(f, t, "a_tilde", j)) < 1e-6
        assert abs(fd_log(f, t, "b_tilde", j)) < 1e-6


# --- steps -----------------------------------------------------------------------

def test_natural_step_example():
    mean, var = up.natural_step_gaussian(np.zeros(2), 1.0, np.zeros(2), -1.0, 1.0, 2)
    assert var == pytest.approx(math.exp(-1.0))
    np.testing.assert_array_equal(mean, 0.0)


def test_zero_gradient_leaves_state_unchanged():
    s = VariationalState(
        u_tilde=np.zeros((2, 2)), sigma2_tilde=np.ones(2), v_tilde=np.zeros((2, 2, 2)),
        varphi2_tilde=np.ones((2, 2)), pi_tilde=np.ones((1, 2)), eta_tilde=0.0, rho2_tilde=1.0,
        mu_tilde=np.zeros((2, 1)), omega2_tilde=np.ones(1), xi_tilde=np.ones(1),
        psi_tilde=np.ones(1), a_tilde=np.ones(2), b_tilde=np.ones(2), delta_tilde=np.ones(1),
    )
    net = Network(np.zeros((2, 2), dtype=int))
    gu, _ = up.grad_u_sigma(s, net, Hyperparams(k=1), 0)
    np.testing.assert_allclose(gu, 0.0, atol=1e-12)
    gv, _ = up.grad_v_varphi(s, net, Hyperparams(k=1), 0, 1)
    np.testing.assert_allclose(gv, 0.0, atol=1e-12)
    # empty responsibilities and delta_tilde equal to the prior: zero delta gradient
    t = s.copy()
    t.pi_tilde = np.ones((1, 2))
    h = Hyperparams(k=1, delta=[3.0])
    t.delta_tilde = np.array([1.0])
    np.testing.assert_allclose(up.grad_delta(t, h), 0.0, atol=1e-12)


def test_delta_gradient_zero_when_prior_matches_and_no_mass():
    rng = np.random.default_rng(5)
    s = random_state(rng, 3, 3)
    s.pi_tilde = np.full((3, 3), 1 / 3)
    s.delta_tilde = np.array([2.0, 2.0, 2.0])
    h = Hyperparams(k=3, delta=[1.0, 1.0, 1.0])
    g = up.grad_delta(s, h)
    assert np.allclose(g, g[0])
    new = up.step_delta(s, h, 0.5)
    assert np.all(new > 0)


def test_symmetric_two_node_configuration_has_zero_mean_gradient():
    s = VariationalState(
        u_tilde=np.array([[1.0, -1.0], [0.0, 0.0]]), sigma2_tilde=np.full(2, 0.3),
        v_tilde=np.zeros((2, 2, 2)), varphi2_tilde=np.full((2, 2), 0.2),
        pi_tilde=np.ones((1, 2)), eta_tilde=0.5, rho2_tilde=0.1, mu_tilde=np.zeros((2, 1)),
        omega2_tilde=np.ones(1), xi_tilde=np.ones(1), psi_tilde=np.ones(1),
        a_tilde=np.ones(2), b_tilde=np.ones(2), delta_tilde=np.ones(1),
    )
    s.v_tilde[:, 0, 1] = s.u_tilde[:, 1]
    s.v_tilde[:, 1, 0] = s.u_tilde[:, 0]
    net = Network(np.array([[0, 2], [2, 0]]))
    h = Hyperparams(k=1)
    g0, _ = up.grad_u_sigma_pois(s, net, h, 0)
    g1, _ = up.grad_u_sigma_pois(s, net, h, 1)
    np.testing.assert_allclose(g0, -g1, atol=1e-12)
    m0, _ = up.grad_u_sigma(s, net, h, 0)
    m1, _ = up.grad_u_sigma(s, net, h, 1)
    np.testing.assert_allclose(m0, -m1, atol=1e-12)


def test_eta_gradient_vanishes_when_rate_matches_total():
    rng = np.random.default_rng(6)
    net, s = random_network(rng, 5, 2.0), random_state(rng, 5, 2)
    from mlpcm.elbo import rate_total
    # choose eta so that the expected total rate equals the observed total
    s.eta_tilde = 0.0
    s.eta_tilde = math.log(net.weights.sum() / rate_total(s))
    h = Hyperparams(k=2, eta=s.eta_tilde)
    g_eta, _ = up.grad_eta_rho(s, net, h)
    assert abs(g_eta) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["u", "v", "eta", "delta", "upois", "etapois"]))
def test_halving_finds_non_decreasing_step(seed, kind):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(2, 7)), int(rng.integers(1, 4))
    net, s, h = random_network(rng, n), random_state(rng, n, k), random_hyper(rng, k)
    i = int(rng.integers(n))
    j = (i + 1) % n
    eps = 1.0
    for _ in range(60):
        t = s.copy()
        try:
            if kind == "u":
                t.u_tilde[:, i], t.sigma2_tilde[i] = up.step_u_sigma(s, net, h, i, eps)
                block, model = ("u_sigma", i), "mlpcm"
            elif kind == "upois":
                t.u_tilde[:, i], t.sigma2_tilde[i] = up.step_u_sigma_pois(s, net, h, i, eps)
                block, model = ("u_sigma", i), "poislpcm"
            elif kind == "v":
                t.v_tilde[:, i, j], t.varphi2_tilde[i, j] = up.step_v_varphi(s, net, h, i, j, eps)
                block, model = ("v_varphi", i, j), "mlpcm"
            elif kind == "eta":
                t.eta_tilde, t.rho2_tilde = up.step_eta_rho(s, net, h, eps)
                block, model = ("eta_rho",), "mlpcm"
            elif kind == "etapois":
                t.eta_tilde, t.rho2_tilde = up.step_eta_rho_pois(s, net, h, eps)
                block, model = ("eta_rho",), "poislpcm"
            else:
                t.delta_tilde = up.step_delta(s, h, eps)
                block, model = ("delta",), "mlpcm"
            if elbo_delta_for_block(net, s, t, block, h, model) >= 0:
                break
        except NumericalError:
            pass
        eps /= 2
    else:
        pytest.fail("no improving step after 60 halvings")
    assert t.sigma2_tilde.min() > 0 and t.rho2_tilde > 0 and t.delta_tilde.min() > 0


def test_step_rejects_non_positive_eps():
    rng = np.random.default_rng(0)
    net, s, h = random_network(rng, 3), random_state(rng, 3, 1), Hyperparams(k=1)
    with pytest.raises(ValueError):
        up.step_u_sigma(s, net, h, 0, 0.0)
    with pytest.raises(ValueError):
        up.step_delta(s, h, -1.0)
