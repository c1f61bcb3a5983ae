"""Update kernels: closed-form block maximisers, analytic gradients and ascent steps.

Single-block functions mirror the public operation list; the ``*_all``
variants evaluate every node, dyad or cluster at once and are what the fit
loop uses. In the MLPCM node blocks are mutually independent (each node's
gradient involves only its own covert parameters), and so are dyad blocks,
which is why vectorising them is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .elbo import (
    _covert_parts,
    _expected_precisions,
    _safe_exp,
    mlpcm_dyad_quantities,
    poislpcm_dyad_quantities,
)
from .moments import e_log_dirichlet, trigamma
from .types import Hyperparams, Network, NumericalError, VariationalState, off_diagonal_mask

__all__ = [
    "StepSizes",
    "update_pi_closed",
    "update_mu_omega_closed",
    "update_xi_psi_closed",
    "update_ab_closed",
    "grad_u_sigma",
    "grad_u_sigma_all",
    "step_u_sigma",
    "grad_v_varphi",
    "grad_v_varphi_all",
    "step_v_varphi",
    "grad_eta_rho",
    "step_eta_rho",
    "grad_delta",
    "step_delta",
    "grad_u_sigma_pois",
    "grad_u_sigma_pois_all",
    "step_u_sigma_pois",
    "grad_eta_rho_pois",
    "step_eta_rho_pois",
]


@dataclass
class StepSizes:
    """Per-block learning rates; halved in place by the optimiser."""

    eps_u: np.ndarray
    eps_v: np.ndarray
    eps_beta: float = 1.0
    eps_pi: float = 1.0

    @classmethod
    def constant(cls, n: int, value: float = 1.0) -> "StepSizes":
        if not value > 0:
            raise ValueError("step sizes must be strictly positive")
        return cls(np.full(n, float(value)), np.full((n, n), float(value)), float(value), float(value))


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def pi_logits(state: VariationalState) -> np.ndarray:
    """(K, N) unnormalised log responsibilities."""
    return _covert_parts(state) + e_log_dirichlet(state.delta_tilde)[:, None]


def update_pi_closed(state: VariationalState, net: Optional[Network], hyper: Hyperparams,
                     j: Optional[int] = None) -> np.ndarray:
    """Optimal responsibilities: a column for node ``j`` or the full (K, N) matrix."""
    logits = pi_logits(state)
    logits = logits - logits.max(axis=0, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=0, keepdims=True)
    return w if j is None else w[:, j]


def update_mu_omega_closed(state: VariationalState, hyper: Hyperparams,
                           k: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal Gaussian factor for the cluster centres given everything else."""
    mass = state.pi_tilde.sum(axis=1)
    weighted = state.u_tilde @ state.pi_tilde.T
    denom = hyper.omega2 * state.xi_tilde * mass + state.psi_tilde
    mu = hyper.omega2 * state.xi_tilde * weighted / denom
    omega2 = hyper.omega2 * state.psi_tilde / denom
    if k is None:
        return mu, omega2
    return mu[:, k], float(omega2[k])


def update_xi_psi_closed(state: VariationalState, hyper: Hyperparams,
                         k: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal Gamma factor for the cluster precisions (uses the current centres)."""
    d = state.d
    mass = state.pi_tilde.sum(axis=1)
    diff = state.u_tilde[:, None, :] - state.mu_tilde[:, :, None]
    sq = np.einsum("akn,akn->kn", diff, diff)
    spread = sq + d * (state.sigma2_tilde[None, :] + state.omega2_tilde[:, None])
    xi = hyper.xi + 0.5 * d * mass
    psi = hyper.psi + 0.5 * np.sum(state.pi_tilde * spread, axis=1)
    if k is None:
        return xi, psi
    return float(xi[k]), float(psi[k])


def update_ab_closed(state: VariationalState, net: Optional[Network], hyper: Hyperparams,
                     j: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal Gamma factor for each node's overt precision."""
    d, n = state.d, state.n
    mask = off_diagonal_mask(n)
    dv = state.v_tilde - state.u_tilde[:, None, :]
    sqv = np.einsum("aij,aij->ij", dv, dv)
    spread = np.where(mask, sqv + d * (state.varphi2_tilde + state.sigma2_tilde[None, :]), 0.0)
    a = np.full(n, hyper.a + 0.5 * d * (n - 1))
    b = hyper.b + 0.5 * spread.sum(axis=0)
    if j is None:
        return a, b
    return float(a[j]), float(b[j])


# ---------------------------------------------------------------------------
# MLPCM gradients
# ---------------------------------------------------------------------------

def _mlpcm_pieces(y: np.ndarray, state: VariationalState):
    n = state.n
    mask = off_diagonal_mask(n)
    diff, sq, s, log_e = mlpcm_dyad_quantities(state)
    g = _safe_exp(log_e, mask) / s
    return mask, diff, sq, s, g


def grad_u_sigma_all(net: Network, state: VariationalState,
                     hyper: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
    """(d, N) covert-mean gradients and (N,) covert-variance gradients."""
    d, n = state.d, state.n
    y = net.weights.astype(np.float64)
    mask, diff, sq, s, g = _mlpcm_pieces(y, state)
    coef = np.where(mask, y - g, 0.0)
    e_gamma, _ = _expected_precisions(state.a_tilde, state.b_tilde)
    e_tau, _ = _expected_precisions(state.xi_tilde, state.psi_tilde)

    dv = np.where(mask[None], state.v_tilde - state.u_tilde[:, None, :], 0.0)
    pull_overt = e_gamma[None, :] * dv.sum(axis=1)
    w = state.pi_tilde * e_tau[:, None]
    pull_cluster = state.mu_tilde @ w - state.u_tilde * w.sum(axis=0)[None, :]
    grad_u = -2.0 * np.einsum("ij,aij->ai", coef, diff) + pull_overt + pull_cluster

    curv = np.where(mask, g * (2.0 * sq / s - d), 0.0).sum(axis=1)
    grad_s = 0.5 * d * (-2.0 * np.where(mask, y, 0.0).sum(axis=1) - (n - 1) * e_gamma
                        - w.sum(axis=0) + 1.0 / state.sigma2_tilde) - curv
    return grad_u, grad_s


def grad_u_sigma(state: VariationalState, net: Network, hyper: Hyperparams,
                 i: int) -> Tuple[np.ndarray, float]:
    grad_u, grad_s = grad_u_sigma_all(net, state, hyper)
    return grad_u[:, i], float(grad_s[i])


def grad_v_varphi_all(net: Network, state: VariationalState,
                      hyper: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
    """(d, N, N) overt-mean gradients and (N, N) overt-variance gradients (zero diagonals)."""
    d = state.d
    y = net.weights.astype(np.float64)
    mask, diff, sq, s, g = _mlpcm_pieces(y, state)
    e_gamma, _ = _expected_precisions(state.a_tilde, state.b_tilde)
    dv = state.v_tilde - state.u_tilde[:, None, :]
    grad_v = 2.0 * (y - g)[None] * diff - e_gamma[None, None, :] * dv
    grad_v = np.where(mask[None], grad_v, 0.0)
    phi = np.where(mask, state.varphi2_tilde, 1.0)
    grad_p = 0.5 * d * (-2.0 * y - e_gamma[None, :] + 1.0 / phi) - g * (2.0 * sq / s - d)
    return grad_v, np.where(mask, grad_p, 0.0)


def grad_v_varphi(state: VariationalState, net: Network, hyper: Hyperparams,
                  i: int, j: int) -> Tuple[np.ndarray, float]:
    grad_v, grad_p = grad_v_varphi_all(net, state, hyper)
    return grad_v[:, i, j], float(grad_p[i, j])


def _eta_rho_grad(y_total: float, rate_total: float, state: VariationalState,
                  hyper: Hyperparams) -> Tuple[float, float]:
    g_eta = y_total - (state.eta_tilde - hyper.eta) / hyper.rho2 - rate_total
    g_rho = -0.5 / hyper.rho2 + 0.5 / state.rho2_tilde - 0.5 * rate_total
    return float(g_eta), float(g_rho)


def _rate_total(state: VariationalState, dyads) -> float:
    _, _, _, log_e = dyads(state)
    return float(np.sum(_safe_exp(log_e, off_diagonal_mask(state.n))))


def grad_eta_rho(state: VariationalState, net: Network, hyper: Hyperparams) -> Tuple[float, float]:
    return _eta_rho_grad(float(net.weights.sum()), _rate_total(state, mlpcm_dyad_quantities),
                         state, hyper)


def grad_eta_rho_pois(state: VariationalState, net: Network,
                      hyper: Hyperparams) -> Tuple[float, float]:
    return _eta_rho_grad(float(net.weights.sum()), _rate_total(state, poislpcm_dyad_quantities),
                         state, hyper)


def grad_delta(state: VariationalState, hyper: Hyperparams) -> np.ndarray:
    """Euclidean gradient with respect to the Dirichlet concentration."""
    bracket = hyper.delta - state.delta_tilde + state.pi_tilde.sum(axis=1)
    return trigamma(state.delta_tilde) * bracket - trigamma(np.sum(state.delta_tilde)) * bracket.sum()


# ---------------------------------------------------------------------------
# PoisLPCM gradients
# ---------------------------------------------------------------------------

def grad_u_sigma_pois(state: VariationalState, net: Network, hyper: Hyperparams,
                      i: int) -> Tuple[np.ndarray, float]:
    """Gradient for node ``i``; depends on every other node's current covert factor."""
    d, n = state.d, state.n
    y = net.weights.astype(np.float64)
    u, s2 = state.u_tilde, state.sigma2_tilde
    others = np.arange(n) != i
    diff = u[:, i:i + 1] - u[:, others]
    sq = np.sum(diff * diff, axis=0)
    s = 1.0 + 2.0 * s2[i] + 2.0 * s2[others]
    with np.errstate(over="ignore"):
        g = np.exp(state.eta_tilde + 0.5 * state.rho2_tilde - sq / s - 0.5 * d * np.log(s)) / s
    ysum = y[i, others] + y[others, i]
    e_tau, _ = _expected_precisions(state.xi_tilde, state.psi_tilde)
    w = state.pi_tilde[:, i] * e_tau
    grad_u = -2.0 * diff @ (ysum - 2.0 * g) - (u[:, i] * w.sum() - state.mu_tilde @ w)
    grad_s = (0.5 * d * (-2.0 * ysum.sum() - w.sum() + 1.0 / s2[i])
              - 2.0 * np.sum(g * (2.0 * sq / s - d)))
    return grad_u, float(grad_s)


def grad_u_sigma_pois_all(net: Network, state: VariationalState,
                          hyper: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
    """Joint gradient for all nodes at one snapshot (used in tests and diagnostics)."""
    d, n = state.d, state.n
    y = net.weights.astype(np.float64)
    mask = off_diagonal_mask(n)
    diff, sq, s, log_e = poislpcm_dyad_quantities(state)
    g = _safe_exp(log_e, mask) / s
    ysum = np.where(mask, y + y.T, 0.0)
    e_tau, _ = _expected_precisions(state.xi_tilde, state.psi_tilde)
    w = state.pi_tilde * e_tau[:, None]
    grad_u = (-2.0 * np.einsum("ij,aij->ai", ysum - 2.0 * g, diff)
              + state.mu_tilde @ w - state.u_tilde * w.sum(axis=0)[None, :])
    curv = np.where(mask, g * (2.0 * sq / s - d), 0.0).sum(axis=1)
    grad_s = 0.5 * d * (-2.0 * ysum.sum(axis=1) - w.sum(axis=0) + 1.0 / state.sigma2_tilde) - 2.0 * curv
    return grad_u, grad_s


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def _finite_or_raise(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite gradient or step")


def natural_step_gaussian(mean, var, grad_mean, grad_var, eps, d: int):
    """Natural-gradient step for an isotropic Gaussian factor (mean, scalar variance).

    ``var`` may be an array; ``eps`` broadcasts against it.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        new_mean = mean + eps * var * grad_mean
        new_var = var * np.exp(eps * (2.0 / d) * var * grad_var)
    return new_mean, new_var


def step_u_sigma(state: VariationalState, net: Network, hyper: Hyperparams, i: int,
                 eps: float) -> Tuple[np.ndarray, float]:
    if not eps > 0:
        raise ValueError("eps must be positive")
    gu, gs = grad_u_sigma(state, net, hyper, i)
    _finite_or_raise(gu, gs)
    mean, var = natural_step_gaussian(state.u_tilde[:, i], state.sigma2_tilde[i], gu, gs, eps, state.d)
    _finite_or_raise(mean, var)
    return mean, float(var)


def step_u_sigma_pois(state: VariationalState, net: Network, hyper: Hyperparams, i: int,
                      eps: float) -> Tuple[np.ndarray, float]:
    if not eps > 0:
        raise ValueError("eps must be positive")
    gu, gs = grad_u_sigma_pois(state, net, hyper, i)
    _finite_or_raise(gu, gs)
    mean, var = natural_step_gaussian(state.u_tilde[:, i], state.sigma2_tilde[i], gu, gs, eps, state.d)
    _finite_or_raise(mean, var)
    return mean, float(var)


def step_v_varphi(state: VariationalState, net: Network, hyper: Hyperparams, i: int, j: int,
                  eps: float) -> Tuple[np.ndarray, float]:
    if not eps > 0:
        raise ValueError("eps must be positive")
    gv, gp = grad_v_varphi(state, net, hyper, i, j)
    _finite_or_raise(gv, gp)
    mean, var = natural_step_gaussian(state.v_tilde[:, i, j], state.varphi2_tilde[i, j], gv, gp,
                                      eps, state.d)
    _finite_or_raise(mean, var)
    return mean, float(var)


def eta_rho_step_from_grad(state: VariationalState, g_eta: float, g_rho: float,
                           eps: float) -> Tuple[float, float]:
    with np.errstate(over="ignore", invalid="ignore"):
        eta = state.eta_tilde + eps * state.rho2_tilde * g_eta
        rho2 = state.rho2_tilde * np.exp(2.0 * eps * state.rho2_tilde * g_rho)
    return float(eta), float(rho2)


def step_eta_rho(state: VariationalState, net: Network, hyper: Hyperparams,
                 eps: float) -> Tuple[float, float]:
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = grad_eta_rho(state, net, hyper)
    _finite_or_raise(np.array(g))
    out = eta_rho_step_from_grad(state, *g, eps)
    _finite_or_raise(np.array(out))
    return out


def step_eta_rho_pois(state: VariationalState, net: Network, hyper: Hyperparams,
                      eps: float) -> Tuple[float, float]:
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = grad_eta_rho_pois(state, net, hyper)
    _finite_or_raise(np.array(g))
    out = eta_rho_step_from_grad(state, *g, eps)
    _finite_or_raise(np.array(out))
    return out


def delta_step_from_grad(state: VariationalState, grad: np.ndarray, eps: float) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return state.delta_tilde * np.exp(eps * state.delta_tilde * grad)


def step_delta(state: VariationalState, hyper: Hyperparams, eps: float) -> np.ndarray:
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = grad_delta(state, hyper)
    _finite_or_raise(g)
    out = delta_step_from_grad(state, g, eps)
    _finite_or_raise(out)
    return out
