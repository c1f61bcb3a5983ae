"""Exact evidence lower bound for the MLPCM and the PoisLPCM.

Every normalising constant is kept (2*pi factors, log y!, Gamma and
Dirichlet normalisers), so values are absolute and can be checked against a
Monte Carlo estimate of E_q[log p(Y, theta)] - E_q[log q(theta)].

Besides the full objective, this module exposes "local" pieces: for each
update block, the sum of every summand that touches the block's parameters.
Differences of local pieces equal differences of the full ELBO whenever two
states differ only inside that block, which is what the optimiser needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .moments import LOG_2PI, digamma, e_log_dirichlet, log_gamma
from .types import (
    DimensionError,
    Hyperparams,
    Network,
    NumericalError,
    ValidationError,
    VariationalState,
    off_diagonal_mask,
)

__all__ = [
    "ElboBreakdown",
    "elbo_mlpcm",
    "elbo_poislpcm",
    "elbo_delta_for_block",
    "mlpcm_dyad_quantities",
    "poislpcm_dyad_quantities",
    "node_local_mlpcm",
    "dyad_local_mlpcm",
    "node_local_poislpcm",
    "eta_rho_local",
    "delta_local",
]


@dataclass(frozen=True)
class ElboBreakdown:
    total: float
    likelihood_term: float
    overt_term: float
    covert_mixture_term: float
    allocation_term: float
    prior_terms: float
    entropy_terms: float

    def parts(self) -> Tuple[float, ...]:
        return (self.likelihood_term, self.overt_term, self.covert_mixture_term,
                self.allocation_term, self.prior_terms, self.entropy_terms)


def _check(net: Network, state: VariationalState, hyper: Hyperparams) -> None:
    state.check_dimensions(net.n_nodes, hyper.k, hyper.d)


def mlpcm_dyad_quantities(state: VariationalState):
    """Shared dyad arrays for the MLPCM.

    Returns ``(diff, sq, s, log_e)`` where ``diff[:, i, j] = u_i - v_{j<-i}``,
    ``sq`` its squared norm, ``s = 1 + 2 sigma2_i + 2 varphi2_ij`` and ``log_e``
    the log of E_q exp(beta - ||u_i - v_{j<-i}||^2). Diagonals are junk.
    """
    d = state.d
    diff = state.u_tilde[:, :, None] - state.v_tilde
    sq = np.einsum("aij,aij->ij", diff, diff)
    s = 1.0 + 2.0 * state.sigma2_tilde[:, None] + 2.0 * state.varphi2_tilde
    log_e = state.eta_tilde + 0.5 * state.rho2_tilde - sq / s - 0.5 * d * np.log(s)
    return diff, sq, s, log_e


def poislpcm_dyad_quantities(state: VariationalState):
    """Same as :func:`mlpcm_dyad_quantities` with v_{j<-i} replaced by u_j."""
    d = state.d
    u = state.u_tilde
    diff = u[:, :, None] - u[:, None, :]
    sq = np.einsum("aij,aij->ij", diff, diff)
    s = 1.0 + 2.0 * state.sigma2_tilde[:, None] + 2.0 * state.sigma2_tilde[None, :]
    log_e = state.eta_tilde + 0.5 * state.rho2_tilde - sq / s - 0.5 * d * np.log(s)
    return diff, sq, s, log_e


def _safe_exp(log_e: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(log_e)
    with np.errstate(over="ignore"):
        out[mask] = np.exp(log_e[mask])
    return out


def _expected_precisions(shape: np.ndarray, rate: np.ndarray):
    return shape / rate, digamma(shape) - np.log(rate)


def _covert_parts(state: VariationalState) -> np.ndarray:
    """(K, N) array of E log MVN(u_i | mu_k, I / tau_k) without the 2*pi constant."""
    d = state.d
    e_tau, e_log_tau = _expected_precisions(state.xi_tilde, state.psi_tilde)
    diff = state.u_tilde[:, None, :] - state.mu_tilde[:, :, None]
    sq = np.einsum("akn,akn->kn", diff, diff)
    spread = sq + d * (state.sigma2_tilde[None, :] + state.omega2_tilde[:, None])
    return 0.5 * d * e_log_tau[:, None] - 0.5 * e_tau[:, None] * spread


def _gamma_prior(shape_p: float, rate_p: float, shape: np.ndarray, rate: np.ndarray) -> float:
    e_x, e_log_x = _expected_precisions(shape, rate)
    return float(np.sum(shape_p * np.log(rate_p) - log_gamma(shape_p)
                        + (shape_p - 1.0) * e_log_x - rate_p * e_x))


def _gamma_entropy(shape: np.ndarray, rate: np.ndarray) -> float:
    return float(np.sum(log_gamma(shape) - (shape - 1.0) * digamma(shape) - np.log(rate) + shape))


def _dirichlet_prior(delta: np.ndarray, delta_t: np.ndarray) -> float:
    e_log_pi = e_log_dirichlet(delta_t)
    return float(log_gamma(np.sum(delta)) - np.sum(log_gamma(delta))
                 + np.sum((delta - 1.0) * e_log_pi))


def _dirichlet_entropy(delta_t: np.ndarray) -> float:
    e_log_pi = e_log_dirichlet(delta_t)
    return float(-log_gamma(np.sum(delta_t)) + np.sum(log_gamma(delta_t))
                 - np.sum((delta_t - 1.0) * e_log_pi))


def _categorical_entropy(pi_t: np.ndarray) -> float:
    pos = pi_t > 0
    return float(-np.sum(pi_t[pos] * np.log(pi_t[pos])))


def _shared_terms(state: VariationalState, hyper: Hyperparams):
    """Covert, allocation, prior and entropy pieces common to both models."""
    d, n = state.d, state.n
    covert = float(np.sum(state.pi_tilde * _covert_parts(state))) - 0.5 * n * d * LOG_2PI
    allocation = float(np.sum(state.pi_tilde.sum(axis=1) * e_log_dirichlet(state.delta_tilde)))

    beta_prior = (-0.5 * LOG_2PI - 0.5 * np.log(hyper.rho2)
                  - ((state.eta_tilde - hyper.eta) ** 2 + state.rho2_tilde) / (2.0 * hyper.rho2))
    mu_sq = np.sum(state.mu_tilde ** 2, axis=0)
    mu_prior = float(np.sum(-0.5 * d * LOG_2PI - 0.5 * d * np.log(hyper.omega2)
                            - (mu_sq + d * state.omega2_tilde) / (2.0 * hyper.omega2)))
    tau_prior = _gamma_prior(hyper.xi, hyper.psi, state.xi_tilde, state.psi_tilde)
    pi_prior = _dirichlet_prior(hyper.delta, state.delta_tilde)
    priors = beta_prior + mu_prior + tau_prior + pi_prior

    ent_u = float(np.sum(0.5 * d * (LOG_2PI + 1.0) + 0.5 * d * np.log(state.sigma2_tilde)))
    ent_z = _categorical_entropy(state.pi_tilde)
    ent_beta = 0.5 * (LOG_2PI + 1.0) + 0.5 * np.log(state.rho2_tilde)
    ent_mu = float(np.sum(0.5 * d * (LOG_2PI + 1.0) + 0.5 * d * np.log(state.omega2_tilde)))
    ent_tau = _gamma_entropy(state.xi_tilde, state.psi_tilde)
    ent_pi = _dirichlet_entropy(state.delta_tilde)
    entropies = ent_u + ent_z + ent_beta + ent_mu + ent_tau + ent_pi
    return covert, allocation, float(priors), float(entropies)


def _finish(parts) -> ElboBreakdown:
    total = float(sum(parts))
    if not np.isfinite(total):
        raise NumericalError("ELBO is not finite; some expectation overflowed")
    return ElboBreakdown(total, *[float(p) for p in parts])


def _likelihood(y: np.ndarray, state: VariationalState, sq, s, log_e, extra_var) -> float:
    mask = off_diagonal_mask(state.n)
    e = _safe_exp(log_e, mask)
    d = state.d
    lin = y * (state.eta_tilde - sq - d * extra_var) - e - log_gamma(y + 1.0)
    return float(np.sum(lin[mask]))


def elbo_mlpcm(net: Network, state: VariationalState, hyper: Hyperparams) -> ElboBreakdown:
    """Full MLPCM ELBO with all constants."""
    _check(net, state, hyper)
    d, n = state.d, state.n
    y = net.weights.astype(np.float64)
    mask = off_diagonal_mask(n)
    _, sq, s, log_e = mlpcm_dyad_quantities(state)
    lik = _likelihood(y, state, sq, s, log_e, state.sigma2_tilde[:, None] + state.varphi2_tilde)

    e_gamma, e_log_gamma = _expected_precisions(state.a_tilde, state.b_tilde)
    dv = state.v_tilde - state.u_tilde[:, None, :]
    sqv = np.einsum("aij,aij->ij", dv, dv)
    spread = sqv + d * (state.varphi2_tilde + state.sigma2_tilde[None, :])
    overt_ij = -0.5 * d * LOG_2PI + 0.5 * d * e_log_gamma[None, :] - 0.5 * e_gamma[None, :] * spread
    overt = float(np.sum(overt_ij[mask]))

    covert, allocation, priors, entropies = _shared_terms(state, hyper)
    priors += _gamma_prior(hyper.a, hyper.b, state.a_tilde, state.b_tilde)
    entropies += _gamma_entropy(state.a_tilde, state.b_tilde)
    ent_v = 0.5 * d * (LOG_2PI + 1.0) + 0.5 * d * np.log(np.where(mask, state.varphi2_tilde, 1.0))
    entropies += float(np.sum(ent_v[mask]))
    return _finish((lik, overt, covert, allocation, priors, entropies))


def elbo_poislpcm(net: Network, state: VariationalState, hyper: Hyperparams) -> ElboBreakdown:
    """Full PoisLPCM ELBO; overt positions and their precisions are ignored."""
    _check(net, state, hyper)
    y = net.weights.astype(np.float64)
    _, sq, s, log_e = poislpcm_dyad_quantities(state)
    extra = state.sigma2_tilde[:, None] + state.sigma2_tilde[None, :]
    lik = _likelihood(y, state, sq, s, log_e, extra)
    covert, allocation, priors, entropies = _shared_terms(state, hyper)
    return _finish((lik, 0.0, covert, allocation, priors, entropies))


# ---------------------------------------------------------------------------
# Local pieces used by the optimiser.
# ---------------------------------------------------------------------------

def node_local_mlpcm(y: np.ndarray, state: VariationalState) -> np.ndarray:
    """Length-N vector; entry i collects every summand that involves (u_i, sigma2_i).

    Nodes do not interact in the MLPCM, so entries can be compared across two
    states that differ in many nodes at once.
    """
    d, n = state.d, state.n
    mask = off_diagonal_mask(n)
    _, sq, s, log_e = mlpcm_dyad_quantities(state)
    e = _safe_exp(log_e, mask)
    lik = y * (state.eta_tilde - sq - d * (state.sigma2_tilde[:, None] + state.varphi2_tilde)) - e
    lik = np.where(mask, lik, 0.0).sum(axis=1)

    # overt summands where node i is the perceived target: v_{i<-j} around u_i
    e_gamma, _ = _expected_precisions(state.a_tilde, state.b_tilde)
    dv = state.v_tilde - state.u_tilde[:, None, :]
    sqv = np.einsum("aij,aij->ij", dv, dv)
    target = np.where(mask, sqv + d * state.sigma2_tilde[None, :], 0.0).sum(axis=0)
    overt = -0.5 * e_gamma * target

    covert = np.sum(state.pi_tilde * _covert_parts(state), axis=0)
    return lik + overt + covert + 0.5 * d * np.log(state.sigma2_tilde)


def dyad_local_mlpcm(y: np.ndarray, state: VariationalState) -> np.ndarray:
    """(N, N) array; entry (i, j) collects every summand involving (v_{j<-i}, varphi2_ij)."""
    d, n = state.d, state.n
    mask = off_diagonal_mask(n)
    _, sq, s, log_e = mlpcm_dyad_quantities(state)
    e = _safe_exp(log_e, mask)
    phi = np.where(mask, state.varphi2_tilde, 1.0)
    lik = y * (state.eta_tilde - sq - d * (state.sigma2_tilde[:, None] + phi)) - e
    e_gamma, _ = _expected_precisions(state.a_tilde, state.b_tilde)
    dv = state.v_tilde - state.u_tilde[:, None, :]
    sqv = np.einsum("aij,aij->ij", dv, dv)
    overt = -0.5 * e_gamma[None, :] * (sqv + d * phi)
    out = lik + overt + 0.5 * d * np.log(phi)
    return np.where(mask, out, 0.0)


def node_local_poislpcm(y: np.ndarray, state: VariationalState, i: int) -> float:
    """Every PoisLPCM summand involving (u_i, sigma2_i): both dyad directions plus its own terms."""
    d, n = state.d, state.n
    u, s2 = state.u_tilde, state.sigma2_tilde
    others = np.arange(n) != i
    diff = u[:, i:i + 1] - u[:, others]
    sq = np.sum(diff * diff, axis=0)
    s = 1.0 + 2.0 * s2[i] + 2.0 * s2[others]
    with np.errstate(over="ignore"):
        e = np.exp(state.eta_tilde + 0.5 * state.rho2_tilde - sq / s - 0.5 * d * np.log(s))
    ysum = y[i, others] + y[others, i]
    lik = np.sum(ysum * (state.eta_tilde - sq - d * (s2[i] + s2[others])) - 2.0 * e)
    parts = _covert_parts_single(state, i)
    return float(lik + np.sum(state.pi_tilde[:, i] * parts) + 0.5 * d * np.log(s2[i]))


def _covert_parts_single(state: VariationalState, i: int) -> np.ndarray:
    d = state.d
    e_tau, e_log_tau = _expected_precisions(state.xi_tilde, state.psi_tilde)
    diff = state.u_tilde[:, i:i + 1] - state.mu_tilde
    spread = np.sum(diff * diff, axis=0) + d * (state.sigma2_tilde[i] + state.omega2_tilde)
    return 0.5 * d * e_log_tau - 0.5 * e_tau * spread


def eta_rho_local(y_total: float, rate_total: float, state: VariationalState,
                  hyper: Hyperparams) -> float:
    """Summands involving (eta, rho2); ``rate_total`` is the sum over dyads of E_q[rate]."""
    return float(
        y_total * state.eta_tilde - rate_total
        - ((state.eta_tilde - hyper.eta) ** 2 + state.rho2_tilde) / (2.0 * hyper.rho2)
        + 0.5 * np.log(state.rho2_tilde)
    )


def delta_local(state: VariationalState, hyper: Hyperparams) -> float:
    """Summands involving the Dirichlet concentration."""
    counts = state.pi_tilde.sum(axis=1)
    return float(np.sum(counts * e_log_dirichlet(state.delta_tilde))
                 + _dirichlet_prior(hyper.delta, state.delta_tilde)
                 + _dirichlet_entropy(state.delta_tilde))


def rate_total(state: VariationalState, model: str = "mlpcm") -> float:
    """Sum over ordered dyads of E_q[exp(beta - distance^2)]."""
    quantities = mlpcm_dyad_quantities if model == "mlpcm" else poislpcm_dyad_quantities
    _, _, _, log_e = quantities(state)
    with np.errstate(over="ignore"):
        return float(np.sum(_safe_exp(log_e, off_diagonal_mask(state.n))))


# ---------------------------------------------------------------------------
# Block differences
# ---------------------------------------------------------------------------

_FIELDS = ("u_tilde", "sigma2_tilde", "v_tilde", "varphi2_tilde", "pi_tilde", "eta_tilde",
           "rho2_tilde", "mu_tilde", "omega2_tilde", "xi_tilde", "psi_tilde", "a_tilde",
           "b_tilde", "delta_tilde")


def _changed_outside(old: VariationalState, new: VariationalState, allowed: dict) -> list:
    bad = []
    for name in _FIELDS:
        a = np.asarray(getattr(old, name))
        b = np.asarray(getattr(new, name))
        if a.shape != b.shape:
            bad.append(name)
            continue
        differs = a != b
        sel = allowed.get(name)
        if sel is None:
            if np.any(differs):
                bad.append(name)
        elif sel is not True:
            keep = np.ones(a.shape, dtype=bool)
            keep[sel] = False
            if np.any(differs & keep):
                bad.append(name)
    return bad


def elbo_delta_for_block(net: Network, state_old: VariationalState, state_new: VariationalState,
                         block: tuple, hyper: Hyperparams, model: str = "mlpcm") -> float:
    """F(new) - F(old) from the summands touching one block.

    ``block`` is one of ``("u_sigma", i)``, ``("v_varphi", i, j)``,
    ``("eta_rho",)`` or ``("delta",)`` with 0-based indices.
    """
    _check(net, state_old, hyper)
    _check(net, state_new, hyper)
    y = net.weights.astype(np.float64)
    kind = block[0]
    if kind == "u_sigma":
        i = int(block[1])
        allowed = {"u_tilde": (slice(None), i), "sigma2_tilde": i}
    elif kind == "v_varphi":
        if model != "mlpcm":
            raise ValidationError("the PoisLPCM has no overt positions")
        i, j = int(block[1]), int(block[2])
        if i == j:
            raise ValidationError("diagonal dyads carry no overt position")
        allowed = {"v_tilde": (slice(None), i, j), "varphi2_tilde": (i, j)}
    elif kind == "eta_rho":
        allowed = {"eta_tilde": True, "rho2_tilde": True}
    elif kind == "delta":
        allowed = {"delta_tilde": True}
    else:
        raise ValidationError(f"unknown block {block!r}")
    bad = _changed_outside(state_old, state_new, allowed)
    if bad:
        raise ValidationError(f"states differ outside block {block!r}: {bad}")

    if kind == "u_sigma":
        if model == "mlpcm":
            return float(node_local_mlpcm(y, state_new)[i] - node_local_mlpcm(y, state_old)[i])
        return node_local_poislpcm(y, state_new, i) - node_local_poislpcm(y, state_old, i)
    if kind == "v_varphi":
        return float(dyad_local_mlpcm(y, state_new)[i, j] - dyad_local_mlpcm(y, state_old)[i, j])
    if kind == "eta_rho":
        total = float(y.sum())
        return (eta_rho_local(total, rate_total(state_new, model), state_new, hyper)
                - eta_rho_local(total, rate_total(state_old, model), state_old, hyper))
    return delta_local(state_new, hyper) - delta_local(state_old, hyper)


def check_model(model: str) -> str:
    if model not in ("mlpcm", "poislpcm"):
        raise DimensionError(f"unknown model {model!r}")
    return model
