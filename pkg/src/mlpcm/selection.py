"""Partially integrated complete likelihood (PICL) and the choice of K."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from .fit import FitConfig, FitResult, fit_model
from .initialization import initial_state
from .moments import LOG_2PI
from .types import Hyperparams, Network, PointEstimates, ValidationError, off_diagonal_mask

__all__ = [
    "PiclResult",
    "ClusterStats",
    "cluster_stats",
    "h_value",
    "h_grad",
    "maximize_h",
    "picl_likelihood_term",
    "picl_overt_term",
    "picl_covert_term",
    "picl_allocation_term",
    "beta_hat",
    "picl_mlpcm",
    "picl_poislpcm",
    "picl",
    "select_k",
]


@dataclass(frozen=True)
class PiclResult:
    value: float
    term_likelihood: float
    term_overt: float
    term_covert: float
    term_allocation: float
    tau_star: np.ndarray
    k: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "value": self.value,
            "term_likelihood": self.term_likelihood,
            "term_overt": self.term_overt,
            "term_covert": self.term_covert,
            "term_allocation": self.term_allocation,
            "tau_star": [float(t) for t in self.tau_star],
        }


@dataclass(frozen=True)
class ClusterStats:
    """Per-cluster sufficient statistics of the covert point estimates."""

    counts: np.ndarray  # n_g
    sum_sqnorm_of_sum: np.ndarray  # ||sum_i u_i||^2
    sum_of_sqnorms: np.ndarray  # sum_i ||u_i||^2
    d: int
    omega2: float


def cluster_stats(u_hat: np.ndarray, z_hat: np.ndarray, k: int, omega2: float) -> ClusterStats:
    u_hat = np.asarray(u_hat, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.int64)
    d = u_hat.shape[0]
    counts = np.bincount(z_hat, minlength=k).astype(np.float64)
    sums = np.zeros((d, k))
    np.add.at(sums.T, z_hat, u_hat.T)
    sq = np.bincount(z_hat, weights=np.sum(u_hat ** 2, axis=0), minlength=k)
    return ClusterStats(counts, np.sum(sums ** 2, axis=0), sq, d, float(omega2))


def _h_parts(tau: np.ndarray, st: ClusterStats) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    n, w, d = st.counts, st.omega2, st.d
    denom = tau * n * w + 1.0
    out = (0.5 * d * n * np.log(tau) - 0.5 * d * np.log(denom)
           + 0.5 * tau ** 2 * w / denom * st.sum_sqnorm_of_sum
           - 0.5 * tau * st.sum_of_sqnorms)
    return np.where(n > 0, out, 0.0)


def h_value(tau: np.ndarray, st: ClusterStats) -> float:
    """Profiled covert objective summed over clusters; empty clusters add 0."""
    return float(np.sum(_h_parts(tau, st)))


def h_grad(tau: np.ndarray, st: ClusterStats) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    n, w, d = st.counts, st.omega2, st.d
    denom = tau * n * w + 1.0
    g = (0.5 * d * n * (1.0 / tau - w / denom)
         + tau * w * (tau * n * w + 2.0) / (2.0 * denom ** 2) * st.sum_sqnorm_of_sum
         - 0.5 * st.sum_of_sqnorms)
    return np.where(n > 0, g, 0.0)


def maximize_h(st: ClusterStats, tau_init: np.ndarray, eps: float = 0.1, grad_tol: float = 1e-8,
               max_steps: int = 10_000, max_halvings: int = 50) -> np.ndarray:
    """Multiplicative gradient ascent on log-tau with per-cluster step halving.

    The objective separates over clusters, so each coordinate keeps its own
    step size. Clusters with no members keep their starting value.
    """
    tau = np.array(tau_init, dtype=np.float64)
    steps = np.full(tau.shape, float(eps))
    active = st.counts > 0
    current = _h_parts(tau, st)
    for _ in range(max_steps):
        grad = h_grad(tau, st)
        if np.max(np.abs(grad[active]), initial=0.0) < grad_tol:
            break
        pending = active & (np.abs(grad) >= grad_tol)
        failures = np.zeros(tau.shape, dtype=int)
        moved = False
        while pending.any():
            with np.errstate(over="ignore", invalid="ignore"):
                trial = np.where(pending, tau * np.exp(steps * tau * grad), tau)
                new = _h_parts(trial, st)
            ok = pending & np.isfinite(trial) & (trial > 0) & np.isfinite(new) & (new >= current)
            tau = np.where(ok, trial, tau)
            current = np.where(ok, new, current)
            moved |= bool(ok.any())
            failed = pending & ~ok
            steps[failed] *= 0.5
            failures[failed] += 1
            pending = failed & (failures < max_halvings)
        if not moved:
            break
    return tau


def _observed(net: Network) -> Tuple[np.ndarray, np.ndarray]:
    mask = off_diagonal_mask(net.n_nodes)
    return net.weights.astype(np.float64), mask


def _xlogx(x: float) -> float:
    return 0.0 if x == 0 else x * np.log(x)


def beta_hat(net: Network, sq: np.ndarray) -> float:
    """Intercept maximizing the Poisson likelihood for fixed squared distances."""
    y, mask = _observed(net)
    total = float(y[mask].sum())
    if total == 0:
        return -np.inf
    return float(np.log(total) - np.log(np.sum(np.exp(-sq[mask]))))


def picl_likelihood_term(net: Network, sq: np.ndarray) -> float:
    """Poisson log-likelihood at the profiled intercept with its BIC penalty."""
    y, mask = _observed(net)
    n = net.n_nodes
    total = float(y[mask].sum())
    log_fact = float(np.sum(gammaln(y[mask] + 1.0)))
    value = _xlogx(total) - total - log_fact - 0.5 * np.log(n * (n - 1.0))
    if total > 0:
        value -= total * np.log(np.sum(np.exp(-sq[mask])))
        value -= float(np.sum(y[mask] * sq[mask]))
    return float(value)


def picl_overt_term(v_hat: np.ndarray, u_hat: np.ndarray, a: float, b: float) -> float:
    """Log density of overt positions with their precisions integrated out."""
    d, n = u_hat.shape
    mask = off_diagonal_mask(n)
    dev = v_hat - u_hat[:, None, :]
    ss = 0.5 * np.sum(np.where(mask[None], dev ** 2, 0.0), axis=(0, 1))  # per receiver j
    a_post = a + 0.5 * d * (n - 1)
    per_node = (-0.5 * d * (n - 1) * LOG_2PI + a * np.log(b) - gammaln(a) + gammaln(a_post)
                - a_post * np.log(b + ss))
    return float(np.sum(per_node))


def picl_covert_term(u_hat: np.ndarray, z_hat: np.ndarray, hyper: Hyperparams,
                     tau_init: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    d, n = u_hat.shape
    st = cluster_stats(u_hat, z_hat, hyper.k, hyper.omega2)
    if tau_init is None:
        tau_init = np.full(hyper.k, hyper.xi / hyper.psi)
    tau = maximize_h(st, tau_init)
    value = -0.5 * d * n * LOG_2PI - 0.5 * hyper.k * np.log(n) + h_value(tau, st)
    return float(value), tau


def picl_allocation_term(z_hat: np.ndarray, k: int, delta: float) -> float:
    """Log probability of the labels with the mixing weights integrated out."""
    z_hat = np.asarray(z_hat, dtype=np.int64)
    n = z_hat.size
    counts = np.bincount(z_hat, minlength=k).astype(np.float64)
    return float(np.sum(gammaln(counts + delta)) - gammaln(n + k * delta)
                 + gammaln(k * delta) - k * gammaln(delta))


def _symmetric_delta(hyper: Hyperparams) -> float:
    if not hyper.delta_is_symmetric():
        raise ValidationError("PICL needs a symmetric Dirichlet prior")
    return float(hyper.delta[0])


def _check_estimates(net: Network, est: PointEstimates, hyper: Hyperparams) -> None:
    u = np.asarray(est.u_hat)
    if u.shape != (hyper.d, net.n_nodes):
        raise ValidationError("point estimates do not match the network and hyperparameters")
    z = np.asarray(est.z_hat)
    if z.shape != (net.n_nodes,) or np.any(z < 0) or np.any(z >= hyper.k):
        raise ValidationError("z_hat must hold N labels in 0..K-1")


def _assemble(lik: float, overt: float, covert: float, alloc: float, tau, k: int) -> PiclResult:
    return PiclResult(lik + overt + covert + alloc, lik, overt, covert, alloc,
                      np.asarray(tau, dtype=np.float64), k)


def picl_mlpcm(net: Network, est: PointEstimates, hyper: Hyperparams) -> PiclResult:
    delta = _symmetric_delta(hyper)
    _check_estimates(net, est, hyper)
    u, v = np.asarray(est.u_hat), np.asarray(est.v_hat)
    diff = u[:, :, None] - v
    sq = np.sum(diff ** 2, axis=0)
    lik = picl_likelihood_term(net, sq)
    overt = picl_overt_term(v, u, hyper.a, hyper.b)
    covert, tau = picl_covert_term(u, est.z_hat, hyper)
    alloc = picl_allocation_term(est.z_hat, hyper.k, delta)
    return _assemble(lik, overt, covert, alloc, tau, hyper.k)


def picl_poislpcm(net: Network, est: PointEstimates, hyper: Hyperparams) -> PiclResult:
    delta = _symmetric_delta(hyper)
    _check_estimates(net, est, hyper)
    u = np.asarray(est.u_hat)
    diff = u[:, :, None] - u[:, None, :]
    sq = np.sum(diff ** 2, axis=0)
    lik = picl_likelihood_term(net, sq)
    covert, tau = picl_covert_term(u, est.z_hat, hyper)
    alloc = picl_allocation_term(est.z_hat, hyper.k, delta)
    return _assemble(lik, 0.0, covert, alloc, tau, hyper.k)


def picl(model: str, net: Network, est: PointEstimates, hyper: Hyperparams) -> PiclResult:
    if model == "mlpcm":
        return picl_mlpcm(net, est, hyper)
    if model == "poislpcm":
        return picl_poislpcm(net, est, hyper)
    raise ValidationError(f"unknown model {model!r}")


def select_k(net: Network, hyper_template: Hyperparams, k_candidates: Sequence[int],
             fit_config: Optional[FitConfig] = None, model: str = "mlpcm", seed: int = 0,
             on_fit: Optional[Callable[[int, PiclResult, FitResult], None]] = None,
             ) -> Tuple[int, List[Tuple[int, PiclResult, FitResult]]]:
    """Fit every candidate K from a fresh start and keep the highest PICL.

    Ties go to the smallest K. ``on_fit`` is called after each candidate.
    """
    ks = [int(k) for k in k_candidates]
    if not ks:
        raise ValidationError("k_candidates must not be empty")
    if any(k < 1 for k in ks):
        raise ValidationError("every K must be positive")
    _symmetric_delta(hyper_template)
    config = fit_config or FitConfig()
    results = []
    for k in ks:
        hyper = hyper_template.with_k(k)
        init = initial_state(net, hyper, seed=seed)
        fit = fit_model(model, net, hyper, init, config)
        score = picl(model, net, fit.estimates, hyper)
        results.append((k, score, fit))
        if on_fit is not None:
            on_fit(k, score, fit)
    best = max(results, key=lambda r: (r[1].value, -r[0]))
    return best[0], results
