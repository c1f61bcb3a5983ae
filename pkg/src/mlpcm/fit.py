"""Coordinate-ascent drivers with per-block learning-rate halving.

Each gradient block is tried at its current learning rate; if the ELBO would
drop, the rate is halved (persistently) and the block retried from its
pre-step value. After ``max_halvings_per_step`` failed attempts the block is
left unchanged for that sweep, which keeps the trace monotone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import elbo as _elbo
from . import updates as _up
from .types import (
    Hyperparams,
    Network,
    PointEstimates,
    ValidationError,
    VariationalState,
    off_diagonal_mask,
    point_estimates,
)

__all__ = ["FitConfig", "FitResult", "fit_mlpcm", "fit_poislpcm", "fit_model"]

ProgressHook = Callable[[int, float], None]


@dataclass
class FitConfig:
    tol: float = 0.01
    max_iterations: int = 5000
    max_halvings_per_step: int = 50
    initial_step_size: float = 1.0
    rng_seed: int = 0
    parallel_dyads: bool = False
    initial_step_sizes: Optional[_up.StepSizes] = None

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if self.max_halvings_per_step < 0:
            raise ValidationError("max_halvings_per_step must be non-negative")
        if not self.initial_step_size > 0:
            raise ValidationError("initial_step_size must be positive")

    def step_sizes(self, n: int) -> _up.StepSizes:
        if self.initial_step_sizes is not None:
            s = self.initial_step_sizes
            return _up.StepSizes(np.array(s.eps_u, dtype=float), np.array(s.eps_v, dtype=float),
                                 float(s.eps_beta), float(s.eps_pi))
        return _up.StepSizes.constant(n, self.initial_step_size)

    def to_dict(self) -> dict:
        return {
            "tol": self.tol, "max_iterations": self.max_iterations,
            "max_halvings_per_step": self.max_halvings_per_step,
            "initial_step_size": self.initial_step_size, "rng_seed": self.rng_seed,
            "parallel_dyads": self.parallel_dyads,
        }


@dataclass
class FitResult:
    state: VariationalState
    trace: List[float]
    iterations: int
    converged: bool
    estimates: PointEstimates
    model: str = "mlpcm"
    wall_time: float = field(default=0.0, compare=False)
    step_sizes: Optional[_up.StepSizes] = field(default=None, compare=False)


def _accept(delta: np.ndarray, *values: np.ndarray) -> np.ndarray:
    ok = np.isfinite(delta) & (delta >= 0.0)
    for v in values:
        finite = np.isfinite(v)
        ok &= np.all(finite, axis=0) if finite.ndim > ok.ndim else finite
    return ok


def _sweep_nodes_mlpcm(y, net, state, hyper, eps, cap) -> None:
    """All node blocks at once; nodes are independent in the MLPCM."""
    n = state.n
    base = _elbo.node_local_mlpcm(y, state)
    grad_u, grad_s = _up.grad_u_sigma_all(net, state, hyper)
    finite = np.all(np.isfinite(grad_u), axis=0) & np.isfinite(grad_s)
    pending = finite.copy()
    failures = np.zeros(n, dtype=int)
    u0, s0 = state.u_tilde.copy(), state.sigma2_tilde.copy()
    trial = state.copy()
    while True:
        pending &= failures < cap
        if not pending.any():
            break
        new_u, new_s = _up.natural_step_gaussian(u0, s0, grad_u, grad_s, eps, state.d)
        trial.u_tilde = np.where(pending[None, :], new_u, state.u_tilde)
        trial.sigma2_tilde = np.where(pending, new_s, state.sigma2_tilde)
        with np.errstate(all="ignore"):
            delta = _elbo.node_local_mlpcm(y, trial) - base
        ok = pending & _accept(delta, new_u, new_s) & (new_s > 0)
        state.u_tilde[:, ok] = new_u[:, ok]
        state.sigma2_tilde[ok] = new_s[ok]
        failed = pending & ~ok
        eps[failed] *= 0.5
        failures[failed] += 1
        pending = failed
        trial.u_tilde = state.u_tilde.copy()
        trial.sigma2_tilde = state.sigma2_tilde.copy()


def _sweep_dyads(y, net, state, hyper, eps, cap) -> None:
    """All dyad blocks at once; dyads are independent given the other factors."""
    n = state.n
    mask = off_diagonal_mask(n)
    base = _elbo.dyad_local_mlpcm(y, state)
    grad_v, grad_p = _up.grad_v_varphi_all(net, state, hyper)
    finite = np.all(np.isfinite(grad_v), axis=0) & np.isfinite(grad_p)
    pending = mask & finite
    failures = np.zeros((n, n), dtype=int)
    v0, p0 = state.v_tilde.copy(), state.varphi2_tilde.copy()
    trial = state.copy()
    while True:
        pending &= failures < cap
        if not pending.any():
            break
        new_v, new_p = _up.natural_step_gaussian(v0, p0, grad_v, grad_p, eps, state.d)
        trial.v_tilde = np.where(pending[None], new_v, state.v_tilde)
        trial.varphi2_tilde = np.where(pending, new_p, state.varphi2_tilde)
        with np.errstate(all="ignore"):
            delta = _elbo.dyad_local_mlpcm(y, trial) - base
        ok = pending & _accept(delta, new_v, new_p) & (new_p > 0)
        state.v_tilde[:, ok] = new_v[:, ok]
        state.varphi2_tilde[ok] = new_p[ok]
        failed = pending & ~ok
        eps[failed] *= 0.5
        failures[failed] += 1
        pending = failed
        trial.v_tilde = state.v_tilde.copy()
        trial.varphi2_tilde = state.varphi2_tilde.copy()


def _sweep_nodes_pois(y, net, state, hyper, eps, cap) -> None:
    """Sequential node blocks; each conditions on the freshest values of the others."""
    for i in range(state.n):
        base = _elbo.node_local_poislpcm(y, state, i)
        gu, gs = _up.grad_u_sigma_pois(state, net, hyper, i)
        if not (np.all(np.isfinite(gu)) and np.isfinite(gs)):
            continue
        u0, s0 = state.u_tilde[:, i].copy(), float(state.sigma2_tilde[i])
        failures = 0
        while failures < cap:
            new_u, new_s = _up.natural_step_gaussian(u0, s0, gu, gs, eps[i], state.d)
            state.u_tilde[:, i] = new_u
            state.sigma2_tilde[i] = new_s
            with np.errstate(all="ignore"):
                delta = _elbo.node_local_poislpcm(y, state, i) - base
            if np.all(np.isfinite(new_u)) and np.isfinite(new_s) and new_s > 0 \
                    and np.isfinite(delta) and delta >= 0:
                break
            state.u_tilde[:, i] = u0
            state.sigma2_tilde[i] = s0
            eps[i] *= 0.5
            failures += 1


def _step_eta_rho(y_total, state, hyper, steps: _up.StepSizes, cap, model) -> None:
    rate = _elbo.rate_total(state, model)
    base = _elbo.eta_rho_local(y_total, rate, state, hyper)
    g_eta, g_rho = _up._eta_rho_grad(y_total, rate, state, hyper)
    if not (np.isfinite(g_eta) and np.isfinite(g_rho)):
        return
    eta0, rho0 = state.eta_tilde, state.rho2_tilde
    failures = 0
    while failures < cap:
        eta, rho2 = _up.eta_rho_step_from_grad(state, g_eta, g_rho, steps.eps_beta)
        if np.isfinite(eta) and np.isfinite(rho2) and rho2 > 0:
            state.eta_tilde, state.rho2_tilde = eta, rho2
            with np.errstate(all="ignore"):
                delta = _elbo.eta_rho_local(y_total, _elbo.rate_total(state, model), state, hyper) - base
            if np.isfinite(delta) and delta >= 0:
                return
            state.eta_tilde, state.rho2_tilde = eta0, rho0
        steps.eps_beta *= 0.5
        failures += 1


def _step_delta(state, hyper, steps: _up.StepSizes, cap) -> None:
    base = _elbo.delta_local(state, hyper)
    grad = _up.grad_delta(state, hyper)
    if not np.all(np.isfinite(grad)):
        return
    d0 = state.delta_tilde.copy()
    failures = 0
    while failures < cap:
        new = _up.delta_step_from_grad(state, grad, steps.eps_pi)
        if np.all(np.isfinite(new)) and np.all(new > 0):
            state.delta_tilde = new
            try:
                with np.errstate(all="ignore"):
                    delta = _elbo.delta_local(state, hyper) - base
            except ValueError:
                delta = -np.inf
            if np.isfinite(delta) and delta >= 0:
                return
            state.delta_tilde = d0.copy()
        steps.eps_pi *= 0.5
        failures += 1


def _cluster_updates(state, hyper) -> None:
    mu, omega2 = _up.update_mu_omega_closed(state, hyper)
    state.mu_tilde, state.omega2_tilde = mu, omega2
    xi, psi = _up.update_xi_psi_closed(state, hyper)
    state.xi_tilde, state.psi_tilde = xi, psi


def _run(net: Network, hyper: Hyperparams, init: VariationalState, config: FitConfig,
         model: str, progress: Optional[ProgressHook]) -> FitResult:
    start = time.perf_counter()
    init.check_dimensions(net.n_nodes, hyper.k, hyper.d)
    state = init.copy()
    steps = config.step_sizes(state.n)
    y = net.weights.astype(np.float64)
    y_total = float(y.sum())
    cap = int(config.max_halvings_per_step)
    objective = _elbo.elbo_mlpcm if model == "mlpcm" else _elbo.elbo_poislpcm

    current = objective(net, state, hyper).total
    trace = [current]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        if model == "mlpcm":
            _sweep_nodes_mlpcm(y, net, state, hyper, steps.eps_u, cap)
            _sweep_dyads(y, net, state, hyper, steps.eps_v, cap)
            state.pi_tilde = _up.update_pi_closed(state, net, hyper)
            state.a_tilde, state.b_tilde = _up.update_ab_closed(state, net, hyper)
        else:
            _sweep_nodes_pois(y, net, state, hyper, steps.eps_u, cap)
            state.pi_tilde = _up.update_pi_closed(state, net, hyper)
        _step_eta_rho(y_total, state, hyper, steps, cap, model)
        _cluster_updates(state, hyper)
        _step_delta(state, hyper, steps, cap)

        new = objective(net, state, hyper).total
        trace.append(new)
        if progress is not None:
            progress(iterations, new)
        increment = new - current
        current = new
        if increment < config.tol:
            converged = True
            break

    state.validate()
    return FitResult(
        state=state, trace=trace, iterations=iterations, converged=converged,
        estimates=point_estimates(state), model=model,
        wall_time=time.perf_counter() - start, step_sizes=steps,
    )


def fit_mlpcm(net: Network, hyper: Hyperparams, init: VariationalState,
              config: Optional[FitConfig] = None,
              progress: Optional[ProgressHook] = None) -> FitResult:
    """Variational Bayes for the MLPCM.

    Sweep order per iteration: covert factors, overt factors, responsibilities,
    overt precisions, intercept, cluster centres, cluster precisions, mixing
    weights. Stops when one sweep raises the ELBO by less than ``config.tol``.
    """
    return _run(net, hyper, init, config or FitConfig(), "mlpcm", progress)


def fit_poislpcm(net: Network, hyper: Hyperparams, init: VariationalState,
                 config: Optional[FitConfig] = None,
                 progress: Optional[ProgressHook] = None) -> FitResult:
    """Variational Bayes for the PoisLPCM (sequential covert updates)."""
    return _run(net, hyper, init, config or FitConfig(), "poislpcm", progress)


def fit_model(model: str, net: Network, hyper: Hyperparams, init: VariationalState,
              config: Optional[FitConfig] = None,
              progress: Optional[ProgressHook] = None) -> FitResult:
    if model == "mlpcm":
        return fit_mlpcm(net, hyper, init, config, progress)
    if model == "poislpcm":
        return fit_poislpcm(net, hyper, init, config, progress)
    raise ValidationError(f"unknown model {model!r}")
