"""Shared builders for randomized test instances."""

from __future__ import annotations

import numpy as np

from mlpcm.types import Hyperparams, Network, VariationalState, block_labels
from mlpcm.simulate import SimSpec, simulate_mlpcm, simulate_poislpcm


def random_hyper(rng: np.random.Generator, k: int, d: int = 2) -> Hyperparams:
    return Hyperparams(
        d=d, k=k, eta=float(rng.normal(0, 0.5)), rho2=float(rng.uniform(0.5, 2)),
        omega2=float(rng.uniform(0.5, 2)), xi=float(rng.uniform(0.5, 2)),
        psi=float(rng.uniform(0.5, 2)), a=float(rng.uniform(2, 10)), b=float(rng.uniform(0.5, 2)),
        delta=rng.uniform(0.5, 2, size=k),
    )


def random_state(rng: np.random.Generator, n: int, k: int, d: int = 2,
                 spread: float = 1.0) -> VariationalState:
    u = rng.normal(0, spread, size=(d, n))
    v = u[:, None, :] + rng.normal(0, 0.3, size=(d, n, n))
    varphi2 = rng.uniform(0.05, 0.5, size=(n, n))
    np.fill_diagonal(varphi2, 1.0)
    return VariationalState(
        u_tilde=u,
        sigma2_tilde=rng.uniform(0.05, 0.5, size=n),
        v_tilde=v,
        varphi2_tilde=varphi2,
        pi_tilde=rng.dirichlet(np.ones(k), size=n).T,
        eta_tilde=float(rng.normal(0, 0.5)),
        rho2_tilde=float(rng.uniform(0.05, 0.5)),
        mu_tilde=rng.normal(0, 1, size=(d, k)),
        omega2_tilde=rng.uniform(0.1, 1, size=k),
        xi_tilde=rng.uniform(1, 5, size=k),
        psi_tilde=rng.uniform(0.5, 2, size=k),
        a_tilde=rng.uniform(2, 10, size=n),
        b_tilde=rng.uniform(0.5, 2, size=n),
        delta_tilde=rng.uniform(0.5, 3, size=k),
    )


def random_network(rng: np.random.Generator, n: int, mean: float = 1.0) -> Network:
    y = rng.poisson(mean, size=(n, n))
    np.fill_diagonal(y, 0)
    return Network(y)


def small_sim(seed: int, n: int, k: int, model: str = "mlpcm", d: int = 2):
    """A separated-cluster instance from the generative model."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(k) / k
    mu = 1.5 * np.vstack([np.cos(angles), np.sin(angles)])
    if d > 2:
        mu = np.vstack([mu, np.zeros((d - 2, k))])
    spec = SimSpec(n_nodes=n, d=d, k=k, beta=1.0, mu=mu[:d], tau=rng.uniform(3, 8, size=k),
                   gamma=np.full(n, 10.0), z=block_labels(n, k), rng_seed=seed)
    sim = simulate_mlpcm if model == "mlpcm" else simulate_poislpcm
    return sim(spec)
