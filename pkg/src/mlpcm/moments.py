"""Closed-form expectations under the variational family, plus digamma and trigamma.

All functions broadcast over numpy arrays. Vectors carry their coordinates on
axis 0, so a batch of ``n`` points in ``d`` dimensions is a ``(d, n)`` array.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .types import NumericalError

__all__ = [
    "digamma",
    "trigamma",
    "log_gamma",
    "e_exp_normal",
    "e_sqnorm_diff",
    "e_exp_neg_sqnorm",
    "e_log_gamma_dist",
    "e_log_dirichlet_component",
    "e_log_dirichlet",
]

LOG_2PI = math.log(2.0 * math.pi)
_LOG_MAX = math.log(np.finfo(np.float64).max)

# Shift targets for the recurrences; past these the asymptotic series is
# accurate to ~1e-16.
_DIGAMMA_SHIFT = 10.0
_TRIGAMMA_SHIFT = 10.0


def _check_domain(x: np.ndarray, name: str) -> None:
    if np.any(~(x > 0)):
        raise ValueError(f"{name} is defined here only for strictly positive arguments")


def digamma(x):
    """Psi(x) for x > 0, via upward recurrence then the Stirling-type series."""
    x = np.asarray(x, dtype=np.float64)
    _check_domain(x, "digamma")
    x = x.copy()
    acc = np.zeros_like(x)
    small = x < _DIGAMMA_SHIFT
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < _DIGAMMA_SHIFT
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (
        1.0 / 12
        - inv2 * (1.0 / 120
        - inv2 * (1.0 / 252
        - inv2 * (1.0 / 240
        - inv2 * (1.0 / 132
        - inv2 * (691.0 / 32760
        - inv2 * (1.0 / 12)))))))
    out = acc + np.log(x) - 0.5 * inv - series
    return out if out.ndim else float(out)


def trigamma(x):
    """Psi'(x) for x > 0, same strategy as :func:`digamma`."""
    x = np.asarray(x, dtype=np.float64)
    _check_domain(x, "trigamma")
    x = x.copy()
    acc = np.zeros_like(x)
    small = x < _TRIGAMMA_SHIFT
    while np.any(small):
        acc[small] += 1.0 / (x[small] * x[small])
        x[small] += 1.0
        small = x < _TRIGAMMA_SHIFT
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (
        1.0
        + inv * (0.5
        + inv * (1.0 / 6
        - inv2 * (1.0 / 30
        - inv2 * (1.0 / 42
        - inv2 * (1.0 / 30
        - inv2 * (5.0 / 66
        - inv2 * (691.0 / 2730
        - inv2 * (7.0 / 6)))))))))
    out = acc + series
    return out if out.ndim else float(out)


def log_gamma(x):
    """log Gamma(x); thin wrapper so callers do not reach for scipy directly."""
    return gammaln(x)


def e_exp_normal(eta_t, rho2_t):
    """E[exp(beta)] for beta ~ N(eta_t, rho2_t)."""
    log_val = np.asarray(eta_t, dtype=np.float64) + 0.5 * np.asarray(rho2_t, dtype=np.float64)
    if np.any(log_val > _LOG_MAX):
        raise NumericalError("E[exp(beta)] overflows double precision")
    out = np.exp(log_val)
    return out if out.ndim else float(out)


def e_sqnorm_diff(m, c, d: int):
    """E||x||^2 for x ~ MVN(m, c I_d): ||m||^2 + d c."""
    m = np.asarray(m, dtype=np.float64)
    out = np.sum(m * m, axis=0) + d * np.asarray(c, dtype=np.float64)
    return out if np.ndim(out) else float(out)


def e_exp_neg_sqnorm(m, c, d: int):
    """E exp(-||x||^2) for x ~ MVN(m, c I_d)."""
    m = np.asarray(m, dtype=np.float64)
    scale = 1.0 + 2.0 * np.asarray(c, dtype=np.float64)
    out = np.exp(-np.sum(m * m, axis=0) / scale - 0.5 * d * np.log(scale))
    return out if np.ndim(out) else float(out)


def e_log_gamma_dist(shape, rate):
    """E log x for x ~ Ga(shape, rate)."""
    return digamma(shape) - np.log(rate)


def e_log_dirichlet(delta_t):
    """Vector of E log pi_k under Dir(delta_t)."""
    delta_t = np.asarray(delta_t, dtype=np.float64)
    _check_domain(delta_t, "Dirichlet concentration")
    return digamma(delta_t) - digamma(np.sum(delta_t))


def e_log_dirichlet_component(delta_t, k: int) -> float:
    """E log pi_k under Dir(delta_t); ``k`` is 0-based."""
    return float(e_log_dirichlet(delta_t)[k])
