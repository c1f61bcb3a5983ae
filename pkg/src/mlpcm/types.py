"""Domain types shared across the package.

Array layouts follow a "coordinates first" convention:

* covert positions ``u`` are ``(d, N)``;
* overt positions ``v`` are ``(d, N, N)`` with ``v[:, i, j]`` the position of
  node ``j`` as perceived by sender ``i``;
* responsibilities ``pi_tilde`` are ``(K, N)`` with one column per node;
* cluster centres ``mu`` are ``(d, K)``.

Cluster labels are 0-based inside the library and 1-based in files.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "DimensionError",
    "NumericalError",
    "Network",
    "Hyperparams",
    "LatentConfig",
    "VariationalState",
    "PointEstimates",
    "point_estimates",
    "off_diagonal_mask",
]


class ValidationError(ValueError):
    """Raised when a value object is built from inconsistent data."""


class DimensionError(ValidationError):
    """Raised when N, K or d disagree between inputs."""


class NumericalError(ArithmeticError):
    """Raised when a computation overflows or produces NaN."""


def off_diagonal_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def _as_float(x, name: str, shape: Optional[tuple] = None) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _require_positive(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValidationError(f"{name} must be finite and strictly positive")


@dataclass(frozen=True)
class Network:
    """Weighted directed network with integer counts and an empty diagonal."""

    weights: np.ndarray
    node_labels: Optional[tuple] = None

    def __post_init__(self) -> None:
        w = np.asarray(self.weights)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError("weights must be a square matrix")
        if w.shape[0] < 1:
            raise ValidationError("network needs at least one node")
        wf = w.astype(np.float64)
        if not np.all(np.isfinite(wf)) or np.any(wf != np.round(wf)):
            raise ValidationError("weights must be integer-valued")
        if np.any(wf < 0):
            raise ValidationError("weights must be non-negative")
        if np.any(np.diag(wf) != 0):
            raise ValidationError("self-edges are not allowed (non-zero diagonal)")
        w = wf.astype(np.int64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.node_labels is not None:
            labels = tuple(str(s) for s in self.node_labels)
            if len(labels) != w.shape[0]:
                raise DimensionError("node_labels length differs from node count")
            if len(set(labels)) != len(labels):
                raise ValidationError("node labels must be unique")
            object.__setattr__(self, "node_labels", labels)

    @property
    def n_nodes(self) -> int:
        return int(self.weights.shape[0])

    def labels(self) -> tuple:
        if self.node_labels is not None:
            return self.node_labels
        return tuple(str(i + 1) for i in range(self.n_nodes))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.labels() == other.labels()


@dataclass(frozen=True)
class Hyperparams:
    """Prior constants plus the latent dimension and number of clusters."""

    d: int = 2
    k: int = 1
    eta: float = 1.0
    rho2: float = 1.0
    omega2: float = 1.0
    xi: float = 1.0
    psi: float = 1.0
    a: float = 10.0
    b: float = 1.0
    delta: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError("d must be a positive integer")
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError("k must be a positive integer")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "k", int(self.k))
        for name in ("rho2", "omega2", "xi", "psi", "a", "b"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val <= 0:
                raise ValidationError(f"{name} must be strictly positive")
            object.__setattr__(self, name, val)
        if not np.isfinite(self.eta):
            raise ValidationError("eta must be finite")
        object.__setattr__(self, "eta", float(self.eta))
        delta = np.ones(self.k) if self.delta is None else np.array(self.delta, dtype=np.float64)
        if delta.ndim == 0:
            delta = np.full(self.k, float(delta))
        if delta.shape != (self.k,):
            raise DimensionError("delta must have length k")
        _require_positive(delta, "delta")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    def with_k(self, k: int) -> "Hyperparams":
        """Same priors with a different number of clusters (delta broadcast from its first entry)."""
        return Hyperparams(
            d=self.d, k=k, eta=self.eta, rho2=self.rho2, omega2=self.omega2,
            xi=self.xi, psi=self.psi, a=self.a, b=self.b,
            delta=np.full(k, float(self.delta[0])),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Hyperparams):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def delta_is_symmetric(self) -> bool:
        return bool(np.all(self.delta == self.delta[0]))

    def to_dict(self) -> dict:
        return {
            "d": self.d, "k": self.k, "eta": self.eta, "rho2": self.rho2,
            "omega2": self.omega2, "xi": self.xi, "psi": self.psi,
            "a": self.a, "b": self.b, "delta": [float(x) for x in self.delta],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparams":
        known = {"d", "k", "eta", "rho2", "omega2", "xi", "psi", "a", "b", "delta"}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class LatentConfig:
    """Ground-truth generative parameters. ``v`` is None for the PoisLPCM."""

    beta: float
    u: np.ndarray
    v: Optional[np.ndarray]
    z: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    gamma: Optional[np.ndarray]
    pi: np.ndarray

    def __post_init__(self) -> None:
        u = _as_float(self.u, "u")
        if u.ndim != 2:
            raise DimensionError("u must be (d, N)")
        d, n = u.shape
        tau = _as_float(self.tau, "tau")
        k = tau.shape[0]
        mu = _as_float(self.mu, "mu", (d, k))
        pi = _as_float(self.pi, "pi", (k,))
        z = np.asarray(self.z, dtype=np.int64)
        if z.shape != (n,) or np.any(z < 0) or np.any(z >= k):
            raise ValidationError("z must hold N labels in 0..K-1")
        _require_positive(tau, "tau")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValidationError("pi must lie on the simplex")
        v = None if self.v is None else _as_float(self.v, "v", (d, n, n))
        gamma = None
        if self.gamma is not None:
            gamma = _as_float(self.gamma, "gamma", (n,))
            _require_positive(gamma, "gamma")
        for name, val in (("u", u), ("v", v), ("z", z), ("mu", mu), ("tau", tau),
                          ("gamma", gamma), ("pi", pi)):
            if val is not None:
                val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "beta", float(self.beta))


@dataclass
class VariationalState:
    """All variational parameters; mutated in place only by the fit loop."""

    u_tilde: np.ndarray
    sigma2_tilde: np.ndarray
    v_tilde: np.ndarray
    varphi2_tilde: np.ndarray
    pi_tilde: np.ndarray
    eta_tilde: float
    rho2_tilde: float
    mu_tilde: np.ndarray
    omega2_tilde: np.ndarray
    xi_tilde: np.ndarray
    psi_tilde: np.ndarray
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    delta_tilde: np.ndarray

    def __post_init__(self) -> None:
        self.u_tilde = _as_float(self.u_tilde, "u_tilde")
        if self.u_tilde.ndim != 2:
            raise DimensionError("u_tilde must be (d, N)")
        self.pi_tilde = _as_float(self.pi_tilde, "pi_tilde")
        if self.pi_tilde.ndim != 2:
            raise DimensionError("pi_tilde must be (K, N)")
        self.validate()

    @property
    def d(self) -> int:
        return int(self.u_tilde.shape[0])

    @property
    def n(self) -> int:
        return int(self.u_tilde.shape[1])

    @property
    def k(self) -> int:
        return int(self.pi_tilde.shape[0])

    def validate(self) -> None:
        d, n, k = self.d, self.n, self.k
        self.sigma2_tilde = _as_float(self.sigma2_tilde, "sigma2_tilde", (n,))
        self.v_tilde = _as_float(self.v_tilde, "v_tilde", (d, n, n))
        self.varphi2_tilde = _as_float(self.varphi2_tilde, "varphi2_tilde", (n, n))
        self.pi_tilde = _as_float(self.pi_tilde, "pi_tilde", (k, n))
        self.mu_tilde = _as_float(self.mu_tilde, "mu_tilde", (d, k))
        for name, shape in (("omega2_tilde", (k,)), ("xi_tilde", (k,)), ("psi_tilde", (k,)),
                            ("delta_tilde", (k,)), ("a_tilde", (n,)), ("b_tilde", (n,))):
            arr = _as_float(getattr(self, name), name, shape)
            _require_positive(arr, name)
            setattr(self, name, arr)
        _require_positive(self.sigma2_tilde, "sigma2_tilde")
        _require_positive(self.varphi2_tilde[off_diagonal_mask(n)], "varphi2_tilde")
        self.eta_tilde = float(self.eta_tilde)
        self.rho2_tilde = float(self.rho2_tilde)
        if not np.isfinite(self.eta_tilde):
            raise ValidationError("eta_tilde must be finite")
        _require_positive(np.array(self.rho2_tilde), "rho2_tilde")
        if not np.all(np.isfinite(self.u_tilde)) or not np.all(np.isfinite(self.mu_tilde)):
            raise ValidationError("positions must be finite")
        if not np.all(np.isfinite(self.v_tilde[:, off_diagonal_mask(n)])):
            raise ValidationError("overt positions must be finite")
        if np.any(self.pi_tilde < 0) or np.any(np.abs(self.pi_tilde.sum(axis=0) - 1.0) > 1e-10):
            raise ValidationError("pi_tilde columns must lie on the simplex")

    def copy(self) -> "VariationalState":
        return copy.deepcopy(self)

    def check_dimensions(self, n: int, k: int, d: int) -> None:
        if (self.n, self.k, self.d) != (n, k, d):
            raise DimensionError(
                f"state has (N, K, d) = {(self.n, self.k, self.d)}, expected {(n, k, d)}"
            )


@dataclass(frozen=True)
class PointEstimates:
    """Posterior summaries consumed by model selection and evaluation."""

    beta_hat: float
    u_hat: np.ndarray
    v_hat: np.ndarray
    z_hat: np.ndarray
    gamma_inv_hat: np.ndarray
    k: int = field(default=0)


def point_estimates(state: VariationalState) -> PointEstimates:
    """Approximate posterior means and MAP memberships (ties go to the lowest cluster)."""
    return PointEstimates(
        beta_hat=float(state.eta_tilde),
        u_hat=state.u_tilde.copy(),
        v_hat=state.v_tilde.copy(),
        z_hat=np.argmax(state.pi_tilde, axis=0).astype(np.int64),
        gamma_inv_hat=state.b_tilde / state.a_tilde,
        k=state.k,
    )


def block_labels(n: int, k: int) -> np.ndarray:
    """Contiguous, as-equal-as-possible groups in node order."""
    return (np.arange(n) * k // n).astype(np.int64)


def ensure_labels(labels: Sequence[int], n: int) -> np.ndarray:
    z = np.asarray(labels, dtype=np.int64)
    if z.shape != (n,):
        raise DimensionError("label vector has the wrong length")
    return z
