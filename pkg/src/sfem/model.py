"""
Discriminative latent mixture (DLM) parameters and densities.

Cluster ``k`` generates ``y = c + U x + eps`` with ``x ~ N(mu_k, Sigma_k)``
in a ``d``-dimensional latent space and ``eps`` spherical with variance
``beta_k`` on the orthogonal complement of ``span(U)``. In the basis
``[U, V]`` the observation covariance is block diagonal,
``diag(Sigma_k, beta_k * I_{p-d})``, so densities are evaluated from the
latent coordinates ``U^T (y - c)`` and the residual energy outside
``span(U)`` without ever forming a ``p x p`` matrix.

``c`` (``center``) is a fixed offset, zero unless the model was fitted on
uncentred data.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import InvalidConfig, SingularCovariance

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class Variant(str, Enum):
    FULL = "FullPerCluster"
    SHARED_BETA = "SharedBeta"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for v in cls:
            if value in (v.value, v.name, v.value.lower(), v.name.lower()):
                return v
        raise InvalidConfig(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}")


def _ro(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DlmParams:
    """
    Fitted (or planted) mixture parameters.

    Attributes
    ----------
    U : ndarray, shape (p, d)
        Orthonormal projection, ``U^T U = I_d``.
    pi : ndarray, shape (K,)
    mu : ndarray, shape (K, d)
        Latent means.
    sigma : ndarray, shape (K, d, d)
        Latent covariances.
    beta : ndarray, shape (K,)
        Noise variances outside ``span(U)``; all equal for ``SharedBeta``.
    center : ndarray, shape (p,)
    floor : float
        Variance floor the covariances were clamped to.
    """

    U: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    beta: np.ndarray
    variant: Variant = Variant.FULL
    center: np.ndarray | None = None
    floor: float = 0.0
    _chol: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        U = np.asarray(self.U, dtype=np.float64)
        if U.ndim != 2:
            raise InvalidConfig("U must be a p x d matrix")
        p, d = U.shape
        pi = np.asarray(self.pi, dtype=np.float64).reshape(-1)
        K = pi.shape[0]
        mu = np.asarray(self.mu, dtype=np.float64).reshape(K, d)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(K, d, d)
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if beta.shape == (1,) and K > 1:
            beta = np.repeat(beta, K)
        center = np.zeros(p) if self.center is None else np.asarray(self.center, dtype=np.float64)
        variant = Variant.parse(self.variant)
        for name, val in (("U", U), ("pi", pi), ("mu", mu), ("sigma", sigma), ("beta", beta), ("center", center)):
            object.__setattr__(self, name, _ro(val))
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "floor", float(self.floor))
        self._validate()

    def _validate(self):
        p, d, K = self.p, self.d, self.K
        if K < 1:
            raise InvalidConfig("need at least one cluster")
        if K >= 2 and not 1 <= d <= K - 1:
            raise InvalidConfig(f"need 1 <= d <= K-1, got d={d}, K={K}")
        if d >= p:
            raise InvalidConfig(f"need d < p, got d={d}, p={p}")
        if self.beta.shape != (K,) or self.center.shape != (p,):
            raise InvalidConfig("beta must have K entries and center p entries")
        gram_err = np.abs(self.U.T @ self.U - np.eye(d)).max(initial=0.0)
        if gram_err > 1e-8:
            raise InvalidConfig(f"U is not orthonormal (max |U^T U - I| = {gram_err:.2e})")
        if (self.pi < 0).any() or abs(self.pi.sum() - 1.0) > 1e-12:
            raise InvalidConfig("mixing proportions must be non-negative and sum to 1")
        if not np.allclose(self.sigma, np.swapaxes(self.sigma, 1, 2), rtol=0, atol=1e-12 * max(1.0, np.abs(self.sigma).max(initial=0))):
            raise InvalidConfig("latent covariances must be symmetric")
        # eigen round-off after clamping is relative to the largest eigenvalue
        slack = 64 * np.finfo(float).eps * max(1.0, float(np.abs(self.sigma).max(initial=0.0)))
        lower = self.floor * (1 - 1e-9) - slack
        if (self.beta <= 0).any() or (self.beta < self.floor * (1 - 1e-9)).any():
            raise InvalidConfig("noise variances must be positive and above the variance floor")
        if self.variant is Variant.SHARED_BETA and np.ptp(self.beta) > 0:
            raise InvalidConfig("SharedBeta requires equal beta entries")
        for k in range(K):
            if d and np.linalg.eigvalsh(self.sigma[k]).min() < lower:
                raise InvalidConfig(f"Sigma_{k} has eigenvalues below the variance floor")

    @property
    def p(self):
        return self.U.shape[0]

    @property
    def d(self):
        return self.U.shape[1]

    @property
    def K(self):
        return self.pi.shape[0]

    def means(self):
        """Observation-space cluster means ``c + U mu_k``, shape (K, p)."""
        return self.center + self.mu @ self.U.T

    def _factors(self):
        if self._chol is None:
            chol = []
            for k in range(self.K):
                if self.beta[k] <= 0:
                    raise SingularCovariance(f"beta_{k} = {self.beta[k]} is not positive")
                try:
                    L = np.linalg.cholesky(self.sigma[k]) if self.d else np.zeros((0, 0))
                except np.linalg.LinAlgError:
                    raise SingularCovariance(f"Sigma_{k} is not positive definite") from None
                logdet = 2.0 * np.log(np.diag(L)).sum() + (self.p - self.d) * np.log(self.beta[k])
                chol.append((L, logdet))
            object.__setattr__(self, "_chol", tuple(chol))
        return self._chol

    # serialisation -------------------------------------------------------

    def to_dict(self):
        return {
            "variant": self.variant.value,
            "K": self.K,
            "d": self.d,
            "p": self.p,
            "U": self.U.tolist(),
            "pi": self.pi.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "beta": self.beta.tolist(),
            "center": self.center.tolist(),
            "floor": self.floor,
        }

    @classmethod
    def from_dict(cls, data):
        K, d, p = int(data["K"]), int(data["d"]), int(data["p"])
        return cls(
            U=np.array(data["U"], dtype=float).reshape(p, d),
            pi=data["pi"],
            mu=np.array(data["mu"], dtype=float).reshape(K, d),
            sigma=np.array(data["sigma"], dtype=float).reshape(K, d, d),
            beta=data["beta"],
            variant=data.get("variant", Variant.FULL.value),
            center=data.get("center"),
            floor=data.get("floor", 0.0),
        )


def save_model(params, path, seed=None, diagnostics=None):
    """Write ``params`` as JSON; Python float repr keeps 17 significant digits."""
    doc = params.to_dict()
    doc["seed"] = seed
    doc["diagnostics"] = diagnostics or {}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path):
    doc = json.loads(Path(path).read_text())
    return DlmParams.from_dict(doc), doc


def _latent_and_residual(params, Y):
    R = np.atleast_2d(Y) - params.center
    X = R @ params.U
    comp = R - X @ params.U.T
    return X, np.einsum("ij,ij->i", comp, comp)


def log_density_matrix(params, Y):
    """
    ``ln phi(y_i; m_k, S_k)`` for every row and cluster, shape (n, K).

    Costs ``O(n p d + K d^3)``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != params.p:
        raise InvalidConfig(f"data must have shape (n, {params.p}), got {Y.shape}")
    X, energy = _latent_and_residual(params, Y)
    out = np.empty((Y.shape[0], params.K))
    for k, (L, logdet) in enumerate(params._factors()):
        diff = X - params.mu[k]
        if params.d:
            z = solve_triangular(L, diff.T, lower=True)
            maha = np.einsum("ij,ij->j", z, z)
        else:
            maha = 0.0
        out[:, k] = -0.5 * (params.p * LOG_2PI + logdet + maha + energy / params.beta[k])
    return out


def log_density(params, k, y):
    """``ln phi(y; m_k, S_k)`` for a single observation."""
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    if not np.isfinite(y).all():
        raise InvalidConfig("observation must be finite")
    if not 0 <= k < params.K:
        raise InvalidConfig(f"cluster index {k} out of range")
    return float(log_density_matrix(params, y)[0, k])


def mixture_log_density(params, Y):
    """``ln f(y_i)`` per row."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    return logsumexp(log_density_matrix(params, Y) + log_pi, axis=1)


def sample(params, n, seed):
    """
    Draw ``n`` observations and their cluster labels.

    Returns
    -------
    Y : ndarray, shape (n, p)
    labels : ndarray, shape (n,)
    """
    rng = np.random.default_rng(seed)
    p, d, K = params.p, params.d, params.K
    if n == 0:
        return np.zeros((0, p)), np.zeros(0, dtype=np.int64)
    labels = rng.choice(K, size=n, p=params.pi)
    X = np.empty((n, d))
    for k in range(K):
        idx = np.flatnonzero(labels == k)
        if idx.size and d:
            X[idx] = rng.multivariate_normal(params.mu[k], params.sigma[k], size=idx.size, method="cholesky")
    G = rng.standard_normal((n, p))
    eps = np.sqrt(params.beta[labels])[:, None] * (G - (G @ params.U) @ params.U.T)
    return params.center + X @ params.U.T + eps, labels


def free_parameter_count(variant, K, d, p):
    """
    Number of free parameters of a fitted model, used by the BIC.

    Mixing ``K - 1``, latent means ``K d``, orthonormal frame
    ``d (p - (d + 1) / 2)``, latent covariances ``K d (d + 1) / 2`` and the
    noise variances (``K`` per-cluster, ``1`` shared).
    """
    variant = Variant.parse(variant)
    if K < 1 or d < 0 or p < 1:
        raise InvalidConfig(f"invalid dimensions K={K}, d={d}, p={p}")
    if (K == 1 and d != 0) or (K >= 2 and not 1 <= d <= K - 1) or d >= p:
        raise InvalidConfig(f"invalid dimensions K={K}, d={d}, p={p}")
    n_beta = K if variant is Variant.FULL else 1
    return (K - 1) + K * d + d * (2 * p - d - 1) // 2 + K * d * (d + 1) // 2 + n_beta
