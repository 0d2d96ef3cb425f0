"""
Fisher-EM: maximum-likelihood fitting of a discriminative latent mixture.

Each iteration runs

* an **F-step**, choosing the orthonormal projection ``U`` (p x d) that
  maximises the Fisher criterion ``trace((U^T S U)^-1 U^T S_B U)`` for the
  current soft partition,
* an **M-step**, re-estimating mixing proportions, latent means/covariances
  and noise variances given ``U``,
* an **E-step**, recomputing posteriors ``o_ik``.

The relative change of the Fisher criterion is the stopping test; the
log-likelihood is traced for diagnostics and restart selection. Data are
fitted around their global mean, which is stored in ``DlmParams.center``.

Restart ``r`` of a fit seeded with ``seed`` draws its initialisation from
``numpy.random.SeedSequence([seed, r])`` (see :func:`restart_seed`).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import (
    AllRestartsFailed,
    DegenerateScatter,
    EmptyCluster,
    InvalidConfig,
    NumericalUnderflow,
    SfemError,
    SingularProjectedScatter,
    TooFewPoints,
)
from .model import DlmParams, Variant, free_parameter_count, log_density_matrix

logger = logging.getLogger(__name__)

INIT_STRATEGIES = ("kmeans", "random", "given")
EMPTY_POLICIES = ("reseed", "error")
EMPTY_FRACTION = 1e-8


def restart_seed(seed, r):
    """Seed of restart ``r``: first word of ``SeedSequence([seed, r])``."""
    return int(np.random.SeedSequence([int(seed), int(r)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# posteriors and scatter


@dataclass(frozen=True, eq=False)
class PosteriorMatrix:
    """Soft assignments ``o`` (n x K) with hard labels (ties to the lowest k) and soft counts."""

    o: np.ndarray
    hard_labels: np.ndarray = field(init=False, repr=False)
    soft_counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        o = np.array(self.o, dtype=np.float64)
        if o.ndim != 2:
            raise InvalidConfig("posterior matrix must be 2-D")
        o.setflags(write=False)
        object.__setattr__(self, "o", o)
        labels = np.argmax(o, axis=1) if o.shape[1] else np.zeros(o.shape[0], dtype=np.int64)
        object.__setattr__(self, "hard_labels", labels.astype(np.int64))
        object.__setattr__(self, "soft_counts", o.sum(axis=0))

    @property
    def n(self):
        return self.o.shape[0]

    @property
    def K(self):
        return self.o.shape[1]

    @classmethod
    def from_labels(cls, labels, K):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise InvalidConfig(f"labels must lie in [0, {K})")
        o = np.zeros((labels.size, K))
        o[np.arange(labels.size), labels] = 1.0
        return cls(o)


@dataclass(frozen=True, eq=False)
class ScatterStats:
    """
    Total and between-cluster scatter of a soft partition.

    ``S`` is the 1/n covariance of all rows, ``S_B`` the soft between-cluster
    scatter, ``means`` the soft cluster means ``m_k``. Cluster covariances
    ``C_k`` are formed on demand by :meth:`cluster_covariance`.
    """

    S: np.ndarray
    S_B: np.ndarray
    means: np.ndarray
    ybar: np.ndarray
    soft_counts: np.ndarray
    n: int
    _data: np.ndarray = field(default=None, repr=False)
    _o: np.ndarray = field(default=None, repr=False)

    def cluster_covariance(self, k):
        R = self._data - self.means[k]
        w = self._o[:, k]
        return (R * w[:, None]).T @ R / self.soft_counts[k]


def total_scatter(Y):
    """Global mean and 1/n covariance of the rows of ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    ybar = Y.mean(axis=0)
    R = Y - ybar
    return ybar, R.T @ R / Y.shape[0]


def scatter_stats(data, posteriors, total=None):
    """
    Compute :class:`ScatterStats` for ``data`` under ``posteriors``.

    Parameters
    ----------
    data : array_like, shape (n, p)
    posteriors : PosteriorMatrix
    total : tuple, optional
        Precomputed ``(ybar, S)`` from :func:`total_scatter`.

    Raises
    ------
    EmptyCluster
        If some ``n_k < 1e-8 * n``.
    """
    Y = np.asarray(data, dtype=np.float64)
    o = posteriors.o
    n = Y.shape[0]
    if o.shape[0] != n:
        raise InvalidConfig("posteriors and data disagree on n")
    nk = posteriors.soft_counts
    empty = np.flatnonzero(nk < EMPTY_FRACTION * n)
    if empty.size:
        raise EmptyCluster(empty)
    ybar, S = total if total is not None else total_scatter(Y)
    means = (o.T @ Y) / nk[:, None]
    D = means - ybar
    S_B = (D * nk[:, None]).T @ D / n
    S_B = 0.5 * (S_B + S_B.T)
    return ScatterStats(S=S, S_B=S_B, means=means, ybar=ybar, soft_counts=nk, n=n, _data=Y, _o=o)


# ---------------------------------------------------------------------------
# initialisation


def _kmeans_like(Y, K, rng, sweeps=10):
    n = Y.shape[0]
    sq = np.einsum("ij,ij->i", Y, Y)
    centers = [int(rng.integers(n))]
    dmin = sq - 2 * Y @ Y[centers[0]] + sq[centers[0]]
    for _ in range(1, K):
        nxt = int(np.argmax(dmin))
        centers.append(nxt)
        dmin = np.minimum(dmin, sq - 2 * Y @ Y[nxt] + sq[nxt])
    C = Y[centers].copy()
    labels = None
    for _ in range(sweeps):
        dist = sq[:, None] - 2 * Y @ C.T + np.einsum("ij,ij->i", C, C)[None, :]
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            members = labels == k
            if members.any():
                C[k] = Y[members].mean(axis=0)
    return labels


def initialize(data, K, seed, strategy="kmeans", labels=None):
    """
    Initial posteriors for a fit.

    ``"kmeans"`` picks a random first centre, adds centres by farthest-first
    traversal and refines with 10 hard-assignment sweeps; ``"random"`` draws
    Dirichlet rows; ``"given"`` one-hot encodes ``labels``.
    """
    Y = np.asarray(data, dtype=np.float64)
    n = Y.shape[0]
    if K < 1:
        raise InvalidConfig("K must be >= 1")
    if n < K:
        raise TooFewPoints(f"need at least K={K} rows, got {n}")
    if strategy == "given":
        if labels is None:
            raise InvalidConfig("strategy 'given' needs labels")
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise InvalidConfig("given labels must have one entry per row")
        return PosteriorMatrix.from_labels(labels, K)
    rng = np.random.default_rng(seed)
    if strategy == "random":
        return PosteriorMatrix(rng.dirichlet(np.ones(K), size=n))
    if strategy == "kmeans":
        return PosteriorMatrix.from_labels(_kmeans_like(Y, K, rng), K)
    raise InvalidConfig(f"unknown initialisation {strategy!r}; expected one of {INIT_STRATEGIES}")


# ---------------------------------------------------------------------------
# E / F / M steps


def _e_step(params, Y):
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    joint = log_density_matrix(params, Y) + log_pi
    if (np.isneginf(joint).all(axis=1)).any():
        row = int(np.flatnonzero(np.isneginf(joint).all(axis=1))[0])
        raise NumericalUnderflow(f"row {row}: every component has zero density")
    lse = logsumexp(joint, axis=1)
    o = np.exp(joint - lse[:, None])
    o /= o.sum(axis=1, keepdims=True)
    return PosteriorMatrix(o), lse


def e_step(params, data):
    """Posterior probabilities ``o_ik``, normalised in log space."""
    return _e_step(params, np.asarray(data, dtype=np.float64))[0]


def log_likelihood(params, data):
    """``sum_i ln f(y_i)`` of the mixture."""
    return float(_e_step(params, np.asarray(data, dtype=np.float64))[1].sum())


def _sign_fix(U):
    if U.shape[1] == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def f_step(stats, d, ridge=0.0):
    """
    Projection maximising the Fisher criterion.

    ``S + ridge I`` is whitened symmetrically, the top ``d`` eigenvectors of
    the whitened ``S_B`` are mapped back, orthonormalised by QR and
    sign-fixed so the largest-magnitude entry of each column is positive.

    Returns
    -------
    ndarray, shape (p, d)
    """
    S, S_B = stats.S, stats.S_B
    p = S.shape[0]
    K = stats.means.shape[0]
    if d < 0 or d >= p or (K >= 2 and d > K - 1) or (K == 1 and d != 0):
        raise InvalidConfig(f"latent dimension d={d} incompatible with K={K}, p={p}")
    if d == 0:
        return np.zeros((p, 0))
    if np.linalg.norm(S_B, np.inf) < 1e-12 * np.linalg.norm(S, np.inf):
        raise DegenerateScatter("between-cluster scatter is numerically zero")
    w, Q = np.linalg.eigh(S + ridge * np.eye(p))
    if w.min() <= 0:
        raise DegenerateScatter("total scatter is not positive definite; increase the ridge")
    W = (Q / np.sqrt(w)) @ Q.T
    M = W @ S_B @ W
    _, V = np.linalg.eigh(0.5 * (M + M.T))
    G = W @ V[:, ::-1][:, :d]
    U, _ = np.linalg.qr(G)
    return _sign_fix(U)


def fisher_criterion(U, stats, ridge=0.0):
    """``trace((U^T (S + ridge I) U)^-1 U^T S_B U)``."""
    U = np.asarray(U, dtype=np.float64)
    if U.shape[1] == 0:
        return 0.0
    A = U.T @ stats.S @ U + ridge * (U.T @ U)
    B = U.T @ stats.S_B @ U
    try:
        L = np.linalg.cholesky(0.5 * (A + A.T))
    except np.linalg.LinAlgError:
        raise SingularProjectedScatter("projected total scatter is singular") from None
    Z = np.linalg.solve(L, B)
    return float(np.trace(np.linalg.solve(L, Z.T)))


def variance_floor(S):
    """Variance floor ``1e-10 * trace(S) / p`` (``1e-10`` for constant data)."""
    scale = float(np.trace(S)) / S.shape[0]
    return 1e-10 * scale if scale > 0 else 1e-10


def _clamp_eigs(C, floor, what):
    w, Q = np.linalg.eigh(0.5 * (C + C.T))
    if w.min() >= floor:
        return 0.5 * (C + C.T)
    logger.warning("%s: clamping %d eigenvalue(s) to the variance floor %.3g", what, int((w < floor).sum()), floor)
    return (Q * np.maximum(w, floor)) @ Q.T


def m_step(data, posteriors, U, variant=Variant.FULL, floor=None, center=None):
    """
    Maximisation step given posteriors and projection.

    ``pi_k = n_k / n``, ``mu_k = U^T m_k`` (relative to ``center``),
    ``Sigma_k = U^T C_k U`` and ``beta_k = (tr C_k - sum_j u_j^T C_k u_j) / (p - d)``
    with ``C_k`` the soft empirical covariance of cluster ``k``. ``SharedBeta``
    pools ``beta = sum_k pi_k beta_k``. Variances below ``floor`` are clamped.
    """
    Y = np.asarray(data, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    variant = Variant.parse(variant)
    n, p = Y.shape
    d = U.shape[1]
    o = posteriors.o
    K = o.shape[1]
    nk = posteriors.soft_counts
    empty = np.flatnonzero(nk < EMPTY_FRACTION * n)
    if empty.size:
        raise EmptyCluster(empty)
    c = np.zeros(p) if center is None else np.asarray(center, dtype=np.float64)
    if floor is None:
        floor = variance_floor(total_scatter(Y)[1])

    pi = nk / n
    pi = pi / pi.sum()
    means = (o.T @ Y) / nk[:, None]
    mu = (means - c) @ U
    Rc = Y - c
    X = Rc @ U
    sq = np.einsum("ij,ij->i", Rc, Rc)
    offset = means - c
    sigma = np.empty((K, d, d))
    beta = np.empty(K)
    for k in range(K):
        w = o[:, k]
        # trace(C_k) = E_k ||y - c||^2 - ||m_k - c||^2
        total_energy = w @ sq / nk[k] - offset[k] @ offset[k]
        Z = X - mu[k]
        Sk = (Z * w[:, None]).T @ Z / nk[k]
        sigma[k] = _clamp_eigs(Sk, floor, f"Sigma_{k}") if d else Sk
        beta[k] = (total_energy - np.trace(Sk)) / (p - d)
    if variant is Variant.SHARED_BETA:
        beta = np.full(K, float(pi @ beta))
    low = beta < floor
    if low.any():
        logger.warning("beta: clamping %d noise variance(s) to the variance floor %.3g", int(low.sum()), floor)
        beta = np.maximum(beta, floor)
    return DlmParams(U=U, pi=pi, mu=mu, sigma=sigma, beta=beta, variant=variant, center=c, floor=floor)


def bic(params, data, loglik=None):
    """``loglik - (m / 2) ln n``; larger is better."""
    Y = np.asarray(data, dtype=np.float64)
    if loglik is None:
        loglik = log_likelihood(params, Y)
    m = free_parameter_count(params.variant, params.K, params.d, params.p)
    return float(loglik - 0.5 * m * math.log(Y.shape[0]))


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitConfig:
    """
    Settings of :func:`fit`.

    ``d=None`` uses ``K - 1``; ``ridge=None`` uses ``1e-6 * trace(S) / p``;
    ``variance_floor=None`` uses ``1e-10 * trace(S) / p``; ``sparse_lambda``
    switches on soft-thresholding of ``U`` after each F-step.
    """

    seed: int
    d: int | None = None
    variant: Variant = Variant.FULL
    max_iter: int = 200
    tol: float = 1e-6
    n_restarts: int = 5
    ridge: float | None = None
    init: str = "kmeans"
    empty_cluster_policy: str = "reseed"
    sparse_lambda: float | None = None
    workers: int = 1
    variance_floor: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.max_iter < 0 or self.tol < 0 or self.n_restarts < 1 or self.workers < 1:
            raise InvalidConfig("max_iter, tol must be >= 0 and n_restarts, workers >= 1")
        if self.init not in INIT_STRATEGIES:
            raise InvalidConfig(f"unknown init {self.init!r}")
        if self.empty_cluster_policy not in EMPTY_POLICIES:
            raise InvalidConfig(f"unknown empty_cluster_policy {self.empty_cluster_policy!r}")
        if self.sparse_lambda is not None and not 0 <= self.sparse_lambda < 1:
            raise InvalidConfig("sparse_lambda must lie in [0, 1)")
        if self.variance_floor is not None and not self.variance_floor > 0:
            raise InvalidConfig("variance_floor must be positive")

    def to_dict(self):
        return {
            "seed": self.seed, "d": self.d, "variant": self.variant.value, "max_iter": self.max_iter,
            "tol": self.tol, "n_restarts": self.n_restarts, "ridge": self.ridge, "init": self.init,
            "empty_cluster_policy": self.empty_cluster_policy, "sparse_lambda": self.sparse_lambda,
            "workers": self.workers, "variance_floor": self.variance_floor,
        }


@dataclass(frozen=True)
class IterationState:
    """Snapshot handed to the ``callback`` of :func:`fit` after each iteration."""

    restart: int
    iteration: int
    U: np.ndarray
    params: DlmParams
    posteriors: PosteriorMatrix
    stats: ScatterStats
    criterion: float
    criterion_previous_u: float | None
    loglik: float


@dataclass(eq=False)
class FitReport:
    params: DlmParams
    posteriors: PosteriorMatrix
    iterations: int
    converged: bool
    criterion_trace: list
    loglik_trace: list
    loglik: float
    bic: float
    seed: int
    restarts_used: int
    restart_logliks: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    empty_cluster_resets: int = 0
    config: FitConfig | None = None

    @property
    def labels(self):
        return self.posteriors.hard_labels

    @property
    def K(self):
        return self.params.K

    def to_dict(self, include_posteriors=False):
        out = {
            "K": self.params.K,
            "d": self.params.d,
            "p": self.params.p,
            "iterations": self.iterations,
            "converged": self.converged,
            "loglik": self.loglik,
            "bic": self.bic,
            "n_parameters": free_parameter_count(self.params.variant, self.params.K, self.params.d, self.params.p),
            "seed": self.seed,
            "restarts_used": self.restarts_used,
            "restart_logliks": self.restart_logliks,
            "failures": self.failures,
            "empty_cluster_resets": self.empty_cluster_resets,
            "criterion_trace": self.criterion_trace,
            "loglik_trace": self.loglik_trace,
            "soft_counts": self.posteriors.soft_counts.tolist(),
            "hard_labels": self.posteriors.hard_labels.tolist(),
            "config": self.config.to_dict() if self.config else None,
            "params": self.params.to_dict(),
        }
        if include_posteriors:
            out["posteriors"] = self.posteriors.o.tolist()
        return out

    def write(self, path, include_posteriors=False):
        Path(path).write_text(json.dumps(self.to_dict(include_posteriors), indent=1) + "\n")


def _reseed_empty(Y, post, empty, params, K):
    """Move the least likely point and its nearest neighbours into each empty cluster."""
    o = np.array(post.o)
    n = Y.shape[0]
    if params is not None:
        from .model import mixture_log_density
        score = mixture_log_density(params, Y)
    else:
        means = (o.T @ Y) / np.maximum(o.sum(axis=0), 1e-300)[:, None]
        score = -((Y - means[np.argmax(o, axis=1)]) ** 2).sum(axis=1)
    size = max(2, n // (4 * K))
    taken = np.zeros(n, dtype=bool)
    for k in empty:
        cand = np.where(taken, np.inf, score)
        seed_row = int(np.argmin(cand))
        dist = ((Y - Y[seed_row]) ** 2).sum(axis=1)
        dist[taken] = np.inf
        rows = np.argsort(dist, kind="stable")[:size]
        o[rows] = 0.0
        o[rows, k] = 1.0
        taken[rows] = True
    return PosteriorMatrix(o)


def _fit_once(Y, K, d, cfg, restart, init_labels, total, ridge, floor, callback=None):
    from .sparse import sparsify_projection

    seed = restart_seed(cfg.seed, restart)
    ybar = total[0]
    post = initialize(Y, K, seed, cfg.init, init_labels)
    n = Y.shape[0]
    resets = 0
    params = None
    U = None
    crit_trace, ll_trace = [], []
    converged = False
    iterations = 0

    def checked_stats(post, params):
        nonlocal resets
        for _ in range(3 * K + 1):
            try:
                return post, scatter_stats(Y, post, total)
            except EmptyCluster as exc:
                if cfg.empty_cluster_policy == "error":
                    raise
                resets += len(exc.clusters)
                post = _reseed_empty(Y, post, exc.clusters, params, K)
        raise EmptyCluster([], "empty clusters keep reappearing")

    def project(stats):
        Unew = f_step(stats, d, ridge)
        if cfg.sparse_lambda:
            Unew = sparsify_projection(Unew, cfg.sparse_lambda)
        return Unew

    if cfg.max_iter == 0:
        post, stats = checked_stats(post, None)
        U = project(stats)
        params = m_step(Y, post, U, cfg.variant, floor, center=ybar)
        loglik = float(_e_step(params, Y)[1].sum())
    else:
        for it in range(cfg.max_iter):
            post, stats = checked_stats(post, params)
            crit_prev_u = fisher_criterion(U, stats, ridge) if U is not None else None
            U = project(stats)
            crit = fisher_criterion(U, stats, ridge)
            params = m_step(Y, post, U, cfg.variant, floor, center=ybar)
            post, lse = _e_step(params, Y)
            loglik = float(lse.sum())
            crit_trace.append(crit)
            ll_trace.append(loglik)
            iterations = it + 1
            if callback is not None:
                callback(IterationState(restart, iterations, U, params, post, stats, crit, crit_prev_u, loglik))
            if it > 0:
                prev = crit_trace[-2]
                if abs(crit - prev) <= cfg.tol * max(abs(prev), np.finfo(float).tiny):
                    converged = True
                    break
    return {
        "params": params,
        "posteriors": post,
        "iterations": iterations,
        "converged": converged,
        "criterion_trace": crit_trace,
        "loglik_trace": ll_trace,
        "loglik": loglik,
        "resets": resets,
        "restart": restart,
        "n": n,
    }


def _fit_job(args):
    Y, K, d, cfg, r, init_labels, total, ridge, floor = args
    try:
        return _fit_once(Y, K, d, cfg, r, init_labels, total, ridge, floor)
    except (SfemError, np.linalg.LinAlgError) as exc:
        return {"restart": r, "error": f"{type(exc).__name__}: {exc}"}


def fit(data, K, config, init_labels=None, callback=None):
    """
    Fit a discriminative latent mixture with ``K`` clusters.

    Parameters
    ----------
    data : array_like, shape (n, p)
    K : int
    config : FitConfig
    init_labels : array_like, optional
        Labels for ``init="given"``.
    callback : callable, optional
        Called with an :class:`IterationState` after every iteration
        (forces single-worker execution).

    Returns
    -------
    FitReport
        The restart with the highest final log-likelihood (ties: lowest
        restart index).
    """
    Y = np.asarray(data, dtype=np.float64)
    if Y.ndim != 2:
        raise InvalidConfig("data must be a 2-D array")
    n, p = Y.shape
    d = K - 1 if config.d is None else config.d
    if K < 1 or (K == 1 and d != 0) or (K >= 2 and not 1 <= d <= K - 1) or d >= p:
        raise InvalidConfig(f"invalid dimensions K={K}, d={d}, p={p}")
    if n < K:
        raise TooFewPoints(f"need at least K={K} rows, got {n}")
    if not np.isfinite(Y).all():
        raise InvalidConfig("data contain non-finite values")
    total = total_scatter(Y)
    scale = float(np.trace(total[1])) / p
    ridge = config.ridge if config.ridge is not None else 1e-6 * scale
    floor = variance_floor(total[1]) if config.variance_floor is None else float(config.variance_floor)

    jobs = [(Y, K, d, config, r, init_labels, total, ridge, floor) for r in range(config.n_restarts)]
    if callback is not None:
        results = []
        for job in jobs:
            try:
                results.append(_fit_once(*job, callback=callback))
            except (SfemError, np.linalg.LinAlgError) as exc:
                results.append({"restart": job[4], "error": f"{type(exc).__name__}: {exc}"})
    elif config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_fit_job, jobs))
    else:
        results = [_fit_job(job) for job in jobs]

    ok = [res for res in results if "error" not in res]
    failures = [{"restart": res["restart"], "error": res["error"]} for res in results if "error" in res]
    for f in failures:
        logger.info("restart %d failed: %s", f["restart"], f["error"])
    if not ok:
        raise AllRestartsFailed(f"all {len(results)} restarts failed: {failures}")
    best = max(ok, key=lambda res: (res["loglik"], -res["restart"]))
    params = best["params"]
    return FitReport(
        params=params,
        posteriors=best["posteriors"],
        iterations=best["iterations"],
        converged=best["converged"],
        criterion_trace=best["criterion_trace"],
        loglik_trace=best["loglik_trace"],
        loglik=best["loglik"],
        bic=bic(params, Y, loglik=best["loglik"]),
        seed=config.seed,
        restarts_used=len(ok),
        restart_logliks=[res.get("loglik") for res in results],
        failures=failures,
        empty_cluster_resets=best["resets"],
        config=config,
    )


# ---------------------------------------------------------------------------
# model selection


def plateau_choice(ks, bics, band=0.01):
    """
    Smallest ``K`` whose BIC lies within ``band`` of the maximum, the band
    being measured as a fraction of the BIC range over the sweep.
    """
    ks = list(ks)
    bics = np.asarray(bics, dtype=float)
    if not ks or len(ks) != len(bics):
        raise InvalidConfig("need one BIC value per K")
    finite = np.isfinite(bics)
    if not finite.any():
        raise InvalidConfig("no finite BIC value")
    best, worst = bics[finite].max(), bics[finite].min()
    cutoff = best - band * (best - worst)
    order = np.argsort(ks, kind="stable")
    for i in order:
        if finite[i] and bics[i] >= cutoff:
            return ks[i]
    return ks[int(np.argmax(np.where(finite, bics, -np.inf)))]


@dataclass(eq=False)
class BicSweepReport:
    entries: list
    chosen_k: int
    reports: dict

    @property
    def best(self):
        return self.reports[self.chosen_k]

    def to_dict(self):
        return {
            "chosen_k": self.chosen_k,
            "entries": self.entries,
            "fits": {str(k): rep.to_dict() for k, rep in self.reports.items()},
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "bic", "loglik", "iterations", "converged", "chosen"])
            for e in self.entries:
                w.writerow([
                    e["K"],
                    "" if e["bic"] is None else repr(e["bic"]),
                    "" if e["loglik"] is None else repr(e["loglik"]),
                    "" if e["iterations"] is None else e["iterations"],
                    "" if e["converged"] is None else int(e["converged"]),
                    int(e["K"] == self.chosen_k),
                ])


def _sweep_job(args):
    Y, K, cfg = args
    try:
        return K, fit(Y, K, cfg), None
    except (SfemError, np.linalg.LinAlgError) as exc:
        return K, None, f"{type(exc).__name__}: {exc}"


def sweep_k(data, k_range, config, band=0.01):
    """
    Fit every ``K`` in ``k_range`` and choose one with :func:`plateau_choice`.

    ``config.d`` applies to all K when set; otherwise each fit uses ``K - 1``.
    Failed values of K are recorded and skipped.
    """
    Y = np.asarray(data, dtype=np.float64)
    ks = [int(k) for k in k_range]
    if not ks or min(ks) < 2:
        raise InvalidConfig("k_range must be non-empty with every K >= 2")
    if config.workers > 1 and len(ks) > 1:
        inner = replace(config, workers=1)
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_sweep_job, [(Y, k, inner) for k in ks]))
    else:
        results = [_sweep_job((Y, k, config)) for k in ks]

    entries, reports = [], {}
    for k, rep, err in results:
        if rep is None:
            logger.warning("K=%d failed: %s", k, err)
            entries.append({"K": k, "bic": None, "loglik": None, "iterations": None, "converged": None, "error": err})
        else:
            reports[k] = rep
            entries.append({"K": k, "bic": rep.bic, "loglik": rep.loglik, "iterations": rep.iterations,
                            "converged": rep.converged, "error": None})
    if not reports:
        raise AllRestartsFailed("every K in the sweep failed")
    ok_ks = sorted(reports)
    chosen = plateau_choice(ok_ks, [reports[k].bic for k in ok_ks], band)
    return BicSweepReport(entries=entries, chosen_k=chosen, reports=reports)
