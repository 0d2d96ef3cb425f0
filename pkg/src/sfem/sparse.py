"""
Row-sparse projections and feature relevance.

A sparse approximation of the F-step projection is obtained by
soft-thresholding each column relative to its largest loading and
re-orthonormalising on the surviving rows. The per-feature relevance
``r_i = sum_j |U_ij|`` then marks the phase samples that take part in the
discriminative subspace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroColumn, InvalidConfig, SparsityError

logger = logging.getLogger(__name__)


def _sign_fix(U):
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def sparsify_projection(U, lam):
    """
    Soft-threshold each column of ``U`` at ``lam * max_i |U_ij|`` and
    re-orthonormalise.

    The QR factorisation runs on the rows that survive in at least one
    column, so thresholded-away rows stay exactly zero.

    Parameters
    ----------
    U : ndarray, shape (p, d)
        Orthonormal projection.
    lam : float
        Threshold fraction in ``[0, 1)``.

    Returns
    -------
    ndarray, shape (p, d)
        Orthonormal, row-sparse projection.
    """
    U = np.asarray(U, dtype=np.float64)
    if not 0 <= lam < 1:
        raise InvalidConfig(f"lambda must lie in [0, 1), got {lam}")
    p, d = U.shape
    if d == 0:
        return U.copy()
    peak = np.abs(U).max(axis=0)
    if (peak == 0).any():
        raise AllZeroColumn(f"column(s) {np.flatnonzero(peak == 0).tolist()} are entirely zero")
    T = np.sign(U) * np.maximum(np.abs(U) - lam * peak, 0.0)
    dead = ~T.any(axis=0)
    if dead.any():
        raise AllZeroColumn(f"threshold removes every entry of column(s) {np.flatnonzero(dead).tolist()}")
    rows = np.flatnonzero(T.any(axis=1))
    if rows.size < d:
        raise SparsityError(f"only {rows.size} rows survive, fewer than d={d}")
    Q, R = np.linalg.qr(T[rows])
    if np.abs(np.diag(R)).min() <= 1e-12 * np.abs(np.diag(R)).max():
        raise SparsityError("thresholded columns are linearly dependent")
    out = np.zeros((p, d))
    out[rows] = Q
    return _sign_fix(out)


@dataclass(frozen=True, eq=False)
class RelevanceProfile:
    """Row-wise L1 norms of a projection; ``normalization`` is their maximum."""

    r: np.ndarray
    normalization: float

    @property
    def scaled(self):
        return self.r / self.normalization if self.normalization > 0 else self.r.copy()

    def __len__(self):
        return self.r.shape[0]


def relevance_profile(U):
    U = np.asarray(U, dtype=np.float64)
    r = np.abs(U).sum(axis=1)
    return RelevanceProfile(r=r, normalization=float(r.max(initial=0.0)))


def select_key_points(profile, threshold_fraction):
    """
    Indices with ``r_i >= threshold_fraction * max(r)``, ascending.

    An all-zero profile has no key points; an empty result is logged.
    """
    r = profile.r if isinstance(profile, RelevanceProfile) else np.asarray(profile, dtype=float)
    if not 0 <= threshold_fraction <= 1:
        raise InvalidConfig("threshold_fraction must lie in [0, 1]")
    top = r.max(initial=0.0)
    if top <= 0:
        logger.warning("relevance profile is identically zero; no key points selected")
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(r >= threshold_fraction * top)


def support(U):
    """Indices of the non-zero rows of ``U``."""
    return np.flatnonzero(np.asarray(U).any(axis=1))


def lambda_sensitivity(U, stats, lambdas, ridge=0.0):
    """
    Support size and Fisher-criterion loss of :func:`sparsify_projection`
    over a grid of thresholds.

    Returns a list of dicts with keys ``lambda``, ``support_size``,
    ``criterion`` and ``relative_loss`` (``nan`` where sparsification fails).
    """
    from .fisher_em import fisher_criterion

    base = fisher_criterion(U, stats, ridge)
    rows = []
    for lam in lambdas:
        try:
            Us = sparsify_projection(U, lam)
        except SparsityError:
            rows.append({"lambda": float(lam), "support_size": 0, "criterion": float("nan"), "relative_loss": float("nan")})
            continue
        crit = fisher_criterion(Us, stats, ridge)
        loss = (base - crit) / base if base > 0 else 0.0
        rows.append({"lambda": float(lam), "support_size": int(support(Us).size), "criterion": crit, "relative_loss": loss})
    return rows
