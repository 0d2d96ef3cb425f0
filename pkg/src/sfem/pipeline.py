"""
Two-level clustering of a cycle cohort.

Level 1 clusters individual cycles (sparse Fisher-EM by default). Each
trial is then summarised by the counts of label changes between consecutive
cycles, a ``K1 x K1`` matrix with its diagonal set to zero and flattened row
by row. Level 2 clusters trials on these count vectors.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reports as rp
from .dataset import group_by_trial
from .errors import InvalidConfig, LabelOutOfRange
from .fisher_em import FitConfig, fit, sweep_k
from .model import Variant, save_model
from .sparse import relevance_profile, select_key_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TransitionVector:
    """Flattened off-diagonal transition counts of one trial."""

    key: tuple
    counts: np.ndarray
    n_states: int
    n_cycles: int
    self_transitions: int

    @property
    def matrix(self):
        return self.counts.reshape(self.n_states, self.n_states)


def transition_features(labels, K1, key=None):
    """
    Count ``a -> b`` changes (``a != b``) between consecutive labels.

    Parameters
    ----------
    labels : sequence of int
        Cycle labels of one trial, in cycle order.
    K1 : int
        Number of level-1 clusters.
    key : tuple, optional
        Trial key stored on the result.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= K1):
        raise LabelOutOfRange(f"labels must lie in [0, {K1}), got range [{labels.min()}, {labels.max()}]")
    M = np.zeros((K1, K1), dtype=np.int64)
    if labels.size > 1:
        np.add.at(M, (labels[:-1], labels[1:]), 1)
    self_moves = int(np.trace(M))
    np.fill_diagonal(M, 0)
    counts = M.reshape(-1)
    counts.setflags(write=False)
    return TransitionVector(key=key, counts=counts, n_states=K1, n_cycles=int(labels.size), self_transitions=self_moves)


@dataclass(frozen=True)
class PipelineConfig:
    """
    Level-1 and level-2 fit settings. ``k1``/``k2`` fix the cluster counts;
    otherwise they are chosen by BIC sweeps over the inclusive ranges.
    """

    level1: FitConfig
    level2: FitConfig
    k1_range: tuple = (2, 8)
    k2_range: tuple = (2, 8)
    k1: int | None = None
    k2: int | None = None
    key_point_threshold: float = 0.5

    @classmethod
    def default(cls, seed, sparse_lambda=0.2, **kw):
        return cls(
            level1=FitConfig(seed=seed, sparse_lambda=sparse_lambda),
            level2=FitConfig(seed=seed, variant=Variant.SHARED_BETA),
            **kw,
        )

    def to_dict(self):
        return {
            "level1": self.level1.to_dict(),
            "level2": self.level2.to_dict(),
            "k1_range": list(self.k1_range),
            "k2_range": list(self.k2_range),
            "k1": self.k1,
            "k2": self.k2,
            "key_point_threshold": self.key_point_threshold,
        }


@dataclass(eq=False)
class PipelineResult:
    level1: object
    level1_sweep: object
    cycle_labels: np.ndarray
    transitions: list
    level2: object
    level2_sweep: object
    trial_labels: np.ndarray
    zero_transition_trials: list
    reports: dict = field(default_factory=dict)

    @property
    def K1(self):
        return self.level1.params.K

    @property
    def K2(self):
        return self.level2.params.K

    @property
    def trial_keys(self):
        return [v.key for v in self.transitions]

    def transition_matrix(self):
        return np.array([v.counts for v in self.transitions], dtype=np.float64)

    def write(self, out_dir, dataset):
        """Write models, labels, transition features and reports under ``out_dir``."""
        out = Path(out_dir)
        (out / "reports").mkdir(parents=True, exist_ok=True)
        save_model(self.level1.params, out / "level1_model.json", seed=self.level1.seed,
                   diagnostics=_diagnostics(self.level1))
        save_model(self.level2.params, out / "level2_model.json", seed=self.level2.seed,
                   diagnostics=_diagnostics(self.level2))
        with (out / "level1_labels.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["swimmer_id", "session", "trial", "cycle_index", "label"])
            for i in range(dataset.n):
                w.writerow([dataset.swimmer_id[i], int(dataset.session[i]), int(dataset.trial[i]),
                            int(dataset.cycle_index[i]), int(self.cycle_labels[i])])
        zero = set(self.zero_transition_trials)
        with (out / "level2_labels.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["swimmer_id", "session", "trial", "n_cycles", "label", "zero_transitions"])
            for v, lab in zip(self.transitions, self.trial_labels):
                w.writerow([v.key[0], v.key[1], v.key[2], v.n_cycles, int(lab), int(v.key in zero)])
        rp.write_transitions(out / "transitions.csv", self.transitions, self.K1)
        write_reports(out / "reports", self.reports, self.K1, dataset.p)
        for name, sweep in (("level1_sweep", self.level1_sweep), ("level2_sweep", self.level2_sweep)):
            if sweep is not None:
                sweep.write_csv(out / "reports" / f"{name}.csv")
        summary = {
            "K1": self.K1,
            "K2": self.K2,
            "n_cycles": int(self.cycle_labels.size),
            "n_trials": len(self.transitions),
            "zero_transition_trials": [list(k) for k in self.zero_transition_trials],
            "level1_bic": self.level1.bic,
            "level2_bic": self.level2.bic,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


def _diagnostics(report):
    return {
        "iterations": report.iterations,
        "converged": report.converged,
        "loglik": report.loglik,
        "bic": report.bic,
        "restarts_used": report.restarts_used,
        "empty_cluster_resets": report.empty_cluster_resets,
        "criterion_trace": report.criterion_trace,
    }


def _fit_or_sweep(data, k, k_range, cfg):
    if k is not None:
        return fit(data, k, cfg), None
    lo, hi = k_range
    sweep = sweep_k(data, range(lo, hi + 1), cfg)
    return sweep.best, sweep


def trial_transitions(dataset, labels, K1, index=None):
    index = group_by_trial(dataset) if index is None else index
    return [transition_features(labels[rows], K1, key=key) for key, rows in index.items()]


def build_reports(dataset, cycle_labels, K1, U, transitions, trial_labels, key_point_threshold=0.5,
                  profile_label="level2_cluster"):
    """Assemble the report tables of a level-1 labelling and a trial grouping."""
    profile = relevance_profile(U)
    out = {
        "mean_patterns": rp.cluster_mean_patterns(dataset.values, cycle_labels, K1),
        "relevance": profile,
        "key_points": select_key_points(profile, key_point_threshold),
        "transitions": transitions,
        "transition_profiles": rp.transition_profile(transitions, trial_labels),
        "profile_label": profile_label,
        "group_distribution": None,
    }
    if dataset.has_groups:
        out["group_distribution"] = rp.group_distribution(cycle_labels, dataset.group, K1)
    else:
        logger.warning("dataset lacks learning groups; group distribution skipped")
    return out


def write_reports(out_dir, reports, K1, p):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rp.write_mean_patterns(out / "mean_patterns.csv", reports["mean_patterns"], p)
    rp.write_relevance_profile(out / "relevance_profile.csv", reports["relevance"])
    rp.write_key_points(out / "key_points.csv", reports["key_points"], reports["relevance"])
    if reports["group_distribution"] is not None:
        rp.write_group_distribution(out / "group_distribution.csv", reports["group_distribution"])
    rp.write_transitions(out / "transitions.csv", reports["transitions"], K1)
    rp.write_transition_profiles(out / "transition_profiles.csv", reports["transition_profiles"], K1,
                                 reports.get("profile_label", "level2_cluster"))


def run_two_level(dataset, config):
    """
    Cluster cycles, derive per-trial transition vectors and cluster trials.

    Parameters
    ----------
    dataset : CycleDataset
    config : PipelineConfig

    Returns
    -------
    PipelineResult
    """
    if dataset.n == 0:
        raise InvalidConfig("dataset is empty")
    level1, sweep1 = _fit_or_sweep(dataset.values, config.k1, config.k1_range, config.level1)
    K1 = level1.params.K
    labels = level1.labels
    logger.info("level 1: K1=%d, BIC=%.6g", K1, level1.bic)

    index = group_by_trial(dataset)
    transitions = trial_transitions(dataset, labels, K1, index)
    zero = [v.key for v in transitions if not v.counts.any()]
    if zero:
        logger.warning("%d trial(s) have no label change; kept as zero vectors", len(zero))
    T = np.array([v.counts for v in transitions], dtype=np.float64)
    level2, sweep2 = _fit_or_sweep(T, config.k2, config.k2_range, config.level2)
    logger.info("level 2: K2=%d, BIC=%.6g", level2.params.K, level2.bic)

    result = PipelineResult(
        level1=level1,
        level1_sweep=sweep1,
        cycle_labels=labels,
        transitions=transitions,
        level2=level2,
        level2_sweep=sweep2,
        trial_labels=level2.labels,
        zero_transition_trials=zero,
    )
    result.reports = build_reports(dataset, labels, K1, level1.params.U, transitions, level2.labels,
                                   config.key_point_threshold)
    return result
