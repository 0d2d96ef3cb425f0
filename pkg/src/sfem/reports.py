"""
Summary tables of a clustering: per-cluster mean patterns, cluster
distribution across learning groups, mean transition profiles and the
relevance profile of the projection. Each table has a CSV writer laid out
for direct plotting.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import GROUPS, CsvSchema
from .errors import MissingGroup

logger = logging.getLogger(__name__)

REPORT_FILES = (
    "mean_patterns.csv",
    "relevance_profile.csv",
    "key_points.csv",
    "group_distribution.csv",
    "transitions.csv",
    "transition_profiles.csv",
)


@dataclass(frozen=True, eq=False)
class ClusterPattern:
    label: int
    mean: np.ndarray
    sd: np.ndarray
    count: int


def cluster_mean_patterns(values, labels, K=None):
    """
    Mean and population standard deviation of every feature per cluster.

    Clusters without members are left out (and logged).
    """
    values = np.asarray(getattr(values, "values", values), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K = int(labels.max(initial=-1)) + 1 if K is None else K
    out = []
    for k in range(K):
        rows = values[labels == k]
        if rows.shape[0] == 0:
            logger.warning("cluster %d has no members; omitted from mean patterns", k)
            continue
        out.append(ClusterPattern(k, rows.mean(axis=0), rows.std(axis=0), rows.shape[0]))
    return out


@dataclass(frozen=True, eq=False)
class GroupDistribution:
    """``percent[k, g]``: share (in %) of cluster ``clusters[k]`` cycles in group ``groups[g]``."""

    clusters: list
    groups: tuple
    counts: np.ndarray
    percent: np.ndarray

    @property
    def totals(self):
        return self.percent.sum(axis=1)


def group_distribution(labels, groups, K=None, group_names=GROUPS):
    """Row-percentage table of clusters against learning groups."""
    labels = np.asarray(labels, dtype=np.int64)
    groups = list(groups)
    if len(groups) != labels.size:
        raise MissingGroup("need one group per labelled cycle")
    missing = [i for i, g in enumerate(groups) if g is None or g == ""]
    if missing:
        raise MissingGroup(f"{len(missing)} cycle(s) without a learning group, first at row {missing[0]}")
    col = {g: j for j, g in enumerate(group_names)}
    unknown = sorted(set(groups) - set(col))
    if unknown:
        raise MissingGroup(f"unknown group(s) {unknown}")
    K = int(labels.max(initial=-1)) + 1 if K is None else K
    counts = np.zeros((K, len(group_names)), dtype=np.int64)
    np.add.at(counts, (labels, [col[g] for g in groups]), 1)
    keep = counts.sum(axis=1) > 0
    for k in np.flatnonzero(~keep):
        logger.warning("cluster %d has no members; omitted from group distribution", k)
    counts = counts[keep]
    percent = 100.0 * counts / counts.sum(axis=1, keepdims=True)
    return GroupDistribution(np.flatnonzero(keep).tolist(), tuple(group_names), counts, percent)


def transition_profile(transition_vectors, level2_labels):
    """
    Mean transition vector of every level-2 cluster.

    Returns
    -------
    dict
        ``label -> (mean vector, number of trials)``, keys sorted.
    """
    V = np.asarray([getattr(v, "counts", v) for v in transition_vectors], dtype=np.float64)
    labels = list(level2_labels)
    if len(labels) != V.shape[0]:
        raise ValueError("need one level-2 label per transition vector")
    out = {}
    for lab in sorted(set(labels)):
        rows = [i for i, l in enumerate(labels) if l == lab]
        out[lab] = (V[rows].mean(axis=0), len(rows))
    return out


# --------------------------------------------------------------------------
# CSV writers


def _writer(path):
    fh = Path(path).open("w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _num(x):
    return repr(float(x))


def write_mean_patterns(path, patterns, p):
    fh, w = _writer(path)
    with fh:
        w.writerow(["cluster", "statistic", "count"] + CsvSchema().phase_columns(p))
        for pat in patterns:
            w.writerow([pat.label, "mean", pat.count] + [_num(v) for v in pat.mean])
            w.writerow([pat.label, "sd", pat.count] + [_num(v) for v in pat.sd])


def write_group_distribution(path, dist):
    """Cluster x group percentages with a total column, two decimals."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["cluster", *dist.groups, "total"])
        for k, row in zip(dist.clusters, dist.percent):
            w.writerow([k] + [f"{v:.2f}" for v in row] + [f"{row.sum():.2f}"])


def transition_columns(K1):
    return [f"from{a}_to{b}" for a in range(K1) for b in range(K1)]


def write_transitions(path, vectors, K1):
    fh, w = _writer(path)
    with fh:
        w.writerow(["swimmer_id", "session", "trial", "n_cycles", "self_transitions"] + transition_columns(K1))
        for v in vectors:
            w.writerow([v.key[0], v.key[1], v.key[2], v.n_cycles, v.self_transitions] + [int(c) for c in v.counts])


def write_transition_profiles(path, profiles, K1, label_name="level2_cluster"):
    fh, w = _writer(path)
    with fh:
        w.writerow([label_name, "n_trials"] + transition_columns(K1))
        for lab, (mean, count) in profiles.items():
            w.writerow([lab, count] + [_num(v) for v in mean])


def write_relevance_profile(path, profile):
    names = CsvSchema().phase_columns(len(profile.r))
    fh, w = _writer(path)
    with fh:
        w.writerow(["feature_index", "feature", "relevance", "scaled"])
        for i, (r, s) in enumerate(zip(profile.r, profile.scaled)):
            w.writerow([i, names[i], _num(r), _num(s)])


def write_key_points(path, indices, profile):
    names = CsvSchema().phase_columns(len(profile.r))
    fh, w = _writer(path)
    with fh:
        w.writerow(["feature_index", "feature", "relevance"])
        for i in indices:
            w.writerow([int(i), names[i], _num(profile.r[i])])
