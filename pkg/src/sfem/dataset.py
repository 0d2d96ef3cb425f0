"""
Cycle-level datasets: CSV ingestion, validation, trial grouping and a
synthetic cohort generator.

A dataset holds one row per movement cycle. Each row carries ``p`` samples
of continuous relative phase (degrees, in ``[-180, 180]``) plus the keys
identifying the swimmer, learning group, session, trial and the position of
the cycle inside its trial.

CSV layout
----------
``swimmer_id, group, session, trial, cycle_index, phi_001, ..., phi_p``

Values are written with ``repr`` so that a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DuplicateCycleKey,
    EmptyFile,
    InvalidConfig,
    MissingColumn,
    MissingGroup,
    OutOfRangePhase,
)

logger = logging.getLogger(__name__)

GROUPS = ("Control", "Analogy", "Pacer", "Prescription")
PHASE_MIN = -180.0
PHASE_MAX = 180.0

TrialKey = tuple  # (swimmer_id, session, trial)


@dataclass(frozen=True)
class CsvSchema:
    """Column naming used by :func:`load_cycles` and :func:`write_cycles`."""

    swimmer: str = "swimmer_id"
    group: str = "group"
    session: str = "session"
    trial: str = "trial"
    cycle: str = "cycle_index"
    phase_prefix: str = "phi_"

    def meta_columns(self):
        return [self.swimmer, self.group, self.session, self.trial, self.cycle]

    def phase_columns(self, p):
        width = max(3, len(str(p)))
        return [f"{self.phase_prefix}{j:0{width}d}" for j in range(1, p + 1)]


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CycleDataset:
    """
    Phase samples of ``n`` cycles with their per-row metadata.

    Parameters
    ----------
    values : array_like, shape (n, p)
        Relative phase samples in degrees.
    swimmer_id, group, session, trial, cycle_index : array_like, shape (n,)
        Row metadata. ``group`` entries may be ``None`` unless
        ``require_groups`` is set.
    require_groups : bool
        Reject rows without a learning group.
    """

    values: np.ndarray
    swimmer_id: np.ndarray
    group: np.ndarray
    session: np.ndarray
    trial: np.ndarray
    cycle_index: np.ndarray
    require_groups: bool = field(default=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1 and values.size == 0:
            values = values.reshape(0, 0)
        if values.ndim != 2:
            raise DataError(f"values must be a 2-D array, got shape {values.shape}")
        n = values.shape[0]
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "swimmer_id", _frozen([str(s) for s in self.swimmer_id], dtype=object))
        object.__setattr__(self, "group", _frozen([g if g not in ("", None) else None for g in self.group], dtype=object))
        for name in ("session", "trial", "cycle_index"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))
        for name in ("swimmer_id", "group", "session", "trial", "cycle_index"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"metadata column {name!r} has {len(getattr(self, name))} entries, expected {n}")
        self._validate()

    def _validate(self):
        v = self.values
        bad = ~np.isfinite(v) | (v < PHASE_MIN) | (v > PHASE_MAX)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise OutOfRangePhase(int(row), float(v[row, col]),
                                  f"row {row}, feature {col + 1}: phase value {v[row, col]!r} "
                                  f"is not a finite value in [-180, 180]")
        if (self.session < 1).any() or (self.trial < 1).any():
            raise DataError("session and trial numbers must be >= 1")
        if (self.cycle_index < 0).any():
            raise DataError("cycle_index must be >= 0")
        for i, g in enumerate(self.group):
            if g is None:
                if self.require_groups:
                    raise MissingGroup(f"row {i}: missing learning group")
            elif g not in GROUPS:
                raise DataError(f"row {i}: unknown group {g!r}; expected one of {GROUPS}")
        seen = {}
        for i, key in enumerate(zip(self.swimmer_id, self.session, self.trial, self.cycle_index)):
            if key in seen:
                raise DuplicateCycleKey(f"rows {seen[key]} and {i} share (swimmer, session, trial, cycle) = {key}")
            seen[key] = i

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    @property
    def has_groups(self):
        return self.n > 0 and all(g is not None for g in self.group)

    def trial_key(self, i):
        return (str(self.swimmer_id[i]), int(self.session[i]), int(self.trial[i]))

    def equals(self, other, atol=0.0):
        """Exact metadata equality and value equality up to ``atol``."""
        if not isinstance(other, CycleDataset) or self.values.shape != other.values.shape:
            return False
        if atol == 0.0:
            same_values = np.array_equal(self.values, other.values)
        else:
            same_values = np.allclose(self.values, other.values, rtol=0.0, atol=atol)
        return same_values and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("swimmer_id", "group", "session", "trial", "cycle_index")
        )


def load_cycles(path, schema=None, p=None, require_groups=False):
    """
    Read a cycle CSV file.

    Parameters
    ----------
    path : str or Path
    schema : CsvSchema, optional
    p : int, optional
        Required number of phase columns. Inferred from the header when omitted.
    require_groups : bool
        Reject rows with an empty ``group`` field.

    Returns
    -------
    CycleDataset
        Rows in file order.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.meta_columns() if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {missing}")
        phase_cols = [h for h in header if h.startswith(schema.phase_prefix)]
        n_phase = len(phase_cols) if p is None else p
        if n_phase == 0:
            raise MissingColumn(f"{path}: no phase columns with prefix {schema.phase_prefix!r}")
        expected = schema.phase_columns(n_phase)
        absent = [c for c in expected if c not in header]
        if absent:
            raise MissingColumn(f"{path}: missing phase column(s) {absent[:5]}{'...' if len(absent) > 5 else ''}")
        if p is not None and len(phase_cols) != p:
            extra = sorted(set(phase_cols) - set(expected))
            raise MissingColumn(f"{path}: expected exactly {p} phase columns, found extra {extra[:5]}")
        meta_idx = [header.index(c) for c in schema.meta_columns()]
        phase_idx = [header.index(c) for c in expected]

        values, swimmer, group, session, trial, cycle = [], [], [], [], [], []
        for row_no, row in enumerate(reader):
            if not row or all(not c.strip() for c in row):
                continue
            line = reader.line_num
            if len(row) != len(header):
                raise DataError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")
            try:
                s, g, se, tr, cy = (row[i].strip() for i in meta_idx)
                session.append(int(se))
                trial.append(int(tr))
                cycle.append(int(cy))
                vals = [float(row[i]) for i in phase_idx]
            except ValueError as exc:
                raise DataError(f"{path}: line {line}: {exc}") from None
            swimmer.append(s)
            group.append(g or None)
            values.append(vals)
    if not values:
        raise EmptyFile(f"{path}: header present but no data rows")
    try:
        return CycleDataset(np.array(values, dtype=np.float64), swimmer, group, session, trial, cycle,
                            require_groups=require_groups)
    except OutOfRangePhase as exc:
        raise OutOfRangePhase(exc.row, exc.value, f"{path}: {exc}") from None


def write_cycles(dataset, path, schema=None):
    """Write ``dataset`` as CSV; floats use ``repr`` for an exact round trip."""
    schema = schema or CsvSchema()
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.meta_columns() + schema.phase_columns(dataset.p))
        for i in range(dataset.n):
            g = dataset.group[i]
            writer.writerow(
                [dataset.swimmer_id[i], "" if g is None else g, int(dataset.session[i]),
                 int(dataset.trial[i]), int(dataset.cycle_index[i])]
                + [repr(float(x)) for x in dataset.values[i]]
            )


def group_by_trial(dataset):
    """
    Map each ``(swimmer_id, session, trial)`` key to its row indices.

    Keys appear in order of first occurrence; indices inside a trial are
    ordered by ``cycle_index``.
    """
    buckets = {}
    for i in range(dataset.n):
        buckets.setdefault(dataset.trial_key(i), []).append(i)
    cyc = dataset.cycle_index
    return {
        key: np.array(sorted(rows, key=lambda r: cyc[r]), dtype=np.int64)
        for key, rows in buckets.items()
    }


# --------------------------------------------------------------------------
# synthetic cohorts


@dataclass(frozen=True)
class SyntheticConfig:
    """
    Generator settings for a planted discriminative-latent-mixture cohort.

    ``n`` fixes the total number of cycles (trials are laid out in
    swimmer/session/trial order and the last one is truncated); when it is
    ``None`` the cohort size follows from ``n_swimmers * n_sessions * n_trials``
    and the sampled trial lengths. ``regimes=0`` draws cycle labels i.i.d.
    from ``mixing``; ``regimes=R`` gives each trial one of ``R`` first-order
    transition kernels.
    """

    K: int = 4
    d: int | None = None
    p: int = 100
    n: int | None = None
    n_swimmers: int = 24
    n_sessions: int = 16
    n_trials: int = 10
    trial_len_range: tuple = (6, 10)
    regimes: int = 0
    regime_strength: float = 0.7
    self_transition: float = 0.1
    beta: float = 25.0
    sigma: float = 5.0
    separation: float = 5.0
    planted_features: object = None
    mixing: tuple | None = None
    group_affinity: float = 0.0
    template: object = "breaststroke"

    @property
    def latent_dim(self):
        return self.K - 1 if self.d is None else self.d

    def to_dict(self):
        out = asdict(self)
        out["trial_len_range"] = list(self.trial_len_range)
        for key in ("planted_features", "mixing", "template"):
            if isinstance(out[key], (tuple, np.ndarray)):
                out[key] = [v.item() if hasattr(v, "item") else v for v in out[key]]
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("trial_len_range", "mixing"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        if isinstance(data.get("planted_features"), list):
            data["planted_features"] = tuple(data["planted_features"])
        if isinstance(data.get("template"), list):
            data["template"] = tuple(data["template"])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class SyntheticGroundTruth:
    """Planted structure behind a generated dataset."""

    cycle_labels: np.ndarray
    trial_regimes: dict
    planted_features: tuple
    projection: np.ndarray
    latent_means: np.ndarray
    template: np.ndarray
    config: SyntheticConfig
    seed: int

    def to_dict(self):
        return {
            "cycle_labels": [int(v) for v in self.cycle_labels],
            "trial_regimes": [
                {"swimmer_id": k[0], "session": k[1], "trial": k[2], "regime": int(r)}
                for k, r in self.trial_regimes.items()
            ],
            "planted_features": [int(j) for j in self.planted_features],
            "config": self.config.to_dict(),
            "seed": int(self.seed),
        }

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def breaststroke_template(p):
    """A smooth anti-phase/in-phase relative phase curve over one cycle (degrees)."""
    t = np.arange(p) / p
    return -110.0 * np.cos(2 * np.pi * t) + 35.0 * np.sin(4 * np.pi * t) - 20.0


def regime_kernel(regime, K, strength=0.7, stay=0.1):
    """
    Transition kernel of regime ``regime``: state ``a`` moves to
    ``(a + regime + 1) % K`` with probability ``strength``, stays with
    probability ``stay`` and spreads the rest uniformly. Distinct regimes use
    disjoint preferred edges.
    """
    shift = regime + 1
    P = np.zeros((K, K))
    others = K - 2
    for a in range(K):
        succ = (a + shift) % K
        rest = 1.0 - strength - stay
        if others > 0:
            P[a] = rest / others
        P[a, a] = stay
        P[a, succ] = strength
        if others == 0:
            P[a, succ] += rest
    return P


def _simplex(K, d, edge):
    # vertices of a regular simplex with the given edge length, in R^(K-1)
    E = np.eye(K) - 1.0 / K
    Q, _ = np.linalg.qr(E)
    coords = E @ Q[:, : K - 1]
    coords *= edge / np.sqrt(2.0)
    return coords[:, :d]


def _planted_projection(rng, p, d, support):
    U = np.zeros((p, d))
    if d == 0:
        return U
    A = rng.standard_normal((len(support), d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    # symmetric orthonormalisation keeps row norms close to balanced
    w, V = np.linalg.eigh(A.T @ A)
    U[support] = A @ (V / np.sqrt(w)) @ V.T
    return U


def _check_config(cfg):
    K, d, p = cfg.K, cfg.latent_dim, cfg.p
    if K < 1:
        raise InvalidConfig("K must be >= 1")
    if K == 1 and d != 0:
        raise InvalidConfig("K=1 requires d=0")
    if K >= 2 and not 1 <= d <= K - 1:
        raise InvalidConfig(f"need 1 <= d <= K-1, got d={d}, K={K}")
    if p <= d:
        raise InvalidConfig(f"need p > d, got p={p}, d={d}")
    lo, hi = cfg.trial_len_range
    if not 1 <= lo <= hi:
        raise InvalidConfig(f"invalid trial_len_range {cfg.trial_len_range}")
    if cfg.regimes < 0 or (cfg.regimes > 0 and cfg.regimes > max(K - 1, 0)):
        raise InvalidConfig(f"regimes must be in [0, K-1], got {cfg.regimes}")
    if cfg.beta < 0 or cfg.sigma < 0:
        raise InvalidConfig("beta and sigma must be non-negative")
    if not 0 <= cfg.group_affinity < 1:
        raise InvalidConfig("group_affinity must be in [0, 1)")
    if cfg.regime_strength + cfg.self_transition > 1:
        raise InvalidConfig("regime_strength + self_transition must not exceed 1")
    if cfg.mixing is not None:
        pi = np.asarray(cfg.mixing, dtype=float)
        if pi.shape != (K,) or (pi < 0).any() or not math.isclose(pi.sum(), 1.0, abs_tol=1e-9):
            raise InvalidConfig("mixing must be K non-negative proportions summing to 1")


def _trial_layout(cfg, rng):
    """Yield (swimmer_idx, session, trial, length) until the cohort is complete."""
    lo, hi = cfg.trial_len_range
    per_swimmer = cfg.n_sessions * cfg.n_trials
    total = 0
    t = 0
    while True:
        s, rem = divmod(t, per_swimmer)
        if cfg.n is None and s >= cfg.n_swimmers:
            return
        session, trial = divmod(rem, cfg.n_trials)
        length = int(rng.integers(lo, hi + 1))
        if cfg.n is not None:
            length = min(length, cfg.n - total)
            if length <= 0:
                return
        total += length
        yield s, session + 1, trial + 1, length
        t += 1


def generate_synthetic(config=None, seed=0):
    """
    Draw a cohort of cycles from a planted mixture ``y = template + U x + eps``.

    The projection ``U`` is supported on ``planted_features`` only, latent
    means sit on a regular simplex (``d = K - 1``) or on random points scaled
    to the requested separation, latent covariances are ``sigma**2 * I`` and
    the noise is spherical with variance ``beta`` in the complement of
    ``span(U)``.

    Returns
    -------
    dataset : CycleDataset
    truth : SyntheticGroundTruth
    """
    cfg = config or SyntheticConfig()
    _check_config(cfg)
    K, d, p = cfg.K, cfg.latent_dim, cfg.p
    rng = np.random.default_rng(seed)

    if cfg.planted_features is None:
        support = np.arange(p)
    elif isinstance(cfg.planted_features, (int, np.integer)):
        if not d <= cfg.planted_features <= p:
            raise InvalidConfig(f"planted feature count must be in [d, p], got {cfg.planted_features}")
        support = np.sort(rng.choice(p, size=int(cfg.planted_features), replace=False))
    else:
        support = np.array(sorted(set(int(j) for j in cfg.planted_features)), dtype=np.int64)
        if len(support) < d or support.min(initial=0) < 0 or support.max(initial=0) >= p:
            raise InvalidConfig("planted_features must hold at least d valid feature indices")
    U = _planted_projection(rng, p, d, support)

    if d == 0:
        means = np.zeros((K, 0))
    elif d == K - 1:
        means = _simplex(K, d, cfg.separation * cfg.sigma)
    else:
        means = rng.standard_normal((K, d))
        dist = np.linalg.norm(means[:, None] - means[None], axis=-1)
        dmin = dist[np.triu_indices(K, 1)].min()
        means *= cfg.separation * cfg.sigma / dmin
        means -= means.mean(axis=0)

    if isinstance(cfg.template, str):
        if cfg.template == "breaststroke":
            template = breaststroke_template(p)
        elif cfg.template == "zero":
            template = np.zeros(p)
        else:
            raise InvalidConfig(f"unknown template {cfg.template!r}")
    else:
        template = np.asarray(cfg.template, dtype=float)
        if template.shape != (p,):
            raise InvalidConfig(f"template must have length p={p}")

    pi = np.full(K, 1.0 / K) if cfg.mixing is None else np.asarray(cfg.mixing, dtype=float)
    kernels = [regime_kernel(r, K, cfg.regime_strength, cfg.self_transition) for r in range(cfg.regimes)]
    a = cfg.group_affinity

    swimmer, group, session, trial, cycle, labels = [], [], [], [], [], []
    trial_regimes = {}
    width = max(2, len(str(cfg.n_swimmers)))
    for s, se, tr, length in _trial_layout(cfg, rng):
        sid = f"S{s + 1:0{width}d}"
        g = s % len(GROUPS)
        favoured = np.zeros(K)
        favoured[g % K] = 1.0
        if kernels:
            r = int(rng.integers(cfg.regimes))
            P = kernels[r]
        else:
            r = 0
            P = np.tile(pi, (K, 1))
        P = (1 - a) * P + a * favoured
        start = (1 - a) * pi + a * favoured
        z = int(rng.choice(K, p=start))
        for c in range(length):
            if c > 0:
                z = int(rng.choice(K, p=P[z]))
            swimmer.append(sid)
            group.append(GROUPS[g])
            session.append(se)
            trial.append(tr)
            cycle.append(c)
            labels.append(z)
        trial_regimes[(sid, se, tr)] = r

    labels = np.array(labels, dtype=np.int64)
    n = len(labels)
    if n < K:
        raise InvalidConfig(f"cohort has n={n} cycles, fewer than K={K}")
    x = means[labels] + cfg.sigma * rng.standard_normal((n, d))
    g = rng.standard_normal((n, p))
    eps = np.sqrt(cfg.beta) * (g - (g @ U) @ U.T)
    values = template + x @ U.T + eps
    if np.abs(values).max(initial=0.0) > PHASE_MAX:
        raise InvalidConfig("generated phases leave [-180, 180]; lower sigma, beta or separation")

    dataset = CycleDataset(values, swimmer, group, session, trial, cycle)
    truth = SyntheticGroundTruth(
        cycle_labels=_frozen(labels),
        trial_regimes=trial_regimes,
        planted_features=tuple(int(j) for j in support),
        projection=_frozen(U),
        latent_means=_frozen(means),
        template=_frozen(template),
        config=cfg,
        seed=int(seed),
    )
    return dataset, truth
