import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import random_orthonormal, random_params

from sfem.dataset import GROUPS, CycleDataset, load_cycles, write_cycles
from sfem.errors import SparsityError
from sfem.fisher_em import PosteriorMatrix, e_step, f_step, fisher_criterion, plateau_choice, scatter_stats
from sfem.model import DlmParams
from sfem.pipeline import transition_features
from sfem.reports import group_distribution
from sfem.sparse import relevance_profile, sparsify_projection, support

seeds = st.integers(0, 2**32 - 1)


@given(seed=seeds, p=st.integers(3, 10), K=st.integers(2, 4), scale=st.floats(0.1, 100))
@settings(max_examples=40, deadline=None)
def test_posteriors_are_normalised(seed, p, K, scale):
    rng = np.random.default_rng(seed)
    d = min(K - 1, p - 1)
    U, pi, mu, sigma, beta, center = random_params(rng, p, d, K)
    post = e_step(DlmParams(U, pi, mu, sigma, beta, center=center), scale * rng.standard_normal((30, p)))
    assert np.abs(post.o.sum(axis=1) - 1).max() <= 1e-12
    assert (post.o >= 0).all()


@given(seed=seeds, p=st.integers(4, 12), d=st.integers(1, 3), lam=st.floats(0, 0.95))
@settings(max_examples=60, deadline=None)
def test_sparsify_is_orthonormal(seed, p, d, lam):
    U = random_orthonormal(np.random.default_rng(seed), p, d)
    try:
        V = sparsify_projection(U, lam)
    except SparsityError:
        return
    assert np.abs(V.T @ V - np.eye(d)).max() <= 1e-10
    prof = relevance_profile(V)
    off = np.setdiff1d(np.arange(p), support(V))
    assert not prof.r[off].any()


@given(seed=seeds, n=st.integers(12, 60), K=st.integers(2, 4))
@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_f_step_dominates_random_frames(seed, n, K):
    rng = np.random.default_rng(seed)
    p = 5
    Y = rng.standard_normal((n, p)) + 3 * rng.integers(0, K, size=(n, 1))
    stats = scatter_stats(Y, PosteriorMatrix(rng.dirichlet(np.ones(K), size=n)))
    d = K - 1
    J = fisher_criterion(f_step(stats, d), stats)
    for _ in range(20):
        assert J >= fisher_criterion(random_orthonormal(rng, p, d), stats) - 1e-9


@given(labels=st.lists(st.integers(0, 4), max_size=40))
def test_transition_vector_invariants(labels):
    v = transition_features(labels, 5)
    assert v.counts.shape == (25,)
    assert not v.matrix.diagonal().any()
    assert v.counts.sum() + v.self_transitions == max(len(labels) - 1, 0)


@given(data=st.lists(st.tuples(st.integers(0, 10), st.sampled_from(GROUPS)), min_size=1, max_size=200))
def test_group_rows_sum_to_100(data):
    labels, groups = zip(*data)
    dist = group_distribution(labels, groups, K=11)
    assert np.abs(dist.totals - 100).max() <= 0.01
    assert dist.counts.sum() == len(data)


@given(bics=st.lists(st.floats(-1e7, 1e7), min_size=1, max_size=16))
def test_plateau_choice_is_within_band(bics):
    ks = list(range(2, 2 + len(bics)))
    k = plateau_choice(ks, bics)
    b = np.array(bics)
    assert b[k - 2] >= b.max() - 0.01 * (b.max() - b.min())
    assert all(b[j - 2] < b.max() - 0.01 * (b.max() - b.min()) for j in ks if j < k)


@given(values=arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)),
                     elements=st.floats(-180, 180, allow_nan=False)))
@settings(max_examples=30, deadline=None)
def test_csv_roundtrip(tmp_path_factory, values):
    n = values.shape[0]
    ds = CycleDataset(values, ["S1"] * n, ["Pacer"] * n, [1] * n, [1] * n, list(range(n)))
    path = tmp_path_factory.mktemp("rt") / "c.csv"
    write_cycles(ds, path)
    assert load_cycles(path).equals(ds)
