import csv
import json

import numpy as np
import pytest

from sfem.dataset import GROUPS
from sfem.errors import InvalidConfig, LabelOutOfRange
from sfem.fisher_em import FitConfig
from sfem.model import Variant
from sfem.pipeline import PipelineConfig, run_two_level, transition_features
from sfem.reports import REPORT_FILES


def test_transition_counts():
    v = transition_features([0, 0, 1, 2, 1, 1, 0], 3, key=("S1", 1, 1))
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 1] = expected[1, 2] = expected[2, 1] = expected[1, 0] = 1
    np.testing.assert_array_equal(v.matrix, expected)
    assert v.self_transitions == 2 and v.n_cycles == 7
    assert v.counts.sum() + v.self_transitions == v.n_cycles - 1
    assert v.key == ("S1", 1, 1)


def test_transition_shapes():
    assert transition_features(np.arange(11), 11).counts.shape == (121,)
    assert not transition_features([], 4).counts.any()
    assert not transition_features([2], 4).counts.any()
    assert not transition_features([1, 1, 1], 4).counts.any()
    with pytest.raises(LabelOutOfRange):
        transition_features([0, 4], 4)


@pytest.fixture(scope="module")
def small_run(small_cohort):
    ds, truth = small_cohort
    cfg = PipelineConfig(
        level1=FitConfig(seed=0, n_restarts=2, sparse_lambda=0.2),
        level2=FitConfig(seed=0, n_restarts=2, variant=Variant.SHARED_BETA),
        k1=3,
        k2=2,
    )
    return ds, truth, run_two_level(ds, cfg)


def test_run_two_level(small_run):
    ds, truth, res = small_run
    assert res.K1 == 3 and res.K2 == 2
    assert res.level1_sweep is None and res.level2_sweep is None
    assert len(res.transitions) == len(truth.trial_regimes)
    for v in res.transitions:
        assert v.counts.shape == (9,)
        assert not v.matrix.diagonal().any()
    assert res.trial_labels.shape == (len(res.transitions),)
    assert set(res.reports["group_distribution"].groups) == set(GROUPS)


def test_pipeline_outputs(tmp_path, small_run):
    ds, _, res = small_run
    res.write(tmp_path, ds)
    for name in REPORT_FILES:
        assert (tmp_path / "reports" / name).is_file(), name
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["K1"] == 3 and summary["n_cycles"] == ds.n
    with (tmp_path / "level2_labels.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(res.transitions)
    header = (tmp_path / "transitions.csv").read_text().splitlines()[0].split(",")
    assert header[-9:] == [f"from{a}_to{b}" for a in range(3) for b in range(3)]


def test_pipeline_with_sweeps(small_cohort):
    ds, _ = small_cohort
    cfg = PipelineConfig(
        level1=FitConfig(seed=1, n_restarts=1, sparse_lambda=0.2),
        level2=FitConfig(seed=1, n_restarts=1, variant=Variant.SHARED_BETA),
        k1_range=(2, 4),
        k2_range=(2, 3),
    )
    res = run_two_level(ds, cfg)
    assert res.K1 == res.level1_sweep.chosen_k
    assert res.K2 == res.level2_sweep.chosen_k


def test_pipeline_default_config():
    cfg = PipelineConfig.default(seed=3)
    assert cfg.level1.sparse_lambda == 0.2
    assert cfg.level2.variant is Variant.SHARED_BETA
    assert cfg.to_dict()["level1"]["seed"] == 3


def test_zero_transition_trials_are_kept(small_cohort):
    from sfem.dataset import CycleDataset

    ds, _ = small_cohort
    # a constant trial appended to the cohort has no label change
    values = np.vstack([ds.values, np.repeat(ds.values[:1], 4, axis=0)])
    extra = CycleDataset(values, list(ds.swimmer_id) + ["Z"] * 4, list(ds.group) + ["Pacer"] * 4,
                         list(ds.session) + [1] * 4, list(ds.trial) + [1] * 4, list(ds.cycle_index) + [0, 1, 2, 3])
    cfg = PipelineConfig(level1=FitConfig(seed=0, n_restarts=1), level2=FitConfig(seed=0, n_restarts=1, variant="SharedBeta"),
                         k1=3, k2=2)
    res = run_two_level(extra, cfg)
    assert ("Z", 1, 1) in res.zero_transition_trials
    assert len(res.trial_labels) == len(res.transitions)


def test_empty_dataset_is_rejected():
    from sfem.dataset import CycleDataset

    empty = CycleDataset(np.zeros((0, 3)), [], [], [], [], [])
    with pytest.raises(InvalidConfig):
        run_two_level(empty, PipelineConfig.default(seed=0))
