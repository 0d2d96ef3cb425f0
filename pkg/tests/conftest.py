import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sfem.dataset import SyntheticConfig, generate_synthetic  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    """A small grouped cohort with planted regimes (about 600 cycles)."""
    cfg = SyntheticConfig(K=3, p=20, n_swimmers=8, n_sessions=3, n_trials=4, regimes=2, planted_features=8)
    return generate_synthetic(cfg, seed=7)


@pytest.fixture(scope="session")
def blobs():
    """Well separated DLM data, K=3, p=12, n=300."""
    ds, truth = generate_synthetic(SyntheticConfig(K=3, p=12, n=300, template="zero"), seed=3)
    return np.array(ds.values), np.asarray(truth.cycle_labels)


@pytest.fixture
def acceptance_report():
    """Record one line per acceptance criterion; printed in the terminal summary."""

    def record(name, passed, detail=""):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        print(ACCEPTANCE_LINES[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
