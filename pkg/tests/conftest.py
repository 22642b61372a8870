import numpy as np
import pytest

from claimsreg.ingest import AnalysisDataset
from claimsreg.synth import ScenarioSpec, generate_cohort


def make_dataset(n=200, q=2, p=6, codes=None, seed=0, outcomes=("y1",)):
    """Random binary-claims dataset with a logistic treatment mechanism."""
    rng = np.random.default_rng(seed)
    codes = list(codes) if codes is not None else [f"{400 + j // 2}{j % 2}" for j in range(p)]
    B = rng.normal(size=(n, q)) * 3.0 + 1.0
    C = (rng.uniform(size=(n, len(codes))) < 0.3).astype(np.int8)
    eta = 0.3 + 0.2 * B[:, 0] if q else np.full(n, 0.3)
    eta = eta + C @ rng.normal(scale=0.5, size=len(codes))
    X = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(np.int64)
    Y = {name: (rng.uniform(size=n) < 0.3).astype(np.int64) for name in outcomes}
    ids = [f"s{i}" for i in range(n)]
    return AnalysisDataset(ids, X, Y, B, C, [f"b{k}" for k in range(q)], codes)


@pytest.fixture
def small_dataset():
    return make_dataset()


@pytest.fixture(scope="session")
def desk_cohort():
    return generate_cohort(ScenarioSpec.desk(seed=1))


# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
