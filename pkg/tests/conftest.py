import numpy as np
import pytest

from cafe.data import PredictionSet, TrialDataset


def make_trial(n=120, p=3, seed=0, tau=1.0, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 5, size=(n, p))
    a = np.tile([0, 1], n // 2 + 1)[:n]
    rng.shuffle(a)
    y = X.sum(axis=1) + tau * a + noise * rng.standard_normal(n)
    return TrialDataset(X, a, y)


@pytest.fixture
def trial():
    return make_trial()


@pytest.fixture
def trial_preds(trial):
    rng = np.random.default_rng(1)
    return PredictionSet(np.full(trial.n, 1.0), rng.uniform(0.2, 0.8, trial.n))


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write


# One line per acceptance criterion, echoed at the end of the run.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
