import numpy as np
import pytest

from esd.simdata import Dataset

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_dataset(n=100, p=2, sigma_eps=0.5, seed=0, missing=0):
    """1-D index locations, intercept + one covariate, a few unobserved sites."""
    r = np.random.default_rng(seed)
    locs = np.arange(1, n + 1, dtype=float)
    X = np.column_stack([np.ones(n)] + [r.normal(size=n) for _ in range(p - 1)])
    beta = np.arange(1, p + 1, dtype=float)
    y = X @ beta
    obs = np.sort(r.choice(n, n - missing, replace=False))
    z = y[obs] + r.normal(0.0, sigma_eps, obs.size)
    return Dataset.build(locs, obs, z, X, truth=y, holdout_idx=np.setdiff1d(np.arange(n), obs))


@pytest.fixture
def small_data():
    return linear_dataset(n=60, p=2, seed=3, missing=6)
