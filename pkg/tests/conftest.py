import numpy as np
import pytest

from ecborrow import Dataset, Schema, write_csv
from ecborrow.simulation import example1_dataset, synthetic_nsw_psid


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def toy_dataset():
    # 10 rows, d=2: 4 treated, 5 controls, 1 EC
    X = np.array([[0.1, 1.0], [0.5, -0.2], [1.2, 0.3], [0.7, 0.9],
                  [-0.4, 0.8], [0.9, -1.1], [0.0, 0.0], [0.3, 0.6],
                  [-0.7, 0.2], [0.2, -0.5]])
    a = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0], dtype=float)
    r = np.array([1, 1, 1, 1, 1, 1, 1, 1, 1, 0], dtype=float)
    y = X @ np.array([1.0, 0.5]) + a * 2.0 + np.array(
        [0.05, -0.02, 0.01, 0.04, 0.03, -0.04, 0.02, 0.0, -0.01, 0.02])
    return Dataset(covariates=X, treatment=a, outcome=y, source=r)


@pytest.fixture
def example1(rng):
    return example1_dataset(rng)


@pytest.fixture
def nsw_standin(rng):
    return synthetic_nsw_psid(rng)


@pytest.fixture
def nsw_csv(tmp_path, nsw_standin):
    schema = Schema(covariates=nsw_standin.column_names, treatment="treat",
                    outcome="re78", source="study")
    path = tmp_path / "nsw_psid.csv"
    write_csv(path, nsw_standin, schema)
    return path, schema


def make_random_dataset(rng, n_rct=40, n_treated=20, n_ec=15, d=3):
    """Small random dataset satisfying all invariants."""
    n = n_rct + n_ec
    X = rng.normal(size=(n, d))
    r = np.concatenate([np.ones(n_rct), np.zeros(n_ec)])
    a = np.zeros(n)
    a[rng.choice(n_rct, size=n_treated, replace=False)] = 1.0
    beta = rng.normal(size=d)
    y = X @ beta + a * rng.normal(1.0, 0.5) + rng.normal(size=n)
    return Dataset(covariates=X, treatment=a, outcome=y, source=r)
