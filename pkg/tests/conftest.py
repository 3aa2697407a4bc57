import numpy as np
import pytest

from uitboost.dataset import CATEGORICAL, NUMERIC, FeatureSpec, RawTable


def make_table(numeric=None, categorical=None, labels=None, label_name="status"):
    """Build a RawTable from column dicts; numeric columns first in spec order."""
    numeric = numeric or {}
    categorical = categorical or {}
    specs = []
    idx = 0
    for name in numeric:
        specs.append(FeatureSpec(name, NUMERIC, idx))
        idx += 1
    for name in categorical:
        specs.append(FeatureSpec(name, CATEGORICAL, idx))
        idx += 1
    n = len(labels)
    num = (
        np.column_stack([np.asarray(v, dtype=np.float64) for v in numeric.values()])
        if numeric
        else np.empty((n, 0))
    )
    cat = (
        np.column_stack([np.asarray(v, dtype=object) for v in categorical.values()])
        if categorical
        else np.empty((n, 0), dtype=object)
    )
    return RawTable(
        specs=tuple(specs),
        numeric=num,
        categorical=cat,
        labels=np.asarray(labels, dtype=np.int8),
        label_name=label_name,
    )


@pytest.fixture
def four_row_table():
    return make_table(
        numeric={"amount": [1.5, 2.0, 3.25, 4.0], "shares": [10, 20, 30, 40]},
        categorical={"side": ["buy", "sell", "buy", "sell"]},
        labels=[1, 1, 0, 0],
    )


def separable_matrix(n=200, m=5, separation=2.0, seed=0):
    """Numeric matrix whose first column separates the balanced classes."""
    rng = np.random.default_rng(seed)
    y = np.zeros(n, dtype=np.int8)
    y[n // 2:] = 1
    X = rng.standard_normal((n, m))
    X[:, 0] += (y - 0.5) * 2 * separation
    order = rng.permutation(n)
    return X[order], y[order]
