import numpy as np
import pytest

from flame_match.dataset import Dataset


@pytest.fixture
def table1():
    """The four-unit worked example: binary + ternary covariate, arity-sorted."""
    return Dataset(
        covariates=np.array([[0, 2], [1, 1], [1, 0], [1, 1]]),
        arities=np.array([2, 3]),
        treatment=np.array([0, 0, 1, 1]),
        outcome=np.array([1.0, 2.0, 3.0, 4.0]),
        covariate_names=("v1", "v2"),
        unit_ids=np.arange(4),
    )


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, header, rows):
        path = tmp_path / name
        lines = [",".join(header)]
        lines += [",".join(str(c) for c in row) for row in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def table1_csv(write_csv):
    return write_csv(
        "table1.csv",
        ["v1", "v2", "T", "Y"],
        [[0, 2, 0, 1.0], [1, 1, 0, 2.0], [1, 0, 1, 3.0], [1, 1, 1, 4.0]],
    )


def random_dataset(rng, n=None, p=None, max_arity=4):
    """Small random dataset for property tests."""
    n = n or int(rng.integers(2, 60))
    p = p or int(rng.integers(1, 6))
    arities = rng.integers(2, max_arity + 1, size=p)
    covs = np.stack([rng.integers(0, a, size=n) for a in arities], axis=1)
    return Dataset(
        covariates=covs,
        arities=arities,
        treatment=rng.integers(0, 2, size=n),
        outcome=rng.normal(size=n),
        covariate_names=tuple(f"c{i}" for i in range(p)),
        unit_ids=np.arange(n),
    )
