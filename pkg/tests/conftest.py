import json

import numpy as np
import pytest

from fives.synthetic import make_xor


@pytest.fixture
def write_csv(tmp_path):
    """Write ``rows`` (list of lists, header first) to a CSV and return its path."""

    def _write(rows, name="data.csv"):
        path = tmp_path / name
        path.write_text("\n".join(",".join(str(c) for c in r) for r in rows) + "\n", encoding="utf-8")
        return path

    return _write


@pytest.fixture
def write_json(tmp_path):
    def _write(payload, name):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return path

    return _write


@pytest.fixture(scope="session")
def xor_table():
    return make_xor(2000, noise=0.05, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
