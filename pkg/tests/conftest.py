import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("ci", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("ci")

DATA_ROOT = os.environ.get("MAGNA_DATA", os.path.join(os.path.dirname(__file__), "..", "data"))


def dataset_dir(name: str) -> str:
    return os.path.join(DATA_ROOT, name)


def require_dataset(name: str) -> str:
    """Skip unless the named dataset directory exists (see scripts/fetch_*)."""
    path = dataset_dir(name)
    if not os.path.isdir(path):
        pytest.skip(f"dataset {name!r} not found under {DATA_ROOT}; run scripts/fetch_{name}.py")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tmp_dataset_dir(tmp_path):
    return str(tmp_path)
