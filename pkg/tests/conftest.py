from pathlib import Path

import numpy as np
import pytest

from vqcluster import Codebook

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def line4() -> Codebook:
    """1-D codebook with unequal gaps: rows 0, 1, 3, 7."""
    return Codebook([[0.0], [1.0], [3.0], [7.0]])


@pytest.fixture
def pair4() -> Codebook:
    """Two tight pairs far apart; the canonical 2+2 clustering example."""
    return Codebook([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])


def random_codebook(n, c, seed=0) -> Codebook:
    rng = np.random.Generator(np.random.Philox(seed))
    return Codebook(rng.standard_normal((n, c)))
