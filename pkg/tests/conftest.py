import numpy as np
import pytest

from app.lab.constructions import BlockConstruction, block_family, four_lines_family, orthogonal_axes


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def axes():
    return orthogonal_axes(2)


@pytest.fixture
def four_lines():
    return four_lines_family(0.1)


@pytest.fixture(scope="session")
def small_blocks():
    cfg = BlockConstruction.slow_blocks(epsilon=0.25, M=50)
    F, x0 = block_family(cfg)
    return cfg, F, x0

