import os
import sys

import numpy as np
import pytest

# Packages live at the repository root
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from fields.grid import GridSpec, LabelVolume, PARENCHYMA, SKULL, CSF, EDEMA, TUMOR
from simulation.phantom import make_phantom

RUN_ACCEPTANCE = os.getenv('BRAINSHIFT_RUN_ACCEPTANCE', '0') == '1'


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance runs (set BRAINSHIFT_RUN_ACCEPTANCE=1)")


def pytest_collection_modifyitems(config, items):
    if RUN_ACCEPTANCE:
        return
    skip_slow = pytest.mark.skip(reason="acceptance run; set BRAINSHIFT_RUN_ACCEPTANCE=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return GridSpec((8, 8, 8), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))


@pytest.fixture
def aniso_grid():
    return GridSpec((10, 12, 9), (1.5, 1.0, 2.0), (-3.0, 2.0, 5.0))


@pytest.fixture
def cube_labels():
    """16^3 label map: skull shell, parenchyma block, edema ring, tumor core"""
    grid = GridSpec((16, 16, 16))
    labels = np.zeros(grid.dims, dtype=np.uint8)
    labels[1:15, 1:15, 1:15] = SKULL
    labels[2:14, 2:14, 2:14] = CSF
    labels[3:13, 3:13, 3:13] = PARENCHYMA
    labels[6:10, 6:10, 6:10] = EDEMA
    labels[7:9, 7:9, 7:9] = TUMOR
    return LabelVolume(grid, labels)


@pytest.fixture(scope='session')
def phantom32():
    return make_phantom(GridSpec((32, 32, 32), (3.5, 3.5, 3.5)), seed=7)
