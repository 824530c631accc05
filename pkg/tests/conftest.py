import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roomenv.core import CameraModel


@pytest.fixture
def identity_camera():
    return CameraModel(
        fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100,
        world_to_camera=np.eye(4),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)
