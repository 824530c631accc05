import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hypersim_fixture import make_scene  # noqa: E402


@pytest.fixture(scope="session")
def hypersim_root(tmp_path_factory):
    """One fully populated synthetic scene in Hypersim layout."""
    root = tmp_path_factory.mktemp("hypersim")
    make_scene(root, "ai_001_001")
    return root
