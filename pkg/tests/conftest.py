import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from glandseg.pipeline.data import SyntheticSpec, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """Six training and three test images, 64x64."""
    root = tmp_path_factory.mktemp("synth")
    spec = SyntheticSpec(seed=11)
    generate_synthetic(spec, 6, root, "train")
    generate_synthetic(spec, 3, root, "testA")
    return root
