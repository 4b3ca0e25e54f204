import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flimseg.volume import Volume  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def rand_volume(rng, channels, dims, scale=1.0):
    return Volume(scale * rng.standard_normal((channels,) + tuple(dims)).astype(np.float32))
