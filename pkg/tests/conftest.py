import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from emkit.stubserver import StubCutoutServer
from emkit.volume import Extent3D, Volume3D

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(20150901)


def random_volume(rng, nx, ny, nz, origin=(0, 0, 0)):
    extent = Extent3D.from_shape(nx, ny, nz, origin)
    return Volume3D(extent, rng.integers(0, 256, extent.volume_count, dtype=np.uint8))


@pytest.fixture(scope="session")
def served_volume():
    """Known 8x8x100 volume behind the stub cutout server."""
    r = np.random.default_rng(1850)
    return Volume3D(Extent3D(0, 8, 0, 8, 0, 100), r.integers(0, 256, 6400, dtype=np.uint8))


@pytest.fixture
def stub(served_volume):
    with StubCutoutServer(served_volume) as srv:
        yield srv


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
