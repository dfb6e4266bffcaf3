import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from scenemem.geometry import Intrinsics, Pose

ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        desc, status = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{status}] criterion {key}: {desc}")


def random_pose(rng, max_offset=3.0) -> Pose:
    r = Rotation.random(random_state=np.random.RandomState(rng.integers(1 << 31))).as_matrix()
    t = rng.uniform(-max_offset, max_offset, size=3)
    return Pose(r, t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def k100():
    """Simple square camera: f=100, principal point at (50, 50)."""
    return Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)
