import numpy as np
import pytest

from nearscale.recon_io import CalibrationRig
from nearscale.simulator import SceneSpec, TrajectorySpec, simulate


@pytest.fixture(scope="session")
def clean_plane():
    """Noise-free 5 mm plane scene, lambda_gt = 2."""
    return simulate(SceneSpec("plane", n_points=300, seed=1), TrajectorySpec(distance=0.005, seed=1),
                    lambda_gt=2.0, noise_sigma=0.0, seed=1)


@pytest.fixture(scope="session")
def small_noisy_plane():
    """Noisy plane small enough for the dense solver."""
    return simulate(SceneSpec("plane", n_points=120, seed=3), TrajectorySpec(distance=0.005, seed=3),
                    lambda_gt=1.0, seed=3)


@pytest.fixture
def unity_rig():
    return CalibrationRig(np.array([[0.0, 0.0, 0.0]]), 1.0)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
