import numpy as np
import pytest

from poselift.geometry import CameraModel, Pose3D, rodrigues
from poselift.skeleton import default_skeleton
from poselift.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rodrigues(axis * rng.uniform(0, max_angle))


def random_pose(rng, skeleton, depth=5000.0, spread=400.0):
    joints = rng.normal(scale=spread, size=(skeleton.joint_count, 3))
    joints[:, 2] += depth
    return Pose3D(joints, skeleton)


def random_camera(rng, focal=None):
    return CameraModel(
        focal if focal is not None else rng.uniform(500, 2000),
        tuple(rng.uniform(0, 1000, size=2)),
        random_rotation(rng, 0.3),
        rng.normal(scale=50, size=3),
    )


@pytest.fixture(scope="session")
def small_synth():
    """2k-entry synthetic library plus 50 noisy held-out queries."""
    return generate(SynthConfig(seed=7, pose_count=2050, query_count=50, noise_sigma_2d=5.0))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
