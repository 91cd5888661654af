import numpy as np
import pytest

from cohere.geom import Pose


def random_quaternion(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose(rng, scale: float = 10.0) -> Pose:
    return Pose.from_quaternion(random_quaternion(rng), rng.uniform(-scale, scale, size=3))


def yaw_pose(yaw: float, translation) -> Pose:
    c, s = np.cos(yaw), np.sin(yaw)
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(r, np.asarray(translation, dtype=np.float64))


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
