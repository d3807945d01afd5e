import functools

import numpy as np
import pytest

from demohlm.robot import default_robot_model
from demohlm.scripted import make_demo
from demohlm.se3 import Pose, axis_angle_quat


@pytest.fixture(scope="session")
def model():
    return default_robot_model()


@functools.lru_cache(maxsize=None)
def scripted_demo(task: str):
    return make_demo(task)


@pytest.fixture(scope="session")
def demo_for():
    return scripted_demo


def random_pose(rng: np.random.Generator, scale: float = 2.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose(rng.uniform(-scale, scale, 3), axis_angle_quat(axis, rng.uniform(-np.pi, np.pi)))


# --- independent homogeneous-matrix oracle (Rodrigues, no quaternions) ---


def rodrigues(axis, angle) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def homogeneous(R, t) -> np.ndarray:
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = t
    return M


def pose_matrix_oracle(p: Pose) -> np.ndarray:
    """4x4 of a Pose, via axis-angle extracted from its quaternion."""
    w, x, y, z = p.rotation
    s = np.sqrt(x * x + y * y + z * z)
    if s < 1e-15:
        R = np.eye(3)
    else:
        R = rodrigues([x / s, y / s, z / s], 2 * np.arctan2(s, w))
    return homogeneous(R, p.translation)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
