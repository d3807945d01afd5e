"""Waypoint scripts that produce one seed demonstration per task.

Each script is a list of :class:`Key` segments executed through the kinematic
world from the task's default scene. Hand waypoints are given relative to the
primary object's initial position (world axes) together with a pitch and yaw
applied on top of the arm's ready orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import ArmDriver, advance
from .demo import DemoFrame, DemoTrajectory
from .gaze import GazeGains
from .robot import ARMS, RobotModel, default_robot_model, eef_poses
from .se3 import Pose, interpolate, quat_multiply, axis_angle_quat
from .tasks import get_task
from .world import TrackingConfig, WorldState, default_state

OPEN, CLOSED = 1.0, 0.0


@dataclass(frozen=True)
class Key:
    duration: float
    left: tuple | None = None  # (dx, dy, dz, pitch, yaw) about the object's start position
    right: tuple | None = None
    torso: tuple | None = None  # (h, roll, pitch, yaw)
    grips: tuple | None = None  # applied from the first tick of the segment
    contact: bool = False  # flag the first frame of the segment


def _hand(state_obj: np.ndarray, ready: Pose, spec) -> Pose:
    dx, dy, dz, pitch, yaw = spec
    q = quat_multiply(
        axis_angle_quat((0, 0, 1), yaw), quat_multiply(axis_angle_quat((0, 1, 0), pitch), ready.rotation)
    )
    return Pose(state_obj + np.array([dx, dy, dz]), q)


def _smooth(s: float) -> float:
    return s * s * (3.0 - 2.0 * s)


SCRIPTS: dict[str, list[Key]] = {
    "LiftBox": [
        Key(1.2, left=(-0.02, 0.22, 0.02, 0.5, 0.0), right=(-0.02, -0.22, 0.02, 0.5, 0.0), torso=(0.48, 0.0, 0.45, 0.0)),
        Key(0.8, left=(-0.02, 0.185, 0.0, 0.5, 0.0), right=(-0.02, -0.185, 0.0, 0.5, 0.0)),
        Key(0.3, grips=(CLOSED, CLOSED), contact=True),
        Key(1.6, left=(-0.12, 0.185, 0.42, 0.2, 0.0), right=(-0.12, -0.185, 0.42, 0.2, 0.0), torso=(0.72, 0.0, 0.05, 0.0)),
        Key(0.4),
    ],
    "PressCube": [
        Key(1.0, right=(-0.06, 0.0, 0.12, 0.6, 0.0)),
        Key(0.8, right=(-0.01, 0.0, 0.03, 0.6, 0.0), contact=True),
        Key(0.6, right=(-0.005, 0.0, 0.012, 0.6, 0.0)),
    ],
    "PushCube": [
        Key(1.0, right=(0.0, -0.12, 0.05, 0.3, 0.0)),
        Key(0.6, right=(0.0, -0.07, 0.0, 0.3, 0.0), contact=True),
        Key(1.6, right=(0.0, 0.11, 0.0, 0.3, 0.0)),
        Key(0.4),
    ],
    "Handover": [
        Key(1.0, right=(-0.10, 0.0, 0.07, 0.3, 0.0)),
        Key(0.6, right=(-0.015, 0.0, 0.01, 0.3, 0.0)),
        Key(0.3, grips=(OPEN, CLOSED), contact=True),
        Key(1.2, right=(-0.08, 0.12, 0.13, 0.3, 0.0), left=(-0.08, 0.24, 0.14, 0.3, 0.0)),
        Key(0.8, left=(-0.065, 0.14, 0.12, 0.3, 0.0)),
        Key(0.3, grips=(CLOSED, CLOSED)),
        Key(0.3, grips=(CLOSED, OPEN)),
        Key(1.4, left=(-0.10, 0.32, -0.10, 0.3, 0.0), right=(-0.12, 0.0, 0.10, 0.3, 0.0)),
        Key(0.3),
    ],
    "GraspCube": [
        Key(1.0, right=(-0.10, 0.0, 0.07, 0.3, 0.0)),
        Key(0.6, right=(-0.015, 0.0, 0.01, 0.3, 0.0)),
        Key(0.3, grips=(OPEN, CLOSED), contact=True),
        Key(1.5, right=(-0.22, 0.0, 0.15, 0.3, 0.0)),
        Key(0.3),
    ],
    "OpenCabinet": [
        Key(1.0, right=(-0.10, 0.0, 0.02, 0.0, 0.0)),
        Key(0.6, right=(-0.015, 0.0, 0.0, 0.0, 0.0)),
        Key(0.3, grips=(OPEN, CLOSED), contact=True),
        Key(1.5, right=(-0.26, 0.0, 0.0, 0.0, 0.0)),
        Key(0.3),
    ],
    "PushCart": [
        Key(1.0, left=(-0.10, 0.18, 0.02, 0.0, 0.0), right=(-0.10, -0.18, 0.02, 0.0, 0.0)),
        Key(0.6, left=(-0.015, 0.18, 0.0, 0.0, 0.0), right=(-0.015, -0.18, 0.0, 0.0, 0.0)),
        Key(0.3, grips=(CLOSED, CLOSED), contact=True),
        Key(1.2, left=(0.06, 0.18, 0.0, 0.0, 0.0), right=(0.06, -0.18, 0.0, 0.0, 0.0)),
        Key(0.3),
    ],
    "EraseBoard": [
        Key(1.0, right=(-0.08, 0.0, 0.08, 0.3, 0.0)),
        Key(0.6, right=(-0.01, 0.0, 0.02, 0.3, 0.0)),
        Key(0.3, grips=(OPEN, CLOSED), contact=True),
        Key(1.8, right=(-0.01, 0.235, 0.02, 0.3, 0.0)),
        Key(0.3),
    ],
    "PourWater": [
        Key(1.0, right=(-0.10, 0.0, 0.03, 0.0, 0.0)),
        Key(0.6, right=(-0.015, 0.0, 0.0, 0.0, 0.0)),
        Key(0.3, grips=(OPEN, CLOSED), contact=True),
        Key(1.0, right=(-0.04, 0.08, 0.12, 0.0, 0.0)),
        Key(1.0, right=(-0.03, 0.20, 0.12, 0.0, 0.5)),
        Key(0.4),
    ],
    "ExchangeCube": [
        Key(1.0, right=(-0.10, 0.0, 0.07, 0.3, 0.0)),
        Key(0.6, right=(-0.015, 0.0, 0.01, 0.3, 0.0)),
        Key(0.3, grips=(OPEN, CLOSED), contact=True),
        Key(1.2, right=(-0.08, 0.12, 0.13, 0.3, 0.0), left=(-0.08, 0.24, 0.14, 0.3, 0.0)),
        Key(0.8, left=(-0.065, 0.14, 0.12, 0.3, 0.0)),
        Key(0.3, grips=(CLOSED, CLOSED)),
        Key(0.3, grips=(CLOSED, OPEN)),
        Key(1.4, left=(-0.08, 0.40, 0.12, 0.3, 0.0), right=(-0.12, 0.0, 0.10, 0.3, 0.0)),
        Key(0.3),
    ],
}


def _frame(t: int, model: RobotModel, state: WorldState, primary: str, flag: bool) -> DemoFrame:
    eef = state.eef(model)
    return DemoFrame(
        t=t,
        q_robot=state.q_robot(),
        eef_left=eef["left"],
        eef_right=eef["right"],
        obj=state.objects[primary],
        grip_left=float(state.grippers[0]),
        grip_right=float(state.grippers[1]),
        contact_flag=flag,
    )


def make_demo(
    task_name: str,
    model: RobotModel | None = None,
    tracking: TrackingConfig | None = None,
    gains: GazeGains | None = None,
) -> DemoTrajectory:
    """Run the waypoint script for ``task_name`` and record a 50 Hz demo."""
    return run_script(task_name, model, tracking, gains)[0]


def run_script(task_name: str, model=None, tracking=None, gains=None):
    """Like :func:`make_demo` but also returns the first and last world states."""
    model = model or default_robot_model()
    tracking = tracking or TrackingConfig()
    gains = gains or GazeGains()
    if tracking.tracking_noise_std != 0:
        raise ValueError("scripted demos are recorded noise-free")
    task = get_task(task_name)
    script = SCRIPTS[task_name]
    state = default_state(model, task)
    obj0 = state.objects[task.primary].translation.copy()
    ready = eef_poses(model, state.base, model.torso_default, model.arm_default)
    driver = ArmDriver.hold(model, tracking, state)
    current = dict(state.eef(model))
    first = state
    frames = [_frame(1, model, state, task.primary, False)]
    for key in script:
        n = max(1, int(round(key.duration / tracking.control_dt)))
        start = dict(current)
        end = {
            a: _hand(obj0, ready[a], spec) if spec is not None else start[a]
            for a, spec in (("left", key.left), ("right", key.right))
        }
        torso0 = driver.torso_des.copy()
        torso1 = np.array(key.torso, dtype=float) if key.torso is not None else torso0
        for i in range(1, n + 1):
            s = _smooth(i / n)
            current = {a: interpolate(start[a], end[a], s) for a in ARMS}
            torso = torso0 + s * (torso1 - torso0)
            q = driver.solve(state.base, torso, current)
            cmd = driver.command(q, torso, key.grips if i == 1 else None)
            state = advance(model, state, cmd, tracking, None, gains, task.primary)
            frames.append(_frame(len(frames) + 1, model, state, task.primary, key.contact and i == 1))
    return DemoTrajectory(tuple(frames), task_name, 1.0 / tracking.control_dt), first, state
