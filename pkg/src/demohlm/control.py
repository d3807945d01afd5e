"""Shared per-tick execution: IK on pose targets, lag-compensated commands, gaze.

The whole-body surrogate tracks each command channel through a first-order
lag, so a joint commanded to ``c`` moves by ``alpha * (c - q)`` per tick. To
follow a desired joint path ``q_des`` we command

    c_k = q_des[k-1] + (q_des[k] - q_des[k-1]) / alpha

which lands exactly on ``q_des[k]`` without noise, and leaves the tracking
error with the stable recursion ``e_k = (1 - alpha) e_{k-1} + noise`` with it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaze import GazeGains, gaze_command
from . import _kin
from .robot import ARMS, DEFAULT_IK, IKOptions, RobotModel, solve_ik_frame
from .world import HighLevelCommand, TrackingConfig, WorldState, object_position_in_camera, step


def gaze_rate(model: RobotModel, state: WorldState, object_id: str, gains: GazeGains) -> tuple[float, float]:
    return gaze_command(object_position_in_camera(model, state, object_id), gains)


def advance(
    model: RobotModel,
    state: WorldState,
    cmd: HighLevelCommand,
    tracking: TrackingConfig,
    rng: np.random.Generator | None,
    gains: GazeGains,
    object_id: str,
) -> WorldState:
    """One controller tick with the neck servoing on ``object_id``."""
    return step(model, state, cmd, tracking, rng, neck_rate=gaze_rate(model, state, object_id, gains))


@dataclass
class ArmDriver:
    """Keeps the desired joint path and turns pose targets into commands."""

    model: RobotModel
    tracking: TrackingConfig
    q_des: np.ndarray
    torso_des: np.ndarray
    grips: np.ndarray
    ik: IKOptions = DEFAULT_IK
    _cache: dict = field(default_factory=dict)

    @classmethod
    def hold(cls, model: RobotModel, tracking: TrackingConfig, state: WorldState, ik: IKOptions = DEFAULT_IK):
        return cls(model, tracking, state.q_arms.copy(), state.torso.copy(), state.grippers.copy(), ik)

    def solve(self, base: np.ndarray, torso: np.ndarray, targets: dict) -> np.ndarray:
        """Joint angles for per-arm world targets; arms missing from ``targets`` hold.

        Raises :class:`~demohlm.robot.NotConverged` when a target is out of reach.
        """
        q = self.q_des.copy()
        frame = None
        for arm in ARMS:
            target = targets.get(arm)
            if target is None:
                continue
            key = np.concatenate([target.translation, target.rotation, torso, base])
            hit = self._cache.get(arm)
            sl = self.model.arm_slice(arm)
            if hit is not None and np.array_equal(hit[0], key):
                q[sl] = hit[1]
                continue
            if frame is None:
                frame = _kin.torso_frame(np.asarray(base, dtype=float), np.asarray(torso, dtype=float))
            q[sl] = solve_ik_frame(self.model, target, self.q_des[sl], arm, *frame, self.ik)
            self._cache[arm] = (key, q[sl].copy())
        return q

    def command(self, q_new: np.ndarray, torso_new: np.ndarray, grips=None, base_velocity=(0.0, 0.0, 0.0)):
        alpha = self.tracking.alpha
        c_q = self.q_des + (q_new - self.q_des) / alpha
        c_t = self.torso_des + (torso_new - self.torso_des) / alpha
        self.q_des = np.array(q_new, dtype=float)
        self.torso_des = np.array(torso_new, dtype=float)
        if grips is not None:
            self.grips = np.array(grips, dtype=float)
        return HighLevelCommand(*base_velocity, *c_t, c_q, self.grips[0], self.grips[1])

    def hold_command(self, base_velocity=(0.0, 0.0, 0.0)) -> HighLevelCommand:
        return HighLevelCommand(*base_velocity, *self.torso_des, self.q_des.copy(), self.grips[0], self.grips[1])

