"""Deterministic kinematic surrogate of the simulator plus whole-body controller.

One call to :func:`step` is one 50 Hz controller tick. The floating base
integrates the commanded planar velocities; torso and arm joints follow their
targets through a first-order lag with optional Gaussian tracking noise.
Objects are kinematic: grasped objects ride rigidly on an end effector and
pushable objects are shoved along the contact normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gaze import integrate_neck
from .robot import ARMS, RobotModel, camera_frame, eef_poses, torso_pose
from .se3 import Pose, compose, matrix_to_quat, relative_right

N_COMMAND = 19
N_ACTION = 21
OBS_DIM = 41


class UnknownObject(KeyError):
    pass


@dataclass(frozen=True)
class TrackingConfig:
    time_constant: float = 0.1
    tracking_noise_std: float = 0.0
    control_dt: float = 0.02

    def __post_init__(self) -> None:
        if not self.time_constant > 0:
            raise ValueError("time_constant must be positive")
        if not self.control_dt > 0:
            raise ValueError("control_dt must be positive")
        if self.tracking_noise_std < 0:
            raise ValueError("tracking_noise_std must be non-negative")

    @property
    def alpha(self) -> float:
        """Per-tick first-order lag factor."""
        return 1.0 - math.exp(-self.control_dt / self.time_constant)


@dataclass(frozen=True)
class HighLevelCommand:
    """Whole-body controller input.

    Flattened order (``to_vector``): v_x, v_y, omega, h, roll, pitch, yaw,
    q_upper (left arm then right arm), grip_left, grip_right.
    """

    v_x: float
    v_y: float
    omega: float
    h: float
    r: float
    p: float
    y: float
    q_upper: np.ndarray
    grip_left: float
    grip_right: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.v_x, self.v_y, self.omega, self.h, self.r, self.p, self.y],
                np.asarray(self.q_upper, dtype=float),
                [self.grip_left, self.grip_right],
            ]
        )

    @classmethod
    def from_vector(cls, vec) -> HighLevelCommand:
        vec = np.asarray(vec, dtype=float)
        return cls(*vec[:7], np.array(vec[7:-2]), vec[-2], vec[-1])

    @classmethod
    def hold(cls, state: WorldState) -> HighLevelCommand:
        """Zero velocity, every target equal to the current state."""
        return cls(0.0, 0.0, 0.0, *state.torso, state.q_arms.copy(), *state.grippers)

    def validate(self, n_arm_joints: int) -> None:
        scalars = (self.v_x, self.v_y, self.omega, self.h, self.r, self.p, self.y, self.grip_left, self.grip_right)
        if not (all(math.isfinite(v) for v in scalars) and np.isfinite(self.q_upper).all()):
            raise ValueError(f"non-finite command {self.to_vector()!r}")
        if len(self.q_upper) != n_arm_joints:
            raise ValueError(f"q_upper has {len(self.q_upper)} entries, model has {n_arm_joints}")


@dataclass(frozen=True)
class ObjectBody:
    """Static per-object properties used by the contact model."""

    extents: tuple[float, float, float]
    pushable: bool = False

    @property
    def radius(self) -> float:
        return 0.5 * max(self.extents)


@dataclass
class WorldState:
    base: np.ndarray  # x, y, yaw
    torso: np.ndarray  # h, roll, pitch, yaw
    q_arms: np.ndarray
    qd_arms: np.ndarray
    neck: np.ndarray  # yaw, pitch
    grippers: np.ndarray  # left, right
    objects: dict
    attachments: dict = field(default_factory=dict)  # object id -> (arm, object pose in eef frame)
    bodies: dict = field(default_factory=dict)
    qd_torso: np.ndarray = field(default_factory=lambda: np.zeros(4))
    neck_rate: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sim_time: float = 0.0
    tick: int = 0
    _eef: dict | None = field(default=None, repr=False, compare=False)

    def copy(self) -> WorldState:
        return replace(
            self,
            base=self.base.copy(),
            torso=self.torso.copy(),
            q_arms=self.q_arms.copy(),
            qd_arms=self.qd_arms.copy(),
            neck=self.neck.copy(),
            grippers=self.grippers.copy(),
            objects=dict(self.objects),
            attachments=dict(self.attachments),
            qd_torso=self.qd_torso.copy(),
            neck_rate=self.neck_rate.copy(),
            _eef=None,
        )

    @property
    def base_pose(self) -> Pose:
        return Pose.from_planar(*self.base)

    def torso_pose(self) -> Pose:
        return torso_pose(self.base, self.torso)

    def eef(self, model: RobotModel) -> dict:
        if self._eef is None:
            self._eef = eef_poses(model, self.base, self.torso, self.q_arms)
        return self._eef

    def q_robot(self) -> np.ndarray:
        """Floating-base joint vector: base x, y, yaw, torso h, r, p, y, arms, neck yaw, pitch."""
        return np.concatenate([self.base, self.torso, self.q_arms, self.neck])

    def fingerprint(self) -> bytes:
        parts = [self.q_robot(), self.qd_arms, self.qd_torso, self.neck_rate, self.grippers]
        for oid in sorted(self.objects):
            parts.append(self.objects[oid].translation)
            parts.append(self.objects[oid].rotation)
        parts.append(np.array([self.sim_time, self.tick]))
        blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in parts)
        att = ";".join(f"{k}:{v[0]}" for k, v in sorted(self.attachments.items()))
        return blob + att.encode()


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def step(
    model: RobotModel,
    state: WorldState,
    cmd: HighLevelCommand,
    cfg: TrackingConfig,
    rng: np.random.Generator | None = None,
    neck_rate=(0.0, 0.0),
) -> WorldState:
    """Advance the world by one controller tick and return the new state."""
    cmd.validate(model.n_arm_joints)
    dt = cfg.control_dt
    alpha = cfg.alpha
    if cfg.tracking_noise_std > 0:
        if rng is None:
            raise ValueError("a random generator is required when tracking noise is enabled")
        noise = rng.normal(0.0, cfg.tracking_noise_std, size=7 + model.n_arm_joints)
    else:
        noise = np.zeros(7 + model.n_arm_joints)

    x, y, yaw = state.base
    vx = cmd.v_x + noise[0]
    vy = cmd.v_y + noise[1]
    wz = cmd.omega + noise[2]
    c, s = math.cos(yaw), math.sin(yaw)
    if vx == 0.0 and vy == 0.0 and wz == 0.0:
        base = state.base.copy()
    else:
        base = np.array([x + (c * vx - s * vy) * dt, y + (s * vx + c * vy) * dt, _wrap(yaw + wz * dt)])

    torso_target = np.array([cmd.h, cmd.r, cmd.p, cmd.y])
    torso = state.torso + alpha * (torso_target - state.torso) + noise[3:7]
    torso = np.minimum(np.maximum(torso, model.torso_limits[:, 0]), model.torso_limits[:, 1])

    q_target = np.asarray(cmd.q_upper, dtype=float)
    q_arms = state.q_arms + alpha * (q_target - state.q_arms) + noise[7:]
    q_arms = model.clamp_arms(q_arms)

    closed, opened = model.gripper_limits
    lo, hi = min(closed, opened), max(closed, opened)
    grippers = np.array([min(max(float(cmd.grip_left), lo), hi), min(max(float(cmd.grip_right), lo), hi)])
    neck = np.array(integrate_neck(state.neck, neck_rate, dt, model.neck_limits))

    new = WorldState(
        base=base,
        torso=torso,
        q_arms=q_arms,
        qd_arms=(q_arms - state.q_arms) / dt,
        neck=neck,
        grippers=grippers,
        objects=dict(state.objects),
        attachments=dict(state.attachments),
        bodies=state.bodies,
        qd_torso=(torso - state.torso) / dt,
        neck_rate=(neck - state.neck) / dt,
        sim_time=state.sim_time + dt,
        tick=state.tick + 1,
    )
    _update_contacts(model, state, new)
    return new


def _is_closed(model: RobotModel, value: float) -> bool:
    closed, opened = model.gripper_limits
    mid = 0.5 * (closed + opened)
    return value < mid if closed < opened else value > mid


def contact_radius(model: RobotModel, state: WorldState, oid: str) -> float:
    body = state.bodies.get(oid)
    return model.grasp_radius + (body.radius if body is not None else 0.0)


def _update_contacts(model: RobotModel, old: WorldState, new: WorldState) -> None:
    eef_old = old.eef(model)
    eef_new = new.eef(model)

    for i, arm in enumerate(ARMS):
        was = _is_closed(model, old.grippers[i])
        now = _is_closed(model, new.grippers[i])
        if now and not was:
            p = eef_new[arm].translation
            best, best_d = None, math.inf
            for oid, pose in new.objects.items():
                d = float(np.linalg.norm(pose.translation - p))
                if d <= contact_radius(model, new, oid) and d < best_d:
                    best, best_d = oid, d
            if best is not None:
                new.attachments[best] = (arm, relative_right(new.objects[best], eef_new[arm]))
        elif was and not now:
            for oid in [k for k, v in new.attachments.items() if v[0] == arm]:
                del new.attachments[oid]

    for oid, (arm, rel) in new.attachments.items():
        new.objects[oid] = compose(rel, eef_new[arm])

    for oid, pose in list(new.objects.items()):
        body = new.bodies.get(oid)
        if body is None or not body.pushable or oid in new.attachments:
            continue
        radius = contact_radius(model, new, oid)
        yaw = pose.yaw()
        c, s = math.cos(yaw), math.sin(yaw)
        half = (0.5 * body.extents[0], 0.5 * body.extents[1])
        shift = np.zeros(3)
        for arm in ARMS:
            p_new = eef_new[arm].translation
            rel = pose.translation + shift - p_new
            if math.hypot(rel[0], rel[1]) > radius:
                continue
            # push along the normal of the face the hand is against
            lx, ly = c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1]
            if abs(lx) / half[0] >= abs(ly) / half[1]:
                normal = np.array([c, s, 0.0]) * math.copysign(1.0, lx)
            else:
                normal = np.array([-s, c, 0.0]) * math.copysign(1.0, ly)
            push = float((p_new - eef_old[arm].translation) @ normal)
            if push > 0.0:
                shift += push * normal
        if np.any(shift):
            new.objects[oid] = Pose(pose.translation + shift, pose.rotation)


def object_pose_in_camera(model: RobotModel, state: WorldState, object_id: str) -> Pose:
    """Pose of an object expressed in the head camera frame."""
    if object_id not in state.objects:
        raise UnknownObject(object_id)
    R, p = camera_frame(model, state.base, state.torso, state.neck)
    return relative_right(state.objects[object_id], Pose(p, matrix_to_quat(R)))


def object_position_in_camera(model: RobotModel, state: WorldState, object_id: str) -> np.ndarray:
    """Translation part of :func:`object_pose_in_camera`, without building poses."""
    if object_id not in state.objects:
        raise UnknownObject(object_id)
    R, p = camera_frame(model, state.base, state.torso, state.neck)
    return R.T @ (state.objects[object_id].translation - p)


def observation(model: RobotModel, state: WorldState, object_id: str) -> np.ndarray:
    """Policy observation (41 values).

    Layout: joint positions [torso h, torso yaw, 12 arm joints, neck yaw, neck
    pitch], the matching 16 velocities, torso roll and pitch, then the object
    pose in the camera frame as 7 numbers.
    """
    q_pos = np.concatenate([[state.torso[0], state.torso[3]], state.q_arms, state.neck])
    q_vel = np.concatenate([[state.qd_torso[0], state.qd_torso[3]], state.qd_arms, state.neck_rate])
    obj = object_pose_in_camera(model, state, object_id).to_array()
    return np.concatenate([q_pos, q_vel, state.torso[1:3], obj])


def default_state(model: RobotModel, task) -> WorldState:
    """World at the task's documented default placement."""
    return WorldState(
        base=np.array(task.robot_default, dtype=float),
        torso=np.array(model.torso_default, dtype=float),
        q_arms=model.arm_default.copy(),
        qd_arms=np.zeros(model.n_arm_joints),
        neck=np.array(model.neck_default, dtype=float),
        grippers=np.array([model.gripper_limits[1]] * 2, dtype=float),
        objects={oid: spec.default_pose for oid, spec in task.objects.items()},
        bodies={oid: ObjectBody(tuple(spec.extents), spec.pushable) for oid, spec in task.objects.items()},
    )


def sample_initial_state(model: RobotModel, task, region, seed: int) -> WorldState:
    """Randomise robot placement and the object offsets within ``region``."""
    rng = np.random.default_rng([int(seed), 0])
    draws = [rng.uniform(lo, hi) for lo, hi in region.ranges()]
    x, y, yaw, dy, dz, dzrot = (float(v) for v in draws)
    state = default_state(model, task)
    state.base = np.array([x, y, yaw])
    if dy or dz or dzrot:
        centre = task.objects[task.primary].default_pose.translation
        shift_back = Pose.from_translation(*(-centre))
        g = compose(shift_back, Pose.from_axis_angle((0, 0, 1), dzrot, centre + np.array([0.0, dy, dz])))
        state.objects = {oid: compose(p, g) for oid, p in state.objects.items()}
    return state
