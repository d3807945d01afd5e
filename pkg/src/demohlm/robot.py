"""Robot model, forward kinematics and damped-least-squares IK for the arms."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import _kin
from .se3 import Pose, compose, matrix_to_quat, quat_to_matrix

ROBOT_SCHEMA = "demohlm-robot v1"
ARMS = ("left", "right")


class ConfigError(ValueError):
    pass


class NotConverged(RuntimeError):
    """IK failed to reach the target; ``residual`` holds the final (position, rotation) error."""

    def __init__(self, residual: tuple[float, float], iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"IK did not converge after {iterations} iterations "
            f"(residual {residual[0]:.4g} m, {residual[1]:.4g} rad)"
        )


@dataclass(frozen=True)
class Joint:
    name: str
    axis: np.ndarray
    offset: Pose
    lower: float
    upper: float


@dataclass(frozen=True)
class ArmChain:
    joints: tuple[Joint, ...]
    mount: Pose
    tool: Pose
    default: np.ndarray
    # cached rotation matrices / vectors for fast FK
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.joints:
            raise ConfigError("arm chain must contain at least one joint")
        for j in self.joints:
            if not j.lower < j.upper:
                raise ConfigError(f"joint {j.name}: lower limit must be below upper")
        kin = (
            self.mount.rotation_matrix(),
            np.array(self.mount.translation),
            np.array([j.offset.rotation_matrix() for j in self.joints]),
            np.array([j.offset.translation for j in self.joints]),
            np.array([np.asarray(j.axis, float) / np.linalg.norm(j.axis) for j in self.joints]),
            self.tool.rotation_matrix(),
            np.array(self.tool.translation),
        )
        lower = np.array([j.lower for j in self.joints])
        upper = np.array([j.upper for j in self.joints])
        packed = np.concatenate([np.ravel(a) for a in kin] + [lower, upper])
        self._cache.update(kin=kin, packed=packed, lower=lower, upper=upper)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return self._cache["lower"]

    @property
    def upper(self) -> np.ndarray:
        return self._cache["upper"]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def project(self, p_cam) -> tuple[float, float]:
        """Pixel coordinates (u right, v down) of a point in the camera frame."""
        x_up, y_right, z = p_cam
        return self.cx + self.fx * y_right / z, self.cy - self.fy * x_up / z


@dataclass(frozen=True)
class RobotModel:
    name: str
    arms: dict
    torso_limits: np.ndarray  # (4, 2): h, roll, pitch, yaw
    torso_default: np.ndarray
    neck_mount: Pose
    camera_mount: Pose
    neck_limits: np.ndarray  # (2, 2): yaw, pitch
    neck_default: np.ndarray
    camera: CameraIntrinsics
    grasp_radius: float
    gripper_limits: tuple[float, float]

    def __post_init__(self) -> None:
        if self.grasp_radius <= 0:
            raise ConfigError("grasp_radius must be positive")
        if set(self.arms) != set(ARMS):
            raise ConfigError(f"model needs arms {ARMS}, got {sorted(self.arms)}")
        if np.any(self.torso_limits[:, 0] >= self.torso_limits[:, 1]):
            raise ConfigError("torso limits must be well ordered")
        if np.any(self.neck_limits[:, 0] >= self.neck_limits[:, 1]):
            raise ConfigError("neck limits must be well ordered")

    @property
    def arm_dofs(self) -> tuple[int, int]:
        return self.arms["left"].dof, self.arms["right"].dof

    @property
    def n_arm_joints(self) -> int:
        return sum(self.arm_dofs)

    def arm_slice(self, arm: str) -> slice:
        nl = self.arms["left"].dof
        if arm == "left":
            return slice(0, nl)
        if arm == "right":
            return slice(nl, nl + self.arms["right"].dof)
        raise ValueError(f"unknown arm {arm!r}")

    @property
    def arm_lower(self) -> np.ndarray:
        return np.concatenate([self.arms[a].lower for a in ARMS])

    @property
    def arm_upper(self) -> np.ndarray:
        return np.concatenate([self.arms[a].upper for a in ARMS])

    @property
    def arm_default(self) -> np.ndarray:
        return np.concatenate([self.arms[a].default for a in ARMS])

    def clamp_arms(self, q: np.ndarray) -> np.ndarray:
        bounds = self.__dict__.get("_arm_bounds")
        if bounds is None:
            bounds = (self.arm_lower, self.arm_upper)
            object.__setattr__(self, "_arm_bounds", bounds)
        return np.minimum(np.maximum(q, bounds[0]), bounds[1])


def _floats(text: str, n: int | None = None) -> np.ndarray:
    vals = np.array([float(v) for v in text.split()])
    if n is not None and vals.size != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _pose(text: str) -> Pose:
    return Pose.from_array(_floats(text, 7))


def _parse_arm(section: configparser.SectionProxy) -> ArmChain:
    joint_keys = sorted(
        (k for k in section if k.startswith("joint.")), key=lambda k: int(k.split(".")[1])
    )
    joints = []
    for key in joint_keys:
        parts = [p.strip() for p in section[key].split("|")]
        if len(parts) != 4:
            raise ConfigError(f"{section.name}.{key}: expected 4 '|'-separated fields")
        lo, hi = _floats(parts[3], 2)
        joints.append(Joint(parts[0], _floats(parts[1], 3), _pose(parts[2]), float(lo), float(hi)))
    default = _floats(section["default"], len(joints))
    return ArmChain(tuple(joints), _pose(section["mount"]), _pose(section["tool"]), default)


def load_robot_model(path: str | Path | None = None) -> RobotModel:
    """Read a robot description; ``None`` loads the bundled surrogate."""
    cp = configparser.ConfigParser()
    if path is None:
        cp.read_string(resources.files("demohlm.data").joinpath("robot.ini").read_text())
    else:
        with open(path) as fh:
            cp.read_file(fh)
    try:
        schema = cp["model"]["schema"].strip()
        if schema != ROBOT_SCHEMA:
            raise ConfigError(f"unsupported robot schema {schema!r} (want {ROBOT_SCHEMA!r})")
        torso = cp["torso"]
        neck = cp["neck"]
        cam = cp["camera"]
        return RobotModel(
            name=cp["model"].get("name", "robot"),
            arms={a: _parse_arm(cp[f"arm.{a}"]) for a in ARMS},
            torso_limits=np.array(
                [_floats(torso[f"limits_{k}"], 2) for k in ("h", "roll", "pitch", "yaw")]
            ),
            torso_default=_floats(torso["default"], 4),
            neck_mount=_pose(neck["mount"]),
            camera_mount=_pose(neck["camera"]),
            neck_limits=np.array([_floats(neck["limits_yaw"], 2), _floats(neck["limits_pitch"], 2)]),
            neck_default=_floats(neck["default"], 2),
            camera=CameraIntrinsics(
                float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]),
                int(cam["width"]), int(cam["height"]),
            ),
            grasp_radius=float(cp["model"]["grasp_radius"]),
            gripper_limits=(float(cp["model"]["gripper_closed"]), float(cp["model"]["gripper_open"])),
        )
    except KeyError as exc:
        raise ConfigError(f"robot config missing {exc}") from None


_DEFAULT_MODEL: RobotModel | None = None


def default_robot_model() -> RobotModel:
    global _DEFAULT_MODEL
    if _DEFAULT_MODEL is None:
        _DEFAULT_MODEL = load_robot_model()
    return _DEFAULT_MODEL


# ---------------------------------------------------------------------------
# frames


def torso_pose(base: np.ndarray, torso: np.ndarray) -> Pose:
    """World pose of the torso frame from planar base (x, y, yaw) and torso (h, r, p, y)."""
    local = Pose.from_xyz_rpy(0.0, 0.0, torso[0], torso[1], torso[2], torso[3])
    return compose(local, Pose.from_planar(base[0], base[1], base[2]))


def _chain_local(chain: ArmChain, q: np.ndarray):
    """Chain walk in the torso frame: eef rotation, eef position, joint origins, joint axes."""
    return _kin.chain_walk(*chain._cache["kin"], np.asarray(q, dtype=float))


def arm_fk_local(model: RobotModel, arm: str, q_arm: np.ndarray) -> Pose:
    R, p, _, _ = _chain_local(model.arms[arm], q_arm)
    return Pose(p, matrix_to_quat(R))


def forward_kinematics(model: RobotModel, state, arm: str) -> Pose:
    """World-frame end-effector pose for ``arm`` in ``state``."""
    q = state.q_arms[model.arm_slice(arm)]
    return compose(arm_fk_local(model, arm, q), torso_pose(state.base, state.torso))


def camera_pose(model: RobotModel, base: np.ndarray, torso: np.ndarray, neck: np.ndarray) -> Pose:
    head = compose(model.neck_mount, torso_pose(base, torso))
    yawed = compose(Pose.from_axis_angle((0, 0, 1), neck[0]), head)
    pitched = compose(Pose.from_axis_angle((0, 1, 0), neck[1]), yawed)
    return compose(model.camera_mount, pitched)


# ---------------------------------------------------------------------------
# inverse kinematics


@dataclass(frozen=True)
class IKOptions:
    max_iters: int = 100
    damping: float = 0.01
    max_step: float = 0.4
    # iterate until this tight tolerance ...
    stop_position: float = 1e-4
    stop_rotation: float = 1e-3
    # ... and report NotConverged unless within this one
    accept_position: float = 1e-3
    accept_rotation: float = 1e-2


DEFAULT_IK = IKOptions()


def solve_ik(
    model: RobotModel,
    target: Pose,
    seed: np.ndarray,
    arm: str,
    base_pose: Pose,
    options: IKOptions = DEFAULT_IK,
) -> np.ndarray:
    """Joint angles placing ``arm``'s end effector at the world pose ``target``.

    ``base_pose`` is the world pose of the torso frame the arm is mounted on.
    Damped least squares on the 6-D pose error, clamped to joint limits each
    iteration.
    """
    return solve_ik_frame(
        model, target, seed, arm, base_pose.rotation_matrix(), base_pose.translation, options
    )


def solve_ik_frame(
    model: RobotModel,
    target: Pose,
    seed: np.ndarray,
    arm: str,
    R_base: np.ndarray,
    p_base: np.ndarray,
    options: IKOptions = DEFAULT_IK,
) -> np.ndarray:
    """:func:`solve_ik` with the torso frame given as a rotation matrix and origin."""
    chain = model.arms[arm]
    R_local = R_base.T @ quat_to_matrix(target.rotation)
    p_local = R_base.T @ (target.translation - p_base)
    q, pos_err, rot_err, _ = _kin.dls_solve_packed(
        chain._cache["packed"],
        R_local,
        p_local,
        np.asarray(seed, dtype=float),
        options.max_iters,
        options.damping**2,
        options.max_step,
        options.stop_position,
        options.stop_rotation,
    )
    if pos_err <= options.accept_position and rot_err <= options.accept_rotation:
        return q
    raise NotConverged((pos_err, rot_err), options.max_iters)


def eef_poses(model: RobotModel, base: np.ndarray, torso: np.ndarray, q_arms: np.ndarray) -> dict:
    """World-frame end-effector poses of both arms."""
    q_arms = np.asarray(q_arms, dtype=float)
    if q_arms.shape != (model.n_arm_joints,):
        raise ValueError(f"q_arms has shape {q_arms.shape}, model has {model.n_arm_joints} arm joints")
    tl, ql, tr, qr = _kin.world_eef_pair(
        model.arms["left"]._cache["packed"],
        model.arms["right"]._cache["packed"],
        q_arms,
        model.arms["left"].dof,
        np.asarray(base, dtype=float),
        np.asarray(torso, dtype=float),
    )
    return {"left": Pose._trusted(tl, ql), "right": Pose._trusted(tr, qr)}


def _camera_kin(model: RobotModel) -> tuple:
    kin = model.__dict__.get("_camera_kin")
    if kin is None:
        kin = (
            model.neck_mount.rotation_matrix(),
            np.array(model.neck_mount.translation),
            model.camera_mount.rotation_matrix(),
            np.array(model.camera_mount.translation),
        )
        object.__setattr__(model, "_camera_kin", kin)
    return kin


def camera_frame(model: RobotModel, base, torso, neck) -> tuple[np.ndarray, np.ndarray]:
    """Camera rotation matrix and position in the world; same frame as :func:`camera_pose`."""
    return _kin.camera_frame(
        np.asarray(base, dtype=float),
        np.asarray(torso, dtype=float),
        np.asarray(neck, dtype=float),
        *_camera_kin(model),
    )


__all__ = [
    "ARMS",
    "ArmChain",
    "CameraIntrinsics",
    "ConfigError",
    "IKOptions",
    "Joint",
    "NotConverged",
    "RobotModel",
    "camera_frame",
    "camera_pose",
    "default_robot_model",
    "eef_poses",
    "forward_kinematics",
    "load_robot_model",
    "solve_ik",
    "solve_ik_frame",
    "torso_pose",
]
