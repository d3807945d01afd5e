"""Rigid-body pose algebra.

Poses follow a frame-chaining convention: a pose ``T^A_B`` is the pose of
frame A expressed in frame B, and

    compose(T^A_B, T^B_C) == T^A_C
    relative_right(T^A_C, T^B_C) == T^A_B

In homogeneous 4x4 matrices (column vectors) this means
``compose(a, b).matrix() == b.matrix() @ a.matrix()``.

Rotations are unit quaternions stored as ``(w, x, y, z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SLERP_LINEAR_THRESHOLD = 0.9995


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if not n > 0.0 or not math.isfinite(n):
        raise ValueError(f"degenerate quaternion {q!r}")
    # already unit up to rounding: keep the bits so text round trips are exact
    if abs(n - 1.0) < 1e-13:
        return q
    return q / n


def quat_multiply(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """Hamilton product ``a * b`` for ``(w, x, y, z)`` quaternions."""
    aw, ax, ay, az = a.tolist() if isinstance(a, np.ndarray) else a
    bw, bx, by, bz = b.tolist() if isinstance(b, np.ndarray) else b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    # python floats are much cheaper to multiply than numpy scalars, same bits
    w, x, y, z = q.tolist() if isinstance(q, np.ndarray) else q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return _normalize_quat(np.array(q))


def axis_angle_quat(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def rotation_vector(q: Sequence[float]) -> np.ndarray:
    """Axis-angle vector of a unit quaternion, angle in ``[0, pi]``."""
    w, x, y, z = q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    if s < 1e-12:
        return np.array([2.0 * x, 2.0 * y, 2.0 * z])
    angle = 2.0 * math.atan2(s, w)
    return np.array([x, y, z]) * (angle / s)


@dataclass(frozen=True, eq=False)
class Pose:
    """Immutable rigid transform: translation in meters plus unit quaternion."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.translation, dtype=float).reshape(3)
        q = _normalize_quat(np.array(self.rotation, dtype=float).reshape(4))
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t!r}")
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def _trusted(cls, t: np.ndarray, q: np.ndarray) -> Pose:
        # skips validation; only for kernel outputs that are already unit/finite
        out = object.__new__(cls)
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(out, "translation", t)
        object.__setattr__(out, "rotation", q)
        return out

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> Pose:
        return cls(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(np.asarray(translation, dtype=float), axis_angle_quat(axis, angle))

    @classmethod
    def from_xyz_rpy(cls, x, y, z, roll=0.0, pitch=0.0, yaw=0.0) -> Pose:
        """Rotation is ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
        q = quat_multiply(
            axis_angle_quat((0, 0, 1), yaw),
            quat_multiply(axis_angle_quat((0, 1, 0), pitch), axis_angle_quat((1, 0, 0), roll)),
        )
        return cls(np.array([x, y, z], dtype=float), q)

    @classmethod
    def from_planar(cls, x: float, y: float, yaw: float) -> Pose:
        return cls.from_xyz_rpy(x, y, 0.0, 0.0, 0.0, yaw)

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> Pose:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, 3], matrix_to_quat(M[:3, :3]))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> Pose:
        """Build from ``[tx, ty, tz, qw, qx, qy, qz]``."""
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError(f"expected 7 values, got shape {values.shape}")
        return cls(values[:3], values[3:])

    def to_array(self) -> np.ndarray:
        """``[tx, ty, tz, qw, qx, qy, qz]`` with the quaternion canonicalized (qw >= 0)."""
        q = self.rotation if self.rotation[0] >= 0.0 else -self.rotation
        return np.concatenate([self.translation, q])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = quat_to_matrix(self.rotation)
        M[:3, 3] = self.translation
        return M

    def apply(self, point) -> np.ndarray:
        """Map a point from this pose's frame into its reference frame."""
        return self.rotation_matrix() @ np.asarray(point, dtype=float) + self.translation

    def yaw(self) -> float:
        w, x, y, z = self.rotation
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def planar(self) -> Pose:
        """Projection onto the ground plane: keep (x, y, yaw), drop z, roll and pitch."""
        return Pose.from_planar(self.translation[0], self.translation[1], self.yaw())

    def __repr__(self) -> str:
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        return f"Pose(t=[{t}], q=[{q}])"


@dataclass(frozen=True)
class PoseDelta:
    position_error: float
    rotation_error: float

    def within(self, position_tol: float, rotation_tol: float) -> bool:
        return self.position_error <= position_tol and self.rotation_error <= rotation_tol


IDENTITY = Pose.identity()


def _derived(t: np.ndarray, q: np.ndarray) -> Pose:
    # inputs came from valid poses, so only renormalize
    return Pose._trusted(t, _normalize_quat(q))


def compose(a: Pose, b: Pose) -> Pose:
    """Chain ``a`` (expressed in frame B) with ``b`` (frame B in frame C)."""
    t = b.rotation_matrix() @ a.translation + b.translation
    return _derived(t, quat_multiply(b.rotation, a.rotation))


def compose_all(poses: Iterable[Pose]) -> Pose:
    """``compose_all([p1, p2, p3]) == compose(compose(p1, p2), p3)``."""
    it = iter(poses)
    out = next(it)
    for p in it:
        out = compose(out, p)
    return out


def inverse(a: Pose) -> Pose:
    q_inv = np.array([a.rotation[0], -a.rotation[1], -a.rotation[2], -a.rotation[3]])
    t = -(quat_to_matrix(q_inv) @ a.translation)
    return _derived(t, q_inv)


def relative_right(a: Pose, b: Pose) -> Pose:
    """``compose(a, inverse(b))``: pose ``a`` re-expressed in the frame of ``b``.

    Satisfies ``compose(relative_right(a, b), b) == a``.
    """
    return compose(a, inverse(b))


def _slerp_quat(qa: np.ndarray, qb: np.ndarray, s: float) -> np.ndarray:
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > SLERP_LINEAR_THRESHOLD:
        return _normalize_quat(qa + s * (qb - qa))
    theta = math.acos(min(dot, 1.0))
    sin_theta = math.sin(theta)
    wa = math.sin((1.0 - s) * theta) / sin_theta
    wb = math.sin(s * theta) / sin_theta
    return wa * qa + wb * qb


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Linear translation, shortest-arc spherical rotation; exact at ``s`` in {0, 1}."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation fraction must lie in [0, 1], got {s}")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    t = (1.0 - s) * a.translation + s * b.translation
    return Pose(t, _slerp_quat(a.rotation, b.rotation, s))


def rotation_angle_between(qa: Sequence[float], qb: Sequence[float]) -> float:
    """Geodesic angle between two unit quaternions, invariant to sign."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    if float(qa @ qb) < 0.0:
        qb = -qb
    # chord form: exact zero for equal inputs, well conditioned near 0 and pi
    return 4.0 * math.atan2(float(np.linalg.norm(qa - qb)), float(np.linalg.norm(qa + qb)))


def pose_distance(a: Pose, b: Pose) -> PoseDelta:
    d = a.translation - b.translation
    return PoseDelta(
        position_error=math.sqrt(float(d @ d)),
        rotation_error=rotation_angle_between(a.rotation, b.rotation),
    )


def pose_error_vector(current: Pose, target: Pose) -> np.ndarray:
    """6-vector ``[dp, dtheta]`` in the shared reference frame, moving current toward target."""
    dp = target.translation - current.translation
    rel = quat_multiply(target.rotation, np.array([current.rotation[0], *(-current.rotation[1:])]))
    return np.concatenate([dp, rotation_vector(rel)])
