"""Seed demonstration I/O, contact detection and the relative-pose split.

Demo files are plain text. The first line is the header
``demohlm-demo v1 rate=<Hz> task=<name>``; every following non-blank line is
one frame::

    t  q_robot(21)  eef_left(7)  eef_right(7)  obj(7)  grip_left grip_right  [contact 0|1]

``q_robot`` is base x, y, yaw, torso h, roll, pitch, yaw, the twelve arm
joints (left then right) and neck yaw, pitch. Lines starting with ``#`` are
comments. Floats are written with ``repr`` so save/load is bit exact.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .robot import ARMS, RobotModel, default_robot_model
from .se3 import Pose, pose_distance, relative_right

DEMO_SCHEMA = "demohlm-demo"
DEMO_VERSION = "v1"
REL_SCHEMA = "demohlm-rel v1"
N_Q_ROBOT = 21
QUAT_TOLERANCE = 1e-6
DEFAULT_EPS_CONTACT = 0.03
MAX_JUMP = 0.2

_HEADER = re.compile(r"^demohlm-demo (\S+) rate=(\S+) task=(\S+)\s*$")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(ValueError):
    pass


class NoContact(ValueError):
    pass


@dataclass(frozen=True)
class DemoFrame:
    t: int
    q_robot: np.ndarray
    eef_left: Pose
    eef_right: Pose
    obj: Pose | None
    grip_left: float
    grip_right: float
    contact_flag: bool | None = None

    def eef(self, arm: str) -> Pose:
        return self.eef_left if arm == "left" else self.eef_right

    @property
    def base(self) -> np.ndarray:
        return self.q_robot[0:3]

    @property
    def torso(self) -> np.ndarray:
        return self.q_robot[3:7]


@dataclass(frozen=True)
class DemoTrajectory:
    frames: tuple[DemoFrame, ...]
    task: str
    rate: float

    def __post_init__(self) -> None:
        if len(self.frames) < 2:
            raise SchemaError("a demonstration needs at least two frames")
        if not self.rate > 0:
            raise SchemaError("record rate must be positive")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise SchemaError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class RelativeTrajectory:
    """Contact-split demo.

    ``pre[arm][k]`` is the eef pose at ordinal ``k + 1`` relative to the demo
    object pose (``k + 1 <= t_c``); ``post[arm][k]`` is the eef pose at
    ordinal ``t_c + k`` relative to the eef pose at ``t_c``.
    """

    t_c: int
    pre: dict
    post: dict
    demo_base_in_obj: Pose
    demo_obj: Pose
    grips: np.ndarray  # (T, 2)
    torso: np.ndarray  # (T, 4)
    task: str = ""
    rate: float = 50.0

    @property
    def length(self) -> int:
        return len(self.grips)


# ---------------------------------------------------------------------------
# file I/O


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _pose_tokens(p: Pose) -> str:
    return _fmt(p.to_array())


def format_frame(f: DemoFrame) -> str:
    parts = [
        str(int(f.t)),
        _fmt(f.q_robot),
        _pose_tokens(f.eef_left),
        _pose_tokens(f.eef_right),
        _pose_tokens(f.obj),
        _fmt([f.grip_left, f.grip_right]),
    ]
    if f.contact_flag is not None:
        parts.append("1" if f.contact_flag else "0")
    return " ".join(parts)


def save_demo(demo: DemoTrajectory, path) -> None:
    lines = [f"{DEMO_SCHEMA} {DEMO_VERSION} rate={demo.rate!r} task={demo.task}"]
    lines += [format_frame(f) for f in demo.frames]
    tmp = Path(str(path) + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def _parse_pose(vals: Sequence[float], what: str, t: int, lineno: int) -> Pose:
    q = np.asarray(vals[3:7])
    n = math.sqrt(float(q @ q))
    if abs(n - 1.0) > QUAT_TOLERANCE:
        raise ParseError(f"frame {t}: {what} quaternion is not unit (norm {n:.6g})", lineno)
    return Pose(np.asarray(vals[:3]), q)


def parse_frame(line: str, lineno: int) -> DemoFrame:
    tokens = line.split()
    n_fixed = 1 + N_Q_ROBOT + 21 + 2
    if len(tokens) not in (n_fixed, n_fixed + 1):
        raise ParseError(f"expected {n_fixed} or {n_fixed + 1} fields, got {len(tokens)}", lineno)
    try:
        t = int(tokens[0])
        vals = [float(v) for v in tokens[1:n_fixed]]
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(f"frame {t}: non-finite value", lineno)
    flag = None
    if len(tokens) == n_fixed + 1:
        if tokens[-1] not in ("0", "1"):
            raise ParseError(f"frame {t}: contact flag must be 0 or 1", lineno)
        flag = tokens[-1] == "1"
    q = np.array(vals[:N_Q_ROBOT])
    k = N_Q_ROBOT
    left = _parse_pose(vals[k : k + 7], "eef_left", t, lineno)
    right = _parse_pose(vals[k + 7 : k + 14], "eef_right", t, lineno)
    obj = _parse_pose(vals[k + 14 : k + 21], "obj", t, lineno)
    return DemoFrame(t, q, left, right, obj, vals[k + 21], vals[k + 22], flag)


def load_demo(path) -> DemoTrajectory:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty demo file", 1)
    m = _HEADER.match(lines[0])
    if not m:
        if lines[0].startswith(DEMO_SCHEMA):
            raise SchemaError(f"malformed header {lines[0]!r}")
        raise ParseError(f"missing '{DEMO_SCHEMA}' header", 1)
    if m.group(1) != DEMO_VERSION:
        raise SchemaError(f"unsupported demo version {m.group(1)!r} (want {DEMO_VERSION})")
    try:
        rate = float(m.group(2))
    except ValueError:
        raise ParseError(f"bad rate {m.group(2)!r}", 1) from None
    frames = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        frames.append(parse_frame(line, i))
    try:
        return DemoTrajectory(tuple(frames), m.group(3), rate)
    except SchemaError as exc:
        raise ParseError(str(exc)) from None


# ---------------------------------------------------------------------------
# contact and relative split


def detect_contact_time(demo: DemoTrajectory, eps_contact: float = DEFAULT_EPS_CONTACT) -> int:
    """1-based ordinal of the first contact frame.

    An explicit contact flag anywhere in the demo takes precedence; otherwise
    the first frame where either end effector is closer than ``eps_contact``
    to the object.
    """
    if any(f.contact_flag is not None for f in demo.frames):
        for k, f in enumerate(demo.frames, start=1):
            if f.contact_flag:
                return k
    else:
        for k, f in enumerate(demo.frames, start=1):
            d = min(np.linalg.norm(f.eef(a).translation - f.obj.translation) for a in ARMS)
            if d < eps_contact:
                return k
    raise NoContact(f"no contact found in demo for task {demo.task!r}")


def to_relative(demo: DemoTrajectory, t_c: int) -> RelativeTrajectory:
    T = len(demo.frames)
    if not 1 <= t_c <= T:
        raise ValueError(f"t_c must lie in [1, {T}], got {t_c}")
    first = demo.frames[0]
    obj = first.obj
    contact = demo.frames[t_c - 1]
    pre = {a: [relative_right(f.eef(a), obj) for f in demo.frames[:t_c]] for a in ARMS}
    post = {a: [relative_right(f.eef(a), contact.eef(a)) for f in demo.frames[t_c - 1 :]] for a in ARMS}
    base = Pose.from_planar(*first.base)
    return RelativeTrajectory(
        t_c=t_c,
        pre=pre,
        post=post,
        demo_base_in_obj=relative_right(base, obj),
        demo_obj=obj,
        grips=np.array([[f.grip_left, f.grip_right] for f in demo.frames]),
        torso=np.array([f.torso for f in demo.frames]),
        task=demo.task,
        rate=demo.rate,
    )


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # rate | discontinuity | limits | schema
    frame: int
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] frame {self.frame}: {self.message}"


def validate_demo(demo: DemoTrajectory, model: RobotModel | None = None, max_jump: float = MAX_JUMP) -> list:
    """Problems that make a demo unusable; an empty list means it is fine."""
    model = model or default_robot_model()
    report: list[Diagnostic] = []
    lo = np.concatenate([model.torso_limits[:, 0], model.arm_lower, model.neck_limits[:, 0]])
    hi = np.concatenate([model.torso_limits[:, 1], model.arm_upper, model.neck_limits[:, 1]])
    prev = None
    for f in demo.frames:
        if f.obj is None:
            report.append(Diagnostic("schema", f.t, "missing object pose"))
        if len(f.q_robot) != N_Q_ROBOT:
            report.append(Diagnostic("schema", f.t, f"q_robot has {len(f.q_robot)} values, want {N_Q_ROBOT}"))
        else:
            q = np.asarray(f.q_robot[3:])
            bad = np.nonzero((q < lo - 1e-9) | (q > hi + 1e-9))[0]
            if bad.size:
                report.append(Diagnostic("limits", f.t, f"joint channels {list(bad + 3)} outside limits"))
        if prev is not None:
            if f.t - prev.t != 1:
                report.append(Diagnostic("rate", f.t, f"index gap of {f.t - prev.t} frames"))
            for name in ("eef_left", "eef_right", "obj"):
                a, b = getattr(prev, name), getattr(f, name)
                if a is None or b is None:
                    continue
                jump = pose_distance(a, b).position_error
                if jump > max_jump:
                    report.append(Diagnostic("discontinuity", f.t, f"{name} jumps {jump:.3f} m"))
        prev = f
    return report


# ---------------------------------------------------------------------------
# relative trajectory files (JSON)


def _poses(ps) -> list:
    return [p.to_array().tolist() for p in ps]


def save_relative(rel: RelativeTrajectory, path, extra: dict | None = None) -> None:
    doc = {
        "schema": REL_SCHEMA,
        "task": rel.task,
        "rate": rel.rate,
        "t_c": rel.t_c,
        "demo_base_in_obj": rel.demo_base_in_obj.to_array().tolist(),
        "demo_obj": rel.demo_obj.to_array().tolist(),
        "pre": {a: _poses(rel.pre[a]) for a in ARMS},
        "post": {a: _poses(rel.post[a]) for a in ARMS},
        "grips": rel.grips.tolist(),
        "torso": rel.torso.tolist(),
    }
    if extra:
        doc.update(extra)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1) + "\n")
    tmp.replace(path)


def load_relative(path) -> RelativeTrajectory:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != REL_SCHEMA:
        raise SchemaError(f"unsupported relative trajectory schema {doc.get('schema')!r}")
    return RelativeTrajectory(
        t_c=int(doc["t_c"]),
        pre={a: [Pose.from_array(v) for v in doc["pre"][a]] for a in ARMS},
        post={a: [Pose.from_array(v) for v in doc["post"][a]] for a in ARMS},
        demo_base_in_obj=Pose.from_array(doc["demo_base_in_obj"]),
        demo_obj=Pose.from_array(doc["demo_obj"]),
        grips=np.array(doc["grips"], dtype=float),
        torso=np.array(doc["torso"], dtype=float),
        task=doc["task"],
        rate=float(doc["rate"]),
    )


__all__ = [
    "DemoFrame",
    "DemoTrajectory",
    "Diagnostic",
    "NoContact",
    "ParseError",
    "RelativeTrajectory",
    "SchemaError",
    "detect_contact_time",
    "load_demo",
    "load_relative",
    "save_demo",
    "save_relative",
    "to_relative",
    "validate_demo",
]
