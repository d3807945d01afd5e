"""Scene templates, initial regions and success predicates for the ten tasks.

Tasks and regions are read from versioned INI files (``data/tasks.ini`` and
``data/regions.ini``). Predicates are registered by id and evaluated on a
sequence of :class:`~demohlm.world.WorldState`; displacement checks compare
the final state against the first one and are measured in the task frame,
i.e. the primary object's initial yaw frame.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .robot import ConfigError, RobotModel, default_robot_model
from .se3 import Pose
from .world import WorldState, contact_radius, default_state

TASKS_SCHEMA = "demohlm-tasks v1"
REGIONS_SCHEMA = "demohlm-regions v1"
END_EFFECTORS = ("rubber", "gripper")
REGION_FIELDS = ("x_robot", "y_robot", "yaw_robot", "dy_obj", "dz_obj", "dzrot_obj")


class _UnknownName(KeyError):
    kind = "name"

    def __str__(self) -> str:
        return f"unknown {self.kind} {self.args[0]!r}"


class UnknownTask(_UnknownName):
    kind = "task"


class UnknownPredicate(_UnknownName):
    kind = "predicate"


class UnknownRegion(_UnknownName):
    kind = "region"


@dataclass(frozen=True)
class RegionSpec:
    """Uniform ranges for the robot placement and the object offsets."""

    name: str
    x_robot: tuple[float, float]
    y_robot: tuple[float, float]
    yaw_robot: tuple[float, float]
    dy_obj: tuple[float, float]
    dz_obj: tuple[float, float]
    dzrot_obj: tuple[float, float]

    def __post_init__(self) -> None:
        for f in REGION_FIELDS:
            lo, hi = getattr(self, f)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ConfigError(f"region {self.name}: bad range {f}=({lo}, {hi})")

    def ranges(self) -> list[tuple[float, float]]:
        return [getattr(self, f) for f in REGION_FIELDS]

    def contains(self, other: RegionSpec) -> bool:
        """True when every range of ``other`` lies inside the matching range here."""
        return all(
            a[0] <= b[0] and b[1] <= a[1] for a, b in zip(self.ranges(), other.ranges())
        )

    @classmethod
    def degenerate(cls, task: TaskSpec, name: str = "default") -> RegionSpec:
        """Zero-width region pinned at the task's default robot placement."""
        x, y, yaw = task.robot_default
        return cls(name, (x, x), (y, y), (yaw, yaw), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0))


@dataclass(frozen=True)
class ObjectSpec:
    default_pose: Pose
    extents: tuple[float, float, float]
    pushable: bool = False


@dataclass(frozen=True)
class TaskSpec:
    name: str
    objects: dict
    primary: str
    end_effector: str
    predicate: str
    thresholds: dict = field(default_factory=dict)
    horizon: int = 500
    robot_default: tuple[float, float, float] = (-0.45, 0.0, 0.0)
    table_height: float = 0.75

    def __post_init__(self) -> None:
        if self.primary not in self.objects:
            raise ConfigError(f"task {self.name}: primary object {self.primary!r} not defined")
        if self.end_effector not in END_EFFECTORS:
            raise ConfigError(f"task {self.name}: end effector must be one of {END_EFFECTORS}")
        if self.predicate not in PREDICATES:
            raise UnknownPredicate(self.predicate)
        for k, v in self.thresholds.items():
            if not math.isfinite(v):
                raise ConfigError(f"task {self.name}: threshold {k} is not finite")
        if self.horizon < 1:
            raise ConfigError(f"task {self.name}: horizon must be positive")


# ---------------------------------------------------------------------------
# config loading

_PI_TERM = re.compile(r"^([+-]?)(\d*\.?\d*)\*?pi(?:/(\d+(?:\.\d+)?))?$")


def _number(token: str) -> float:
    token = token.strip()
    m = _PI_TERM.match(token)
    if m:
        sign = -1.0 if m.group(1) == "-" else 1.0
        coef = float(m.group(2)) if m.group(2) else 1.0
        div = float(m.group(3)) if m.group(3) else 1.0
        return sign * coef * math.pi / div
    return float(token)


def _numbers(text: str, n: int) -> tuple[float, ...]:
    vals = tuple(_number(t) for t in text.split())
    if len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _read_ini(path, resource: str, schema: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        cp.read_string(resources.files("demohlm.data").joinpath(resource).read_text())
    else:
        with open(Path(path)) as fh:
            cp.read_file(fh)
    got = cp.get("meta", "schema", fallback=None)
    if got != schema:
        raise ConfigError(f"unsupported schema {got!r} in {path or resource} (want {schema!r})")
    return cp


def _parse_object(text: str) -> ObjectSpec:
    parts = [p.strip() for p in text.split("|")]
    if len(parts) != 3 or parts[2] not in ("static", "pushable"):
        raise ConfigError(f"bad object line {text!r}")
    pose = Pose.from_array(np.array(_numbers(parts[0], 7)))
    return ObjectSpec(pose, _numbers(parts[1], 3), parts[2] == "pushable")


def load_tasks(path=None) -> dict[str, TaskSpec]:
    cp = _read_ini(path, "tasks.ini", TASKS_SCHEMA)
    tasks = {}
    for section in cp.sections():
        if not section.startswith("task."):
            continue
        sec = cp[section]
        name = section[len("task."):]
        try:
            tasks[name] = TaskSpec(
                name=name,
                objects={k[len("object."):]: _parse_object(v) for k, v in sec.items() if k.startswith("object.")},
                primary=sec["primary"],
                end_effector=sec["end_effector"],
                predicate=sec["predicate"],
                thresholds={k[len("threshold."):]: float(v) for k, v in sec.items() if k.startswith("threshold.")},
                horizon=sec.getint("horizon"),
                robot_default=_numbers(sec["robot_default"], 3),
                table_height=sec.getfloat("table_height"),
            )
        except KeyError as exc:
            if isinstance(exc, UnknownPredicate):
                raise
            raise ConfigError(f"{section}: missing key {exc}") from None
    return tasks


def load_regions(path=None) -> dict[str, RegionSpec]:
    cp = _read_ini(path, "regions.ini", REGIONS_SCHEMA)
    out = {}
    for section in cp.sections():
        if not section.startswith("region."):
            continue
        name = section[len("region."):]
        try:
            out[name] = RegionSpec(name, *(_numbers(cp[section][f], 2) for f in REGION_FIELDS))
        except KeyError as exc:
            raise ConfigError(f"{section}: missing key {exc}") from None
    return out


_TASKS: dict | None = None
_REGIONS: dict | None = None


def task_names() -> list[str]:
    return list(_bundled_tasks())


def _bundled_tasks() -> dict:
    global _TASKS
    if _TASKS is None:
        _TASKS = load_tasks()
    return _TASKS


def get_task(name: str) -> TaskSpec:
    try:
        return _bundled_tasks()[name]
    except KeyError:
        raise UnknownTask(name) from None


def region_params(region_id: str) -> RegionSpec:
    global _REGIONS
    if _REGIONS is None:
        _REGIONS = load_regions()
    try:
        return _REGIONS[region_id]
    except KeyError:
        raise UnknownRegion(region_id) from None


def make_scene(task_name: str, model: RobotModel | None = None) -> tuple[TaskSpec, WorldState]:
    task = get_task(task_name)
    return task, default_state(model or default_robot_model(), task)


# ---------------------------------------------------------------------------
# predicates


@dataclass(frozen=True)
class _Ctx:
    task: TaskSpec
    model: RobotModel
    first: WorldState
    last: WorldState

    def obj(self, oid: str | None = None) -> np.ndarray:
        return self.last.objects[oid or self.task.primary].translation

    def hand(self, arm: str) -> np.ndarray:
        return self.last.eef(self.model)[arm].translation

    def closed(self, arm: str) -> bool:
        closed, opened = self.model.gripper_limits
        value = self.last.grippers[0 if arm == "left" else 1]
        mid = 0.5 * (closed + opened)
        return value < mid if closed < opened else value > mid

    def holds(self, arm: str, oid: str | None = None) -> bool:
        att = self.last.attachments.get(oid or self.task.primary)
        return att is not None and att[0] == arm

    def table(self) -> float:
        """Support height, shifted with the primary object's initial vertical offset."""
        z0 = self.first.objects[self.task.primary].translation[2]
        return self.task.table_height + z0 - self.task.objects[self.task.primary].default_pose.translation[2]

    def task_frame_delta(self) -> np.ndarray:
        """Primary object displacement expressed in its initial yaw frame."""
        start = self.first.objects[self.task.primary]
        d = self.obj() - start.translation
        c, s = math.cos(start.yaw()), math.sin(start.yaw())
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])

    def th(self, key: str) -> float:
        return self.task.thresholds[key]


def _lift_box(c: _Ctx) -> bool:
    pelvis = c.last.torso_pose().translation
    return (
        np.linalg.norm(pelvis - c.obj()) < c.th("max_pelvis_distance")
        and c.obj()[2] > c.th("min_height")
    )


def _press_cube(c: _Ctx) -> bool:
    return np.linalg.norm(c.hand("right") - c.obj()) < c.th("max_hand_distance")


def _push_cube(c: _Ctx) -> bool:
    return c.task_frame_delta()[1] > c.th("min_displacement")


def _handover(c: _Ctx) -> bool:
    return np.linalg.norm(c.hand("left") - c.obj()) < c.th("max_hand_distance") and c.obj()[2] < c.table()


def _grasp_cube(c: _Ctx) -> bool:
    base = c.last.base
    d = c.obj()[:2] - base[:2]
    x_in_base = math.cos(base[2]) * d[0] + math.sin(base[2]) * d[1]
    return (
        c.closed("right")
        and x_in_base < c.th("max_base_x")
        and c.obj()[2] > c.table() + c.th("min_lift")
    )


def _open_cabinet(c: _Ctx) -> bool:
    moved = np.linalg.norm(c.obj() - c.first.objects[c.task.primary].translation)
    return c.closed("right") and moved > c.th("min_displacement")


def _push_cart(c: _Ctx) -> bool:
    r = contact_radius(c.model, c.last, c.task.primary)
    return all(c.closed(a) and np.linalg.norm(c.hand(a) - c.obj()) <= r for a in ("left", "right"))


def _erase_board(c: _Ctx) -> bool:
    return c.holds("right") and c.task_frame_delta()[1] > c.th("min_displacement")


def _pour_water(c: _Ctx) -> bool:
    others = [k for k in c.last.objects if k != c.task.primary]
    if not others:
        return False
    gap = np.linalg.norm(c.obj()[:2] - c.obj(others[0])[:2])
    return c.holds("right") and gap < c.th("max_horizontal_distance")


def _exchange_cube(c: _Ctx) -> bool:
    return c.holds("left") and abs(c.task_frame_delta()[1]) > c.th("min_displacement")


PREDICATES: dict[str, Callable[[_Ctx], bool]] = {
    "lift_box": _lift_box,
    "press_cube": _press_cube,
    "push_cube": _push_cube,
    "handover": _handover,
    "grasp_cube": _grasp_cube,
    "open_cabinet": _open_cabinet,
    "push_cart": _push_cart,
    "erase_board": _erase_board,
    "pour_water": _pour_water,
    "exchange_cube": _exchange_cube,
}


def evaluate_success(
    task: TaskSpec, history: Sequence[WorldState], model: RobotModel | None = None
) -> bool:
    """Evaluate the task predicate on the final state of ``history``."""
    if len(history) == 0:
        raise ValueError("history must contain at least one state")
    try:
        fn = PREDICATES[task.predicate]
    except KeyError:
        raise UnknownPredicate(task.predicate) from None
    ctx = _Ctx(task, model or default_robot_model(), history[0], history[-1])
    return bool(fn(ctx))
