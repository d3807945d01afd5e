"""Three-stage episode synthesis from one relative demonstration.

An episode walks the robot to the demo's object-relative start (locomotion),
replays the object-centric hand poses behind an interpolated lead-in
(pre-manipulation), then replays the proprioception-centric poses anchored at
the executed contact pose (manipulation).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .control import ArmDriver, advance
from .dataset import TrajectoryRecord
from .demo import DEFAULT_EPS_CONTACT, DemoTrajectory, RelativeTrajectory, detect_contact_time, to_relative
from .gaze import GazeGains
from .robot import ARMS, NotConverged, RobotModel, default_robot_model
from .se3 import Pose, compose, interpolate, inverse, pose_distance
from .tasks import RegionSpec, TaskSpec, evaluate_success, get_task, region_params
from .world import HighLevelCommand, TrackingConfig, WorldState, default_state, observation, sample_initial_state

STAGES = ("locomotion", "pre", "manip")
MANIP_FORMULAS = ("consistent", "inverse-motion")


@dataclass(frozen=True)
class SynthesisConfig:
    k_lin: float = 1.5
    k_yaw: float = 2.0
    v_max: float = 0.6
    omega_max: float = 1.0
    d_thresh: float = 0.05
    yaw_thresh: float = 0.1
    interp_max_step: float = 0.02
    max_episode_steps: int = 3000
    max_locomotion_steps: int = 1000
    eps_contact: float = DEFAULT_EPS_CONTACT
    record_every: int = 5
    manip_formula: str = "consistent"
    lag_compensation: bool = True

    def __post_init__(self) -> None:
        for name in ("k_lin", "k_yaw", "v_max", "omega_max", "d_thresh", "yaw_thresh", "interp_max_step", "eps_contact"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_episode_steps", "max_locomotion_steps", "record_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.manip_formula not in MANIP_FORMULAS:
            raise ValueError(f"manip_formula must be one of {MANIP_FORMULAS}")


@dataclass
class TargetEefTrajectory:
    poses: dict  # arm -> list[Pose]
    grips: np.ndarray  # (n, 2)
    torso: np.ndarray  # (n, 4)
    stages: list

    def __len__(self) -> int:
        return len(self.stages)

    def __add__(self, other: TargetEefTrajectory) -> TargetEefTrajectory:
        return TargetEefTrajectory(
            {a: self.poses[a] + other.poses[a] for a in ARMS},
            np.vstack([self.grips, other.grips]),
            np.vstack([self.torso, other.torso]),
            self.stages + other.stages,
        )


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# stage builders


def _clamp(v: float, limit: float) -> float:
    return min(max(float(v), -limit), limit)


def base_target_from_demo(rel: RelativeTrajectory, current_obj: Pose) -> Pose:
    """Planar base pose that puts the robot where the demo started, relative to the object."""
    return compose(rel.demo_base_in_obj, current_obj).planar()


def locomotion_controller(
    state: WorldState, target: Pose, cfg: SynthesisConfig, hold: ArmDriver | None = None
) -> HighLevelCommand:
    """Proportional velocity command toward a planar target; zero inside the thresholds."""
    x, y, yaw = state.base
    dx = target.translation[0] - x
    dy = target.translation[1] - y
    e_yaw = _wrap(target.yaw() - yaw)
    if math.hypot(dx, dy) < cfg.d_thresh and abs(e_yaw) < cfg.yaw_thresh:
        v = (0.0, 0.0, 0.0)
    else:
        c, s = math.cos(yaw), math.sin(yaw)
        ex, ey = c * dx + s * dy, -s * dx + c * dy
        v = (
            _clamp(cfg.k_lin * ex, cfg.v_max),
            _clamp(cfg.k_lin * ey, cfg.v_max),
            _clamp(cfg.k_yaw * e_yaw, cfg.omega_max),
        )
    if hold is not None:
        return hold.hold_command(v)
    return HighLevelCommand(*v, *state.torso, state.q_arms.copy(), *state.grippers)


def premanip_targets(
    rel: RelativeTrajectory,
    current_obj: Pose,
    current_eef: dict,
    cfg: SynthesisConfig,
    current_torso: np.ndarray | None = None,
) -> TargetEefTrajectory:
    """Interpolated lead-in followed by the object-centric replay up to contact."""
    replay = {a: [compose(p, current_obj) for p in rel.pre[a]] for a in ARMS}
    disp = max(float(np.linalg.norm(replay[a][0].translation - current_eef[a].translation)) for a in ARMS)
    K = max(1, math.ceil(disp / cfg.interp_max_step))
    lead = {a: [interpolate(current_eef[a], replay[a][0], k / K) for k in range(1, K + 1)] for a in ARMS}
    torso0 = rel.torso[0] if current_torso is None else np.asarray(current_torso, dtype=float)
    lead_torso = np.array([torso0 + (k / K) * (rel.torso[0] - torso0) for k in range(1, K + 1)])
    n = rel.t_c
    return TargetEefTrajectory(
        {a: lead[a] + replay[a] for a in ARMS},
        np.vstack([np.repeat(rel.grips[:1], K, axis=0), rel.grips[:n]]),
        np.vstack([lead_torso, rel.torso[:n]]),
        ["pre"] * (K + n),
    )


def manip_targets(
    rel: RelativeTrajectory, eef_at_contact: dict, formula: str = "consistent"
) -> TargetEefTrajectory:
    """Proprioception-centric replay anchored at the executed contact pose.

    ``consistent`` composes the stored motion onto the contact pose;
    ``inverse-motion`` applies the inverse of the stored motion instead.
    """
    if formula == "consistent":
        poses = {a: [compose(p, eef_at_contact[a]) for p in rel.post[a]] for a in ARMS}
    elif formula == "inverse-motion":
        poses = {a: [compose(eef_at_contact[a], inverse(p)) for p in rel.post[a]] for a in ARMS}
    else:
        raise ValueError(f"unknown manip formula {formula!r}")
    k = rel.t_c - 1
    return TargetEefTrajectory(poses, rel.grips[k:].copy(), rel.torso[k:].copy(), ["manip"] * (len(rel.grips) - k))


# ---------------------------------------------------------------------------
# episode


@dataclass
class TickTrace:
    tick: int
    before: WorldState
    rng_state: dict | None
    action: np.ndarray
    after: WorldState


@dataclass
class EpisodeResult:
    record: TrajectoryRecord
    initial: WorldState
    final: WorldState
    stage_ticks: tuple = (0, 0)  # controller tick at which pre and manip begin
    eef_track: list = field(default_factory=list)  # per tick {arm: Pose} once tracing
    trace: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.record.success

    @property
    def failure_reason(self) -> str:
        return self.record.failure_reason


class _Runner:
    def __init__(self, model, task, tracking, gains, cfg, seed, trace):
        self.model = model
        self.task = task
        self.tracking = tracking
        self.gains = gains
        self.cfg = cfg
        self.rng = np.random.default_rng([int(seed), 1])
        self.trace = trace
        self.obs, self.actions, self.steps = [], [], []
        self.eef_track: list = []
        self.ticks: list[TickTrace] = []

    def tick(self, state: WorldState, cmd: HighLevelCommand) -> WorldState:
        if state.tick >= self.cfg.max_episode_steps:
            raise _Budget()
        record = state.tick % self.cfg.record_every == 0
        action = cmd.to_vector() if record or self.trace else None
        if record:
            self.obs.append(observation(self.model, state, self.task.primary))
            self.actions.append(action)
            self.steps.append(state.tick)
        rng_state = self.rng.bit_generator.state if (self.trace and record) else None
        new = advance(self.model, state, cmd, self.tracking, self.rng, self.gains, self.task.primary)
        if self.trace:
            self.eef_track.append(new.eef(self.model))
            if record:
                self.ticks.append(TickTrace(state.tick, state, rng_state, action, new))
        return new


class _Budget(Exception):
    pass


def _run_targets(runner: _Runner, driver: ArmDriver, state: WorldState, targets: TargetEefTrajectory, lag: bool):
    for k in range(len(targets)):
        goal = {a: targets.poses[a][k] for a in ARMS}
        torso = targets.torso[k]
        q = driver.solve(state.base, torso, goal)
        if lag:
            cmd = driver.command(q, torso, targets.grips[k])
        else:
            driver.command(q, torso, targets.grips[k])
            cmd = driver.hold_command()
        state = runner.tick(state, cmd)
    return state


def synthesize_episode(
    model: RobotModel,
    task: TaskSpec,
    region: RegionSpec,
    rel: RelativeTrajectory,
    cfg: SynthesisConfig | None = None,
    tracking: TrackingConfig | None = None,
    seed: int = 0,
    gains: GazeGains | None = None,
    trace: bool = False,
    initial_state: WorldState | None = None,
) -> EpisodeResult:
    """Generate one candidate episode; failures are reported, not raised."""
    cfg = cfg or SynthesisConfig()
    tracking = tracking or TrackingConfig()
    gains = gains or GazeGains()
    state = initial_state if initial_state is not None else sample_initial_state(model, task, region, seed)
    initial = state
    runner = _Runner(model, task, tracking, gains, cfg, seed, trace)
    driver = ArmDriver.hold(model, tracking, state)
    bounds: list = [None, None]  # record index where pre and manip begin
    ticks = [0, 0]
    reason = ""
    try:
        target = base_target_from_demo(rel, state.objects[task.primary])
        for n in range(cfg.max_locomotion_steps + 1):
            cmd = locomotion_controller(state, target, cfg, hold=driver)
            if cmd.v_x == 0.0 and cmd.v_y == 0.0 and cmd.omega == 0.0:
                break
            if n == cfg.max_locomotion_steps:
                raise _Timeout()
            state = runner.tick(state, cmd)

        bounds[0], ticks[0] = len(runner.steps), state.tick
        pre = premanip_targets(
            rel, state.objects[task.primary], state.eef(model), cfg, current_torso=driver.torso_des
        )
        state = _run_targets(runner, driver, state, pre, cfg.lag_compensation)

        bounds[1], ticks[1] = len(runner.steps), state.tick
        manip = manip_targets(rel, state.eef(model), cfg.manip_formula)
        state = _run_targets(runner, driver, state, manip, cfg.lag_compensation)
        if not evaluate_success(task, [initial, state], model):
            reason = "PredicateFalse"
    except NotConverged:
        reason = "IkNotConverged"
    except _Timeout:
        reason = "LocomotionTimeout"
    except _Budget:
        reason = "StepBudgetExceeded"
    n = len(runner.steps)
    # stages never reached start at the end of the record
    bounds = [n if b is None else min(b, n) for b in bounds]
    record = TrajectoryRecord(
        task=task.name,
        region=region.name,
        seed=int(seed),
        success=not reason,
        failure_reason=reason,
        obs=np.array(runner.obs).reshape(n, -1) if n else np.zeros((0, 41)),
        actions=np.array(runner.actions).reshape(n, -1) if n else np.zeros((0, 21)),
        steps=np.array(runner.steps, dtype=np.int64),
        stage_bounds=(bounds[0], bounds[1]),
    )
    return EpisodeResult(record, initial, state, tuple(ticks), runner.eef_track, runner.ticks)


class _Timeout(Exception):
    pass


def state_from_frame(model: RobotModel, task: TaskSpec, frame) -> WorldState:
    """World state matching a demo frame: its joints, grips and primary object pose, at rest."""
    q = np.asarray(frame.q_robot, dtype=float)
    n = model.n_arm_joints
    state = default_state(model, task)
    state.base = q[:3].copy()
    state.torso = q[3:7].copy()
    state.q_arms = q[7 : 7 + n].copy()
    state.neck = q[7 + n : 9 + n].copy()
    state.grippers = np.array([frame.grip_left, frame.grip_right], dtype=float)
    state.objects = dict(state.objects)
    state.objects[task.primary] = frame.obj
    return state


@dataclass(frozen=True)
class ReplayReport:
    success: bool
    failure_reason: str
    max_position_error: float
    max_rotation_error: float
    compared_frames: int
    lead_in: int

    def within(self, position_tol: float = 0.01, rotation_tol: float = 0.05) -> bool:
        return (
            self.success
            and self.max_position_error <= position_tol
            and self.max_rotation_error <= rotation_tol
        )


def identity_replay(
    model: RobotModel,
    task: TaskSpec,
    demo: DemoTrajectory,
    cfg: SynthesisConfig | None = None,
    gains: GazeGains | None = None,
    time_constant: float = 0.1,
) -> ReplayReport:
    """Regenerate the demo from its own first frame without tracking noise.

    Executed end-effector poses are compared with the demo's after the
    interpolation lead-in: pre-contact frames 1..t_c one per tick, then the
    manipulation stage, which restarts at frame t_c.
    """
    cfg = cfg or SynthesisConfig()
    tracking = TrackingConfig(time_constant, 0.0, 1.0 / demo.rate)
    rel = to_relative(demo, detect_contact_time(demo, cfg.eps_contact))
    initial = state_from_frame(model, task, demo.frames[0])
    res = synthesize_episode(
        model, task, RegionSpec.degenerate(task), rel, cfg, tracking, 0, gains, trace=True, initial_state=initial
    )
    loco, manip_start = res.stage_ticks
    lead = manip_start - loco - rel.t_c if not res.failure_reason else 0
    pairs = []
    for j in range(1, rel.t_c + 1):
        pairs.append((loco + lead - 1 + j, j))
    for i in range(len(demo) - rel.t_c + 1):
        pairs.append((manip_start + i, rel.t_c + i))
    worst_p = worst_r = 0.0
    compared = 0
    for k, j in pairs:
        if k >= len(res.eef_track):
            break
        for arm in ARMS:
            d = pose_distance(res.eef_track[k][arm], demo.frames[j - 1].eef(arm))
            worst_p = max(worst_p, d.position_error)
            worst_r = max(worst_r, d.rotation_error)
        compared += 1
    if compared < len(pairs):
        worst_p = worst_r = math.inf
    return ReplayReport(res.success, res.failure_reason, worst_p, worst_r, compared, lead)


def episode_seed(base_seed: int, index: int) -> int:
    """Independent per-episode seed derived from a run seed."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# estimator facade


class EpisodeGenerator(BaseEstimator):
    """Fit on one demonstration, then generate randomized episodes.

    Parameters mirror :class:`SynthesisConfig` and :class:`TrackingConfig`;
    ``region`` is a region id (``R1``..``R3``) or ``"default"`` for the
    degenerate region at the task's default placement.
    """

    def __init__(
        self,
        task: str = "GraspCube",
        region: str = "R1",
        tracking_noise_std: float = 0.01,
        time_constant: float = 0.1,
        control_dt: float = 0.02,
        k_lin: float = 1.5,
        k_yaw: float = 2.0,
        v_max: float = 0.6,
        omega_max: float = 1.0,
        d_thresh: float = 0.05,
        yaw_thresh: float = 0.1,
        interp_max_step: float = 0.02,
        max_episode_steps: int = 3000,
        max_locomotion_steps: int = 1000,
        eps_contact: float = DEFAULT_EPS_CONTACT,
        manip_formula: str = "consistent",
        lag_compensation: bool = True,
        gaze_k_yaw: float = 2.0,
        gaze_k_pitch: float = 2.0,
        gaze_omega_max: float = 1.5,
        seed: int = 0,
    ):
        self.task = task
        self.region = region
        self.tracking_noise_std = tracking_noise_std
        self.time_constant = time_constant
        self.control_dt = control_dt
        self.k_lin = k_lin
        self.k_yaw = k_yaw
        self.v_max = v_max
        self.omega_max = omega_max
        self.d_thresh = d_thresh
        self.yaw_thresh = yaw_thresh
        self.interp_max_step = interp_max_step
        self.max_episode_steps = max_episode_steps
        self.max_locomotion_steps = max_locomotion_steps
        self.eps_contact = eps_contact
        self.manip_formula = manip_formula
        self.lag_compensation = lag_compensation
        self.gaze_k_yaw = gaze_k_yaw
        self.gaze_k_pitch = gaze_k_pitch
        self.gaze_omega_max = gaze_omega_max
        self.seed = seed

    def synthesis_config(self) -> SynthesisConfig:
        names = SynthesisConfig.__dataclass_fields__
        return SynthesisConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def tracking_config(self) -> TrackingConfig:
        return TrackingConfig(self.time_constant, self.tracking_noise_std, self.control_dt)

    def gaze_gains(self) -> GazeGains:
        return GazeGains(self.gaze_k_yaw, self.gaze_k_pitch, self.gaze_omega_max)

    def fit(self, demo: DemoTrajectory | RelativeTrajectory, y=None, model: RobotModel | None = None):
        self.model_ = model or default_robot_model()
        self.task_ = get_task(self.task)
        self.region_ = (
            RegionSpec.degenerate(self.task_) if self.region == "default" else region_params(self.region)
        )
        self.cfg_ = self.synthesis_config()
        self.tracking_ = self.tracking_config()
        self.gains_ = self.gaze_gains()
        if isinstance(demo, RelativeTrajectory):
            self.rel_ = demo
        else:
            self.rel_ = to_relative(demo, detect_contact_time(demo, self.eps_contact))
        return self

    def episode(self, index: int, trace: bool = False) -> EpisodeResult:
        check_is_fitted(self, "rel_")
        return synthesize_episode(
            self.model_,
            self.task_,
            self.region_,
            self.rel_,
            self.cfg_,
            self.tracking_,
            episode_seed(self.seed, index),
            self.gains_,
            trace=trace,
        )

    def generate(self, n_episodes: int, start: int = 0):
        """Yield ``n_episodes`` results in index order."""
        for i in range(start, start + n_episodes):
            yield self.episode(i)

    def resolved_config(self) -> dict:
        return {"generator": self.get_params(), "synthesis": asdict(self.synthesis_config())}
