"""Closed-loop rollouts of a chunked policy through the kinematic world.

The policy acts at ``record_every`` controller ticks (10 Hz over a 50 Hz
world). Every ``exec_horizon`` policy steps it is queried with a fresh
observation and the returned chunk is executed open loop until the next
query; each action is held for ``record_every`` ticks with the neck servoing
on the target.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .control import advance
from .gaze import GazeGains
from .policy import Policy, forward
from .robot import RobotModel, default_robot_model
from .tasks import RegionSpec, TaskSpec, evaluate_success
from .world import HighLevelCommand, TrackingConfig, observation, sample_initial_state


@dataclass(frozen=True)
class EvalResult:
    episodes: int
    successes: int
    flags: tuple = ()

    @property
    def rate(self) -> float | None:
        return None if self.episodes == 0 else self.successes / self.episodes

    def rate_text(self) -> str:
        return "n/a" if self.rate is None else f"{self.rate:.4f}"


def eval_seed(seed: int, index: int) -> int:
    """Per-episode seed for evaluation; a separate stream from generation seeds."""
    return int(np.random.SeedSequence([int(seed), int(index), 2]).generate_state(1, np.uint64)[0] >> 1)


def rollout(
    policy: Policy,
    task: TaskSpec,
    region: RegionSpec,
    seed: int,
    model: RobotModel | None = None,
    tracking: TrackingConfig | None = None,
    gains: GazeGains | None = None,
    exec_horizon: int = 10,
    record_every: int = 5,
    horizon: int | None = None,
) -> bool:
    """One closed-loop episode; returns whether the task predicate held at any policy step."""
    model = model or default_robot_model()
    tracking = tracking or TrackingConfig(tracking_noise_std=0.01)
    gains = gains or GazeGains()
    horizon = task.horizon if horizon is None else horizon
    state = sample_initial_state(model, task, region, seed)
    initial = state
    rng = np.random.default_rng([int(seed), 1])
    n_arm = model.n_arm_joints
    chunk = None
    k = 0  # policy step
    while state.tick < horizon:
        if k % exec_horizon == 0:
            chunk = forward(policy, observation(model, state, task.primary))
        vec = chunk[k % exec_horizon]
        cmd = HighLevelCommand(*vec[:7], vec[7 : 7 + n_arm], vec[-2], vec[-1])
        for _ in range(record_every):
            state = advance(model, state, cmd, tracking, rng, gains, task.primary)
        k += 1
        if evaluate_success(task, [initial, state], model):
            return True
    return False


# worker-process state for parallel evaluation
_CTX: dict = {}


def _init_eval(ctx: dict) -> None:
    _CTX.update(ctx)


def _eval_one(i: int) -> bool:
    c = _CTX
    return rollout(
        c["policy"], c["task"], c["region"], eval_seed(c["seed"], i), c["model"], c["tracking"], c["gains"],
        c["exec_horizon"], horizon=c["horizon"],
    )


def closed_loop_eval(
    policy: Policy,
    task: TaskSpec,
    region: RegionSpec,
    episodes: int,
    seed: int = 0,
    model: RobotModel | None = None,
    tracking: TrackingConfig | None = None,
    gains: GazeGains | None = None,
    exec_horizon: int = 10,
    horizon: int | None = None,
    jobs: int = 1,
) -> EvalResult:
    """Success over ``episodes`` seeded rollouts; the rate is n/a for zero episodes.

    Episodes are independent, so ``jobs > 1`` spreads them over processes
    without changing the result.
    """
    ctx = dict(
        policy=policy, task=task, region=region, seed=seed, model=model or default_robot_model(),
        tracking=tracking, gains=gains, exec_horizon=exec_horizon, horizon=horizon,
    )
    if jobs <= 1 or episodes < 2:
        _init_eval(ctx)
        flags = tuple(_eval_one(i) for i in range(episodes))
    else:
        with ProcessPoolExecutor(min(jobs, episodes), initializer=_init_eval, initargs=(ctx,)) as pool:
            flags = tuple(pool.map(_eval_one, range(episodes), chunksize=4))
    return EvalResult(episodes, sum(flags), flags)
