"""Glue between the modules: dataset generation, training from disk, the size ladder."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .dataset import FAILURE_REASONS, Manifest, append_trajectory, init_dataset, read_all, read_manifest
from .demo import DemoTrajectory, RelativeTrajectory
from .evaluation import closed_loop_eval
from .policy import Policy, PolicyConfig, fit_normalizer, init_policy, train
from .robot import default_robot_model
from .synthesis import EpisodeGenerator
from .tasks import get_task, region_params


def make_generator(cfg: RunConfig, task: str, region: str, seed: int) -> EpisodeGenerator:
    t = cfg.sections["tracking"]
    s = cfg.sections["synthesis"]
    g = cfg.sections["gaze"]
    return EpisodeGenerator(
        task=task,
        region=region,
        tracking_noise_std=t["tracking_noise_std"],
        time_constant=t["time_constant"],
        control_dt=t["control_dt"],
        gaze_k_yaw=g["k_yaw"],
        gaze_k_pitch=g["k_pitch"],
        gaze_omega_max=g["omega_max"],
        seed=seed,
        **{k: v for k, v in s.items()},
    )


# worker-process state for parallel generation
_WORKER: dict = {}


def _init_worker(params: dict, source) -> None:
    _WORKER["gen"] = EpisodeGenerator(**params).fit(source)


def _work(index: int):
    return _WORKER["gen"].episode(index).record


def _records(gen: EpisodeGenerator, source, start: int, count: int, jobs: int):
    if jobs <= 1:
        for i in range(start, start + count):
            yield gen.episode(i).record
        return
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(gen.get_params(), source)) as pool:
        yield from pool.map(_work, range(start, start + count), chunksize=8)


def generate_dataset(
    gen: EpisodeGenerator,
    source: DemoTrajectory | RelativeTrajectory,
    dataset_dir,
    episodes: int,
    provenance: dict,
    jobs: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> Manifest:
    """Write ``episodes`` consecutive episodes (index order, independent of ``jobs``)."""
    gen.fit(source)
    init_dataset(dataset_dir, provenance)
    m = read_manifest(dataset_dir)
    for i, rec in enumerate(_records(gen, source, 0, episodes, jobs)):
        m = append_trajectory(dataset_dir, rec)
        if progress is not None:
            progress(i + 1, m.successes)
    return m


def generate_successes(
    gen: EpisodeGenerator,
    source: DemoTrajectory | RelativeTrajectory,
    dataset_dir,
    successes: int,
    max_episodes: int,
    provenance: dict,
    jobs: int = 1,
) -> Manifest:
    """Generate until ``successes`` successful episodes exist (or ``max_episodes`` were tried)."""
    gen.fit(source)
    init_dataset(dataset_dir, provenance)
    m = read_manifest(dataset_dir)
    start = 0
    while m.successes < successes and start < max_episodes:
        batch = min(max(8, 2 * (successes - m.successes)), max_episodes - start)
        for rec in _records(gen, source, start, batch, jobs):
            m = append_trajectory(dataset_dir, rec)
            if m.successes >= successes:
                break
        start += batch
    return m


def region_report(manifest: Manifest) -> str:
    """CSV rows ``task,region,episodes,successes,rate`` plus per-reason failure counts."""
    groups: dict = {}
    for e in manifest.entries:
        g = groups.setdefault((e.task, e.region), {"n": 0, "ok": 0, **{r: 0 for r in FAILURE_REASONS}})
        g["n"] += 1
        g["ok"] += e.success
        if not e.success:
            g[e.reason] = g.get(e.reason, 0) + 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "region", "episodes", "successes", "success_rate", *FAILURE_REASONS])
    for (task, region), g in sorted(groups.items()):
        rate = repr(g["ok"] / g["n"]) if g["n"] else "n/a"
        w.writerow([task, region, g["n"], g["ok"], rate, *(g[r] for r in FAILURE_REASONS)])
    return buf.getvalue()


def train_from_dataset(dataset_dir, pcfg: PolicyConfig, limit: int | None = None, log=None):
    trajs = list(read_all(dataset_dir))
    if limit is not None:
        trajs = trajs[:limit]
    return train(trajs, pcfg, log=log)


def with_provenance(csv_text: str, provenance: dict) -> str:
    """Prefix a CSV body with a ``# provenance <json>`` comment line."""
    return "# provenance " + json.dumps(provenance, sort_keys=True, separators=(",", ":")) + "\n" + csv_text


# ---------------------------------------------------------------------------
# dataset-size ladder


@dataclass(frozen=True)
class ScalingRow:
    task: str
    size: int
    seed: int
    success_rate: float
    baseline_rate: float


def frozen_baseline(trajectories: Sequence, pcfg: PolicyConfig) -> Policy:
    """The untrained network with the data's normalizers: it emits the mean action."""
    obs_norm, act_norm = fit_normalizer(trajectories)
    act_dim = len(act_norm.mean)
    return init_policy(len(obs_norm.mean), act_dim, pcfg, obs_norm, act_norm)


def run_scaling(
    cfg: RunConfig,
    tasks: Sequence[str],
    sizes: Sequence[int],
    seeds: Sequence[int],
    workdir,
    sources: dict,
    region: str = "R1",
    eval_episodes: int = 50,
    data_seed: int = 0,
    jobs: int = 1,
    log: Callable[[str], None] = lambda s: None,
) -> list[ScalingRow]:
    """Generate one dataset per task, then train and evaluate every (size, seed) pair.

    Smaller sizes use a prefix of the same successful trajectories. Each
    trained policy is compared with the frozen network built from the same
    data at the same seed.
    """
    workdir = Path(workdir)
    model = default_robot_model()
    tracking = cfg.tracking()
    gains = cfg.gaze()
    rows = []
    for task_name in tasks:
        task = get_task(task_name)
        reg = region_params(region)
        ddir = workdir / f"{task_name}_{region}_s{data_seed}"
        need = max(sizes)
        gen = make_generator(cfg, task_name, region, data_seed)
        prov = {"command": "scaling", "task": task_name, "region": region, "seed": data_seed, "config": cfg.to_dict()}
        m = generate_successes(gen, sources[task_name], ddir, need, 20 * need, prov, jobs)
        log(f"{task_name}: {m.successes} successes in {m.count} episodes")
        trajs = list(read_all(ddir))
        for size in sizes:
            subset = trajs[:size]
            if len(subset) < size:
                log(f"{task_name}: only {len(subset)} successes for size {size}")
            for seed in seeds:
                pcfg = cfg.policy("scaling", seed=seed)
                policy, curve = train(subset, pcfg)
                res = closed_loop_eval(policy, task, reg, eval_episodes, seed, model, tracking, gains, pcfg.exec_horizon, jobs=jobs)
                base = closed_loop_eval(
                    frozen_baseline(subset, pcfg), task, reg, eval_episodes, seed, model, tracking, gains, pcfg.exec_horizon,
                    jobs=jobs,
                )
                rows.append(ScalingRow(task_name, size, seed, res.rate, base.rate))
                log(
                    f"{task_name} size={size} seed={seed} loss={curve[-1]:.4g} "
                    f"success={res.rate_text()} baseline={base.rate_text()}"
                )
    return rows


def scaling_csv(rows: Sequence[ScalingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "dataset_size", "seed", "success_rate", "baseline_rate"])
    for r in rows:
        w.writerow([r.task, r.size, r.seed, repr(r.success_rate), repr(r.baseline_rate)])
    return buf.getvalue()


def mean_by_size(rows: Sequence[ScalingRow], task: str) -> list[tuple[int, float]]:
    sizes = sorted({r.size for r in rows if r.task == task})
    return [(s, float(np.mean([r.success_rate for r in rows if r.task == task and r.size == s]))) for s in sizes]
