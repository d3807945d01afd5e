"""Command-line entry point.

Exit codes: 0 success, 1 domain error (message from the failing module),
2 usage error (bad flags, missing input paths).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset as ds
from .config import ConfigError, RunConfig
from .demo import NoContact, ParseError, SchemaError, load_demo, load_relative, save_demo, save_relative
from .demo import detect_contact_time, to_relative, validate_demo
from .evaluation import closed_loop_eval
from .pipeline import (
    frozen_baseline,
    generate_dataset,
    make_generator,
    mean_by_size,
    region_report,
    run_scaling,
    scaling_csv,
    train_from_dataset,
    with_provenance,
)
from .policy import CheckpointError, DimensionMismatch, EmptyDataset, NonFiniteLoss, load_policy, loss_csv, save_policy
from .robot import NotConverged, default_robot_model
from .scripted import SCRIPTS, make_demo
from .synthesis import identity_replay
from .tasks import UnknownRegion, UnknownTask, get_task, region_params, task_names

log = logging.getLogger("demohlm")

DATA_ENV = "DEMOHLM_DATA"

DOMAIN_ERRORS = (
    ParseError,
    SchemaError,
    NoContact,
    NotConverged,
    ds.ChecksumMismatch,
    ds.SchemaError,
    EmptyDataset,
    NonFiniteLoss,
    DimensionMismatch,
    CheckpointError,
    UnknownTask,
    UnknownRegion,
    FileExistsError,
)

# flags that change artifact contents; output locations and worker counts do not
REPRODUCIBLE = {
    "make-demo": ("task",),
    "ingest": ("demo", "task"),
    "generate": ("task", "region", "episodes", "seed", "demo", "rel"),
    "train": ("dataset", "seed", "limit"),
    "eval": ("checkpoint", "task", "region", "episodes", "seed", "baseline_from"),
    "scaling": ("tasks", "sizes", "seeds", "region", "eval_episodes", "data_seed"),
    "stats": ("dataset",),
    "replay-check": ("task", "demo"),
}


class UsageError(Exception):
    pass


def data_root() -> Path:
    return Path(os.environ.get(DATA_ENV, "demohlm_data"))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file merged over the packaged defaults")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="config override")
    common.add_argument("--from-artifact", help="reuse the provenance embedded in an artifact")
    common.add_argument("-q", "--quiet", action="store_true", help="do not log the resolved config")

    p = argparse.ArgumentParser(prog="demohlm", description="Single-demo data synthesis and chunked BC.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("make-demo", parents=[common], help="record a scripted seed demonstration")
    s.add_argument("--task")
    s.add_argument("--out", required=True)

    s = sub.add_parser("ingest", parents=[common], help="demo file -> relative trajectory + diagnostics")
    s.add_argument("--demo")
    s.add_argument("--task", help="defaults to the task named in the demo header")
    s.add_argument("--out", required=True)

    s = sub.add_parser("generate", parents=[common], help="synthesize episodes into a dataset")
    s.add_argument("--task")
    s.add_argument("--region")
    s.add_argument("--episodes", type=int)
    s.add_argument("--seed", type=int)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--demo", help="demo file (default: the bundled scripted demo)")
    src.add_argument("--rel", help="relative trajectory file from ingest")
    s.add_argument("--dataset", help=f"output directory (default: ${DATA_ENV}/<task>_<region>_s<seed>)")
    s.add_argument("--report", help="write the region report CSV here as well")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("train", parents=[common], help="dataset -> checkpoint + loss CSV")
    s.add_argument("--dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--loss-csv")
    s.add_argument("--seed", type=int)
    s.add_argument("--limit", type=int, help="use only the first N successful trajectories")

    s = sub.add_parser("eval", parents=[common], help="closed-loop success rate of a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--task")
    s.add_argument("--region")
    s.add_argument("--episodes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--baseline-from", help="evaluate the frozen network built from this dataset instead")
    s.add_argument("--report")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("scaling", parents=[common], help="dataset-size ladder end to end")
    s.add_argument("--tasks", nargs="+")
    s.add_argument("--sizes", nargs="+", type=int)
    s.add_argument("--seeds", nargs="+", type=int)
    s.add_argument("--region")
    s.add_argument("--eval-episodes", type=int)
    s.add_argument("--data-seed", type=int)
    s.add_argument("--workdir", required=True)
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("stats", parents=[common], help="dataset summary and checksum verification")
    s.add_argument("--dataset")
    s.add_argument("--csv")

    s = sub.add_parser("replay-check", parents=[common], help="identity replay of a demo")
    s.add_argument("--task", help="task name, or 'all'")
    s.add_argument("--demo")
    s.add_argument("--position-tol", type=float, default=0.01)
    s.add_argument("--rotation-tol", type=float, default=0.05)
    return p


# ---------------------------------------------------------------------------
# provenance


def read_provenance(path) -> dict:
    """The resolved-config document embedded in an artifact written by this tool."""
    p = Path(path)
    if p.is_dir() or p.name == ds.MANIFEST:
        return ds.read_manifest(p if p.is_dir() else p.parent).config
    blob = p.read_bytes()
    if blob.startswith(b"DHLMPOL1"):
        return load_policy(p)[1]
    text = blob.decode()
    if text.startswith("# provenance "):
        return json.loads(text.splitlines()[0][len("# provenance ") :])
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if "provenance" in doc:
            return doc["provenance"]
    raise UsageError(f"{p} carries no embedded provenance")


def resolve(args: argparse.Namespace) -> tuple[RunConfig, dict]:
    base = {}
    if args.from_artifact:
        base = read_provenance(args.from_artifact)
        if base.get("command") != args.command:
            raise UsageError(f"{args.from_artifact} was written by {base.get('command')!r}, not {args.command!r}")
    cfg = RunConfig()
    if base.get("config"):
        cfg.merge_dict(base["config"])
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        cfg.merge_ini(p.read_text(), str(p))
    for item in args.set:
        cfg.apply_override(item)
    for name in REPRODUCIBLE.get(args.command, ()):
        if getattr(args, name, None) is None and name in base.get("args", {}):
            setattr(args, name, base["args"][name])
    return cfg, base


def provenance(args: argparse.Namespace, cfg: RunConfig) -> dict:
    return {
        "command": args.command,
        "args": {k: getattr(args, k, None) for k in REPRODUCIBLE.get(args.command, ())},
        "config": cfg.to_dict(),
    }


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _demo_source(args):
    """Demo or relative trajectory named on the command line, else the bundled script."""
    if getattr(args, "rel", None):
        return load_relative(_existing(args.rel, "relative trajectory"))
    if getattr(args, "demo", None):
        return load_demo(_existing(args.demo, "demo"))
    if args.task not in SCRIPTS:
        get_task(args.task)
    return make_demo(args.task)


def _write_text(path, text: str) -> None:
    ds._atomic_write(Path(path), text.encode())


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_demo(args, cfg):
    _need(args, "task")
    demo = make_demo(args.task, gains=cfg.gaze())
    save_demo(demo, args.out)
    print(f"wrote {args.out}: {len(demo)} frames, task {demo.task}")
    return 0


def cmd_ingest(args, cfg):
    _need(args, "demo")
    demo = load_demo(_existing(args.demo, "demo"))
    if args.task is None:
        args.task = demo.task
    task = get_task(args.task)
    diags = validate_demo(demo, default_robot_model())
    for d in diags:
        print(f"diagnostic: {d}")
    t_c = detect_contact_time(demo, cfg.synthesis().eps_contact)
    rel = to_relative(demo, t_c)
    save_relative(rel, args.out, {"provenance": provenance(args, cfg)})
    print(f"task {task.name}: {len(demo)} frames, contact at frame {t_c}, {len(diags)} diagnostics")
    print(f"wrote {args.out}")
    return 0


def cmd_generate(args, cfg):
    _need(args, "task", "region", "episodes", "seed")
    if args.episodes < 0:
        raise UsageError("--episodes must be non-negative")
    region_params(args.region)
    source = _demo_source(args)
    out = Path(args.dataset) if args.dataset else data_root() / f"{args.task}_{args.region}_s{args.seed}"
    gen = make_generator(cfg, args.task, args.region, args.seed)
    prov = provenance(args, cfg)
    m = generate_dataset(gen, source, out, args.episodes, prov, jobs=args.jobs)
    report = region_report(m)
    print(report, end="")
    if args.report:
        _write_text(args.report, with_provenance(report, prov))
    print(f"dataset {out}: {m.successes}/{m.count} successful")
    return 0


def cmd_train(args, cfg):
    _need(args, "dataset")
    _existing(args.dataset, "dataset")
    seed = 0 if args.seed is None else args.seed
    pcfg = cfg.policy(seed=seed)
    step = max(1, pcfg.epochs // 10)
    policy, curve = train_from_dataset(
        args.dataset, pcfg, args.limit, log=lambda e, l: log.info("epoch %d loss %.6g", e, l) if e % step == 0 else None
    )
    prov = provenance(args, cfg)
    save_policy(policy, args.checkpoint, prov)
    if args.loss_csv:
        _write_text(args.loss_csv, with_provenance(loss_csv(curve), prov))
    print(f"wrote {args.checkpoint}; final loss {curve[-1]!r}" if curve else f"wrote {args.checkpoint}; no epochs")
    return 0


def cmd_eval(args, cfg):
    _need(args, "task", "region", "episodes", "seed")
    if args.baseline_from is None:
        _need(args, "checkpoint")
    task = get_task(args.task)
    region = region_params(args.region)
    if args.baseline_from:
        trajs = list(ds.read_all(_existing(args.baseline_from, "dataset")))
        policy = frozen_baseline(trajs, cfg.policy(seed=args.seed))
        horizon = cfg.policy().exec_horizon
    else:
        policy, _ = load_policy(_existing(args.checkpoint, "checkpoint"))
        horizon = int(policy.config.get("exec_horizon", cfg.policy().exec_horizon))
    res = closed_loop_eval(
        policy, task, region, args.episodes, args.seed, default_robot_model(), cfg.tracking(), cfg.gaze(), horizon,
        jobs=args.jobs,
    )
    line = f"task,region,episodes,successes,success_rate\n{task.name},{region.name},{res.episodes},{res.successes},{res.rate_text()}\n"
    print(line, end="")
    if args.report:
        _write_text(args.report, with_provenance(line, provenance(args, cfg)))
    return 0


def cmd_scaling(args, cfg):
    sc = cfg.sections["scaling"]
    args.tasks = args.tasks or sc["tasks"]
    args.sizes = args.sizes or sc["sizes"]
    args.seeds = args.seeds if args.seeds is not None else sc["seeds"]
    args.region = args.region or sc["region"]
    args.eval_episodes = args.eval_episodes if args.eval_episodes is not None else sc["eval_episodes"]
    args.data_seed = 0 if args.data_seed is None else args.data_seed
    for t in args.tasks:
        get_task(t)
    region_params(args.region)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    sources = {t: make_demo(t, gains=cfg.gaze()) for t in args.tasks}
    rows = run_scaling(
        cfg,
        args.tasks,
        sorted(args.sizes),
        args.seeds,
        workdir,
        sources,
        args.region,
        args.eval_episodes,
        args.data_seed,
        args.jobs,
        log=print,
    )
    prov = provenance(args, cfg)
    _write_text(workdir / "scaling_runs.csv", with_provenance(scaling_csv(rows), prov))
    for t in args.tasks:
        trend = mean_by_size(rows, t)
        path = workdir / f"trend_{t}.csv"
        ds.export_trend_csv(trend, path)
        _write_text(path, with_provenance(path.read_text(), prov))
        print(f"{t}: " + ", ".join(f"{s} -> {r:.3f}" for s, r in trend))
    print(f"wrote {workdir / 'scaling_runs.csv'} and per-task trend CSVs")
    return 0


def cmd_stats(args, cfg):
    _need(args, "dataset")
    _existing(args.dataset, "dataset")
    problems = ds.verify(args.dataset)
    s = ds.stats(args.dataset)
    text = ds.stats_csv(s)
    print(text, end="")
    if args.csv:
        _write_text(args.csv, with_provenance(text, provenance(args, cfg)))
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    return 1 if problems else 0


def cmd_replay_check(args, cfg):
    _need(args, "task")
    names = task_names() if args.task == "all" else [args.task]
    if args.demo and len(names) != 1:
        raise UsageError("--demo needs a single --task")
    model = default_robot_model()
    ok = True
    for name in names:
        task = get_task(name)
        demo = load_demo(_existing(args.demo, "demo")) if args.demo else make_demo(name, model, gains=cfg.gaze())
        rep = identity_replay(model, task, demo, cfg.synthesis(), cfg.gaze(), cfg.sections["tracking"]["time_constant"])
        good = rep.within(args.position_tol, args.rotation_tol)
        ok &= good
        print(
            f"{name}: {'PASS' if good else 'FAIL'} predicate={rep.success} "
            f"max_pos={rep.max_position_error:.3g} m max_rot={rep.max_rotation_error:.3g} rad "
            f"frames={rep.compared_frames} lead_in={rep.lead_in}"
            + (f" reason={rep.failure_reason}" if rep.failure_reason else "")
        )
    return 0 if ok else 1


COMMANDS = {
    "make-demo": cmd_make_demo,
    "ingest": cmd_ingest,
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "scaling": cmd_scaling,
    "stats": cmd_stats,
    "replay-check": cmd_replay_check,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        cfg, _ = resolve(args)
        log.info("resolved config: %s", json.dumps(provenance(args, cfg), sort_keys=True))
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        sub.print_usage(sys.stderr)
        print(f"demohlm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
