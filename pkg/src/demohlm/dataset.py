"""On-disk trajectory datasets.

A dataset is a directory holding ``manifest.tsv`` and one binary file per
successful trajectory. Failed episodes only appear in the manifest. The byte
layouts are documented in ``FORMAT.md`` at the repository root.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

MANIFEST = "manifest.tsv"
MANIFEST_MAGIC = "demohlm-dataset"
MANIFEST_VERSION = "1"
TRAJ_MAGIC = b"DHLMTRJ1"
FAILURE_REASONS = ("IkNotConverged", "LocomotionTimeout", "StepBudgetExceeded", "PredicateFalse")


class SchemaError(ValueError):
    pass


class ChecksumMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TransitionRecord:
    obs: np.ndarray
    action: np.ndarray
    step: int


def _rows(values, n: int, what: str) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        a = a.reshape(n, -1)
    if a.shape[0] != n:
        raise ValueError(f"{what} has {a.shape[0]} rows for {n} steps")
    return a


@dataclass
class TrajectoryRecord:
    """One synthesized episode; ``obs``/``actions`` rows are the transitions."""

    task: str
    region: str
    seed: int
    success: bool
    failure_reason: str
    obs: np.ndarray  # (n, obs_dim)
    actions: np.ndarray  # (n, act_dim)
    steps: np.ndarray  # (n,) controller tick of each transition
    stage_bounds: tuple[int, int] = (0, 0)  # first transition index of pre and of manip
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.steps = np.asarray(self.steps, dtype=np.int64).reshape(-1)
        self.obs = _rows(self.obs, len(self.steps), "obs")
        self.actions = _rows(self.actions, len(self.steps), "actions")
        if self.success and self.failure_reason:
            raise ValueError("a successful trajectory cannot carry a failure reason")
        if not self.success and self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")
        n = len(self.steps)
        a, b = self.stage_bounds
        if not 0 <= a <= b <= n:
            raise ValueError(f"stage bounds {self.stage_bounds} inconsistent with {n} transitions")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def transitions(self) -> list[TransitionRecord]:
        return [TransitionRecord(o, a, int(s)) for o, a, s in zip(self.obs, self.actions, self.steps)]

    def stage_lengths(self) -> tuple[int, int, int]:
        a, b = self.stage_bounds
        return a, b - a, len(self) - b

    def header(self) -> dict:
        return {
            "task": self.task,
            "region": self.region,
            "seed": int(self.seed),
            "success": bool(self.success),
            "failure_reason": self.failure_reason,
            "stage_bounds": [int(v) for v in self.stage_bounds],
            "meta": self.meta,
        }


# ---------------------------------------------------------------------------
# trajectory files


def encode_trajectory(traj: TrajectoryRecord) -> bytes:
    head = json.dumps(traj.header(), sort_keys=True, separators=(",", ":")).encode()
    n, obs_dim = traj.obs.shape
    act_dim = traj.actions.shape[1]
    return b"".join(
        [
            TRAJ_MAGIC,
            struct.pack("<I", len(head)),
            head,
            struct.pack("<III", n, obs_dim, act_dim),
            traj.steps.astype("<i8").tobytes(),
            traj.obs.astype("<f8").tobytes(),
            traj.actions.astype("<f8").tobytes(),
        ]
    )


def decode_trajectory(blob: bytes) -> TrajectoryRecord:
    if blob[:8] != TRAJ_MAGIC:
        raise SchemaError(f"bad trajectory magic {blob[:8]!r}")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    head = json.loads(blob[12 : 12 + hlen])
    off = 12 + hlen
    n, obs_dim, act_dim = struct.unpack_from("<III", blob, off)
    off += 12
    need = off + 8 * n * (1 + obs_dim + act_dim)
    if len(blob) != need:
        raise SchemaError(f"trajectory payload has {len(blob)} bytes, expected {need}")
    steps = np.frombuffer(blob, "<i8", n, off)
    off += 8 * n
    obs = np.frombuffer(blob, "<f8", n * obs_dim, off).reshape(n, obs_dim)
    off += 8 * n * obs_dim
    act = np.frombuffer(blob, "<f8", n * act_dim, off).reshape(n, act_dim)
    return TrajectoryRecord(
        task=head["task"],
        region=head["region"],
        seed=head["seed"],
        success=head["success"],
        failure_reason=head["failure_reason"],
        obs=obs.astype(np.float64),
        actions=act.astype(np.float64),
        steps=steps.astype(np.int64),
        stage_bounds=tuple(head["stage_bounds"]),
        meta=head.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class Entry:
    idx: int
    file: str  # "-" for failures
    task: str
    region: str
    seed: int
    success: bool
    reason: str
    n: int
    sha256: str  # "-" for failures

    def row(self) -> str:
        return "\t".join(
            [
                "entry",
                str(self.idx),
                self.file,
                self.task,
                self.region,
                str(self.seed),
                "1" if self.success else "0",
                self.reason or "-",
                str(self.n),
                self.sha256,
            ]
        )


@dataclass
class Manifest:
    entries: list[Entry] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.entries)

    @property
    def successes(self) -> int:
        return sum(e.success for e in self.entries)

    def body(self) -> str:
        lines = [
            f"{MANIFEST_MAGIC}\t{MANIFEST_VERSION}",
            f"count\t{self.count}",
            f"successes\t{self.successes}",
            "config\t" + json.dumps(self.config, sort_keys=True, separators=(",", ":")),
        ]
        lines += [e.row() for e in self.entries]
        return "\n".join(lines) + "\n"

    def text(self) -> str:
        body = self.body()
        return body + f"checksum\t{hashlib.sha256(body.encode()).hexdigest()}\n"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def init_dataset(dataset_dir, config: dict | None = None) -> Manifest:
    """Create an empty dataset (the directory may exist but must not hold a manifest)."""
    d = Path(dataset_dir)
    d.mkdir(parents=True, exist_ok=True)
    if (d / MANIFEST).exists():
        raise FileExistsError(f"{d / MANIFEST} already exists")
    m = Manifest(config=dict(config or {}))
    _atomic_write(d / MANIFEST, m.text().encode())
    return m


def read_manifest(dataset_dir) -> Manifest:
    path = Path(dataset_dir) / MANIFEST
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ChecksumMismatch(f"{path}: manifest is not valid UTF-8") from None
    if not text.endswith("\n"):
        raise ChecksumMismatch(f"{path}: manifest is truncated")
    # split on "\n" only: other line-break characters must not hide corruption
    lines = text[:-1].split("\n")
    if not lines or lines[0].split("\t")[0] != MANIFEST_MAGIC:
        raise SchemaError(f"{path} is not a dataset manifest")
    if lines[0].split("\t")[1:] != [MANIFEST_VERSION]:
        raise SchemaError(f"unsupported manifest version {lines[0]!r}")
    if not lines[-1].startswith("checksum\t"):
        raise ChecksumMismatch(f"{path}: missing checksum line")
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != lines[-1].split("\t", 1)[1]:
        raise ChecksumMismatch(f"{path}: manifest checksum does not match its contents")
    m = Manifest()
    declared = {}
    for line in lines[1:-1]:
        tag, _, rest = line.partition("\t")
        if tag in ("count", "successes"):
            declared[tag] = int(rest)
        elif tag == "config":
            m.config = json.loads(rest)
        elif tag == "entry":
            f = rest.split("\t")
            if len(f) != 9:
                raise SchemaError(f"bad manifest entry {line!r}")
            m.entries.append(
                Entry(int(f[0]), f[1], f[2], f[3], int(f[4]), f[5] == "1", "" if f[6] == "-" else f[6], int(f[7]), f[8])
            )
        else:
            raise SchemaError(f"unknown manifest line {line!r}")
    if declared.get("count") != m.count or declared.get("successes") != m.successes:
        raise ChecksumMismatch(f"{path}: tallies disagree with entries")
    return m


def append_trajectory(dataset_dir, traj: TrajectoryRecord) -> Manifest:
    """Add one episode. Successful ones get a payload file; failures are tallied only."""
    d = Path(dataset_dir)
    m = read_manifest(d)
    idx = m.count
    if traj.success:
        blob = encode_trajectory(traj)
        name = f"traj_{idx:06d}.bin"
        _atomic_write(d / name, blob)
        digest = hashlib.sha256(blob).hexdigest()
    else:
        name, digest = "-", "-"
    m.entries.append(
        Entry(idx, name, traj.task, traj.region, int(traj.seed), bool(traj.success), traj.failure_reason, len(traj), digest)
    )
    _atomic_write(d / MANIFEST, m.text().encode())
    return m


def read_trajectory(dataset_dir, entry: Entry) -> TrajectoryRecord:
    blob = (Path(dataset_dir) / entry.file).read_bytes()
    if hashlib.sha256(blob).hexdigest() != entry.sha256:
        raise ChecksumMismatch(f"{entry.file}: payload checksum mismatch")
    return decode_trajectory(blob)


def read_all(dataset_dir, success_only: bool = True) -> Iterator[TrajectoryRecord]:
    """Trajectories in manifest order. Failures carry no transitions."""
    m = read_manifest(dataset_dir)
    for e in m.entries:
        if e.success:
            yield read_trajectory(dataset_dir, e)
        elif not success_only:
            yield TrajectoryRecord(
                e.task, e.region, e.seed, False, e.reason, np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0, np.int64)
            )


def verify(dataset_dir) -> list[str]:
    """Checksum problems in the dataset (empty when intact)."""
    problems = []
    try:
        m = read_manifest(dataset_dir)
    except (ChecksumMismatch, SchemaError) as exc:
        return [str(exc)]
    for e in m.entries:
        if not e.success:
            continue
        try:
            read_trajectory(dataset_dir, e)
        except (ChecksumMismatch, SchemaError, OSError) as exc:
            problems.append(str(exc))
    return problems


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class Stats:
    count: int
    successes: int
    success_rate: float | None
    failures: dict
    length_hist: list  # (lo, hi, count) over successful transition counts
    stage_means: tuple  # mean transitions per stage (locomotion, pre, manip)

    def rate_text(self) -> str:
        return "n/a" if self.success_rate is None else f"{self.success_rate:.4f}"


def stats(dataset_dir, bins: int = 10) -> Stats:
    m = read_manifest(dataset_dir)
    failures = {r: 0 for r in FAILURE_REASONS}
    for e in m.entries:
        if not e.success:
            failures[e.reason] = failures.get(e.reason, 0) + 1
    lengths = [e.n for e in m.entries if e.success]
    hist = []
    if lengths:
        lo, hi = min(lengths), max(lengths)
        edges = np.linspace(lo, hi + 1, bins + 1) if hi > lo else np.array([lo, lo + 1])
        counts, _ = np.histogram(lengths, bins=edges)
        hist = [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]
    stage = np.zeros(3)
    ns = 0
    for traj in read_all(dataset_dir):
        stage += traj.stage_lengths()
        ns += 1
    return Stats(
        count=m.count,
        successes=m.successes,
        success_rate=(m.successes / m.count) if m.count else None,
        failures=failures,
        length_hist=hist,
        stage_means=tuple(float(v) for v in (stage / ns if ns else stage)),
    )


def stats_csv(s: Stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    w.writerow(["count", s.count])
    w.writerow(["successes", s.successes])
    w.writerow(["success_rate", s.rate_text()])
    for k, v in s.failures.items():
        w.writerow([f"failures.{k}", v])
    for name, v in zip(("locomotion", "pre", "manip"), s.stage_means):
        w.writerow([f"stage_mean.{name}", repr(v)])
    for lo, hi, c in s.length_hist:
        w.writerow([f"length[{lo:g},{hi:g})", c])
    return buf.getvalue()


def export_trend_csv(runs: Iterable[tuple[int, float]], path) -> None:
    """Write ``size,success_rate`` rows sorted by size (stable for ties)."""
    rows = sorted(list(runs), key=lambda r: r[0])
    if not rows:
        raise ValueError("need at least one run")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset_size", "success_rate"])
    for size, rate in rows:
        w.writerow([int(size), "n/a" if rate is None or (isinstance(rate, float) and math.isnan(rate)) else repr(float(rate))])
    _atomic_write(Path(path), buf.getvalue().encode())
