"""Chunked behaviour cloning: a float64 MLP trained with hand-written backprop.

The network maps one observation to ``chunk_size`` future actions. Inputs and
targets are standardized per channel; the output layer is zero-initialized so
an untrained policy emits the per-channel action means.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import TrajectoryRecord, _atomic_write

CHECKPOINT_MAGIC = b"DHLMPOL1"
STD_FLOOR = 1e-6


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class DimensionMismatch(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    hidden_layout: tuple = (512, 2048, 2048, 512)
    chunk_size: int = 20
    exec_horizon: int = 10
    learning_rate: float = 5e-5
    batch_size: int = 512
    epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_layout", tuple(int(w) for w in self.hidden_layout))
        if any(w < 1 for w in self.hidden_layout):
            raise ValueError("hidden widths must be positive")
        if not self.chunk_size >= self.exec_horizon >= 1:
            raise ValueError("need chunk_size >= exec_horizon >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layout"] = list(self.hidden_layout)
        return d


# ---------------------------------------------------------------------------
# normalization


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, floor: float = STD_FLOOR) -> Standardizer:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or len(X) == 0:
            raise EmptyDataset("cannot fit a normalizer on zero rows")
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), floor))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def inverse_transform(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean


def fit_normalizer(trajectories: Iterable[TrajectoryRecord]) -> tuple[Standardizer, Standardizer]:
    """Observation and action standardizers over all successful transitions."""
    obs, act = [], []
    for tr in trajectories:
        if tr.success and len(tr):
            obs.append(tr.obs)
            act.append(tr.actions)
    if not obs:
        raise EmptyDataset("no successful transitions")
    return Standardizer.fit(np.vstack(obs)), Standardizer.fit(np.vstack(act))


def chunk_samples(trajectories: Iterable[TrajectoryRecord], chunk_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding-window (obs, action chunk) pairs; the tail repeats the last action.

    Returns ``X`` of shape (n, obs_dim) and ``Y`` of shape (n, chunk_size, act_dim).
    """
    xs, ys = [], []
    for tr in trajectories:
        n = len(tr)
        if not tr.success or n == 0:
            continue
        idx = np.minimum(np.arange(n)[:, None] + np.arange(chunk_size)[None, :], n - 1)
        xs.append(tr.obs)
        ys.append(tr.actions[idx])
    if not xs:
        raise EmptyDataset("no successful transitions")
    return np.vstack(xs), np.concatenate(ys, axis=0)


# ---------------------------------------------------------------------------
# network


@dataclass
class Policy:
    weights: list  # W[i] has shape (fan_in, fan_out)
    biases: list
    obs_norm: Standardizer
    act_norm: Standardizer
    chunk_size: int
    config: dict = field(default_factory=dict)

    @property
    def obs_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def act_dim(self) -> int:
        return self.weights[-1].shape[1] // self.chunk_size

    @property
    def layout(self) -> list:
        return [w.shape[1] for w in self.weights[:-1]]

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> Policy:
        return Policy(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            Standardizer(self.obs_norm.mean.copy(), self.obs_norm.std.copy()),
            Standardizer(self.act_norm.mean.copy(), self.act_norm.std.copy()),
            self.chunk_size,
            json.loads(json.dumps(self.config)),
        )


def init_policy(
    obs_dim: int,
    act_dim: int,
    cfg: PolicyConfig,
    obs_norm: Standardizer | None = None,
    act_norm: Standardizer | None = None,
    zero_last: bool = True,
) -> Policy:
    """He-initialized hidden layers; the output layer is zero unless ``zero_last`` is off."""
    rng = np.random.default_rng([cfg.seed, 3])
    sizes = [obs_dim, *cfg.hidden_layout, act_dim * cfg.chunk_size]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        if last and zero_last:
            W = np.zeros((fan_in, fan_out))
        else:
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        weights.append(W)
        biases.append(np.zeros(fan_out))
    obs_norm = obs_norm or Standardizer(np.zeros(obs_dim), np.ones(obs_dim))
    act_norm = act_norm or Standardizer(np.zeros(act_dim), np.ones(act_dim))
    return Policy(weights, biases, obs_norm, act_norm, cfg.chunk_size, cfg.to_dict())


def _forward(policy: Policy, Z: np.ndarray):
    """Normalized forward pass keeping pre-activations for backprop."""
    acts = [Z]
    pre = []
    h = Z
    n = len(policy.weights)
    for i, (W, b) in enumerate(zip(policy.weights, policy.biases)):
        a = h @ W + b
        pre.append(a)
        h = np.maximum(a, 0.0) if i < n - 1 else a
        acts.append(h)
    return acts, pre


def loss_and_grads(policy: Policy, Z: np.ndarray, T: np.ndarray, relu_grad: bool = True):
    """MSE over every output element and its parameter gradients.

    ``Z`` and ``T`` are already normalized; ``T`` is flattened to (n, chunk*act).
    ``relu_grad=False`` drops the ReLU mask in backprop and exists only as a
    negative control for :func:`gradient_check`.
    """
    acts, pre = _forward(policy, Z)
    diff = acts[-1] - T
    loss = float(np.mean(diff * diff))
    g = 2.0 * diff / diff.size
    grads_W = [None] * len(policy.weights)
    grads_b = [None] * len(policy.weights)
    for i in range(len(policy.weights) - 1, -1, -1):
        grads_W[i] = acts[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ policy.weights[i].T
            if relu_grad:
                g = g * (pre[i - 1] > 0.0)
    grads = []
    for gW, gb in zip(grads_W, grads_b):
        grads += [gW, gb]
    return loss, grads


def forward(policy: Policy, obs) -> np.ndarray:
    """Action chunk in physical units: (chunk_size, act_dim), or batched (n, chunk_size, act_dim)."""
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    X = obs[None, :] if single else obs
    if X.ndim != 2 or X.shape[1] != policy.obs_dim:
        raise DimensionMismatch(f"observation has shape {obs.shape}, policy expects {policy.obs_dim} channels")
    acts, _ = _forward(policy, policy.obs_norm.transform(X))
    out = policy.act_norm.inverse_transform(acts[-1].reshape(len(X), policy.chunk_size, policy.act_dim))
    return out[0] if single else out


def _loss_only(policy: Policy, Z: np.ndarray, T: np.ndarray) -> float:
    acts, _ = _forward(policy, Z)
    d = acts[-1] - T
    return float(np.mean(d * d))


def _loss_and_pattern(policy: Policy, Z: np.ndarray, T: np.ndarray):
    """Loss plus the ReLU on/off pattern of every hidden unit."""
    acts, pre = _forward(policy, Z)
    d = acts[-1] - T
    return float(np.mean(d * d)), [a > 0.0 for a in pre[:-1]]


def _same_pattern(a: list, b: list) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    num = float(np.linalg.norm(a - b))
    den = float(np.linalg.norm(a) + np.linalg.norm(b))
    return 0.0 if den == 0.0 else num / den


def gradient_check(
    policy: Policy,
    batch: tuple[np.ndarray, np.ndarray],
    epsilon: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    relu_grad: bool = True,
) -> float:
    """Worst per-block relative error between analytic and central-difference gradients.

    ``batch`` is (normalized obs, normalized flat targets). Each parameter
    block is compared as a vector: ``|g_a - g_n| / (|g_a| + |g_n|)``, zero when
    both are zero. ``max_entries`` samples that many entries per block.

    Entries whose +-epsilon perturbation switches any ReLU on or off sit on a
    kink where the loss has no derivative; they are left out of the comparison.
    """
    Z, T = batch
    _, analytic = loss_and_grads(policy, Z, T, relu_grad=relu_grad)
    _, base = _loss_and_pattern(policy, Z, T)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for P, G in zip(policy.params(), analytic):
        flat = P.reshape(-1)
        gflat = G.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        smooth = np.ones(len(idx), dtype=bool)
        for k, j in enumerate(idx):
            old = flat[j]
            flat[j] = old + epsilon
            up, pat_up = _loss_and_pattern(policy, Z, T)
            flat[j] = old - epsilon
            down, pat_down = _loss_and_pattern(policy, Z, T)
            flat[j] = old
            numeric[k] = (up - down) / (2.0 * epsilon)
            smooth[k] = _same_pattern(pat_up, base) and _same_pattern(pat_down, base)
        worst = max(worst, _rel_error(gflat[idx][smooth], numeric[smooth]))
    return worst


# ---------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params: list, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(
    trajectories: Sequence[TrajectoryRecord], cfg: PolicyConfig | None = None, log=None
) -> tuple[Policy, list[float]]:
    """Fit a policy on the successful trajectories; returns it with the per-epoch mean loss."""
    cfg = cfg or PolicyConfig()
    trajectories = list(trajectories)
    obs_norm, act_norm = fit_normalizer(trajectories)
    X, Y = chunk_samples(trajectories, cfg.chunk_size)
    Z = obs_norm.transform(X)
    T = act_norm.transform(Y).reshape(len(Y), -1)
    policy = init_policy(X.shape[1], Y.shape[2], cfg, obs_norm, act_norm)
    opt = Adam(policy.params(), cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 4])
    n = len(Z)
    bs = min(cfg.batch_size, n)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, bs)):
            sel = order[start : start + bs]
            loss, grads = loss_and_grads(policy, Z[sel], T[sel])
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            opt.step(grads)
            total += loss * len(sel)
        curve.append(total / n)
        if log is not None:
            log(epoch, curve[-1])
    return policy, curve


def loss_csv(curve: Sequence[float]) -> str:
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(curve)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoint
#
# magic "DHLMPOL1" | <I header length | UTF-8 JSON header |
# per layer: W (<f8, row-major, fan_in x fan_out) then b (<f8) |
# obs mean, obs std, act mean, act std (<f8)


def encode_policy(policy: Policy, extra: dict | None = None) -> bytes:
    header = {
        "schema": "demohlm-policy v1",
        "obs_dim": policy.obs_dim,
        "act_dim": policy.act_dim,
        "chunk_size": policy.chunk_size,
        "layout": policy.layout,
        "config": policy.config,
    }
    if extra:
        header["extra"] = extra
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    for arr in policy.params() + [policy.obs_norm.mean, policy.obs_norm.std, policy.act_norm.mean, policy.act_norm.std]:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_policy(blob: bytes) -> tuple[Policy, dict]:
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a policy checkpoint")
    if len(blob) < 12:
        raise CheckpointError("truncated checkpoint")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    if 12 + hlen > len(blob):
        raise CheckpointError("truncated checkpoint")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if not isinstance(header, dict) or header.get("schema") != "demohlm-policy v1":
        got = header.get("schema") if isinstance(header, dict) else None
        raise CheckpointError(f"unsupported schema {got!r}")
    off = 12 + hlen

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        end = off + 8 * count
        if end > len(blob):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(float).reshape(shape)
        off = end
        return arr

    sizes = [header["obs_dim"], *header["layout"], header["act_dim"] * header["chunk_size"]]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(take((fan_in, fan_out)))
        biases.append(take((fan_out,)))
    obs_norm = Standardizer(take((header["obs_dim"],)), take((header["obs_dim"],)))
    act_norm = Standardizer(take((header["act_dim"],)), take((header["act_dim"],)))
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    policy = Policy(weights, biases, obs_norm, act_norm, header["chunk_size"], header["config"])
    return policy, header.get("extra", {})


def save_policy(policy: Policy, path, extra: dict | None = None) -> None:
    _atomic_write(Path(path), encode_policy(policy, extra))


def load_policy(path) -> tuple[Policy, dict]:
    return decode_policy(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# estimator facade


class ChunkedMLPPolicy(BaseEstimator):
    """scikit-learn style wrapper: ``fit`` on trajectories, ``predict`` action chunks."""

    def __init__(
        self,
        hidden_layout=(512, 2048, 2048, 512),
        chunk_size: int = 20,
        exec_horizon: int = 10,
        learning_rate: float = 5e-5,
        batch_size: int = 512,
        epochs: int = 200,
        seed: int = 0,
    ):
        self.hidden_layout = hidden_layout
        self.chunk_size = chunk_size
        self.exec_horizon = exec_horizon
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def config(self) -> PolicyConfig:
        return PolicyConfig(**self.get_params())

    def fit(self, X: Sequence[TrajectoryRecord], y=None):
        self.policy_, self.loss_curve_ = train(X, self.config())
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        return forward(self.policy_, X)

    def score(self, X: Sequence[TrajectoryRecord], y=None) -> float:
        """Negative normalized chunk MSE on the given trajectories."""
        check_is_fitted(self, "policy_")
        Xo, Y = chunk_samples(X, self.chunk_size)
        Z = self.policy_.obs_norm.transform(Xo)
        T = self.policy_.act_norm.transform(Y).reshape(len(Y), -1)
        return -_loss_only(self.policy_, Z, T)
