"""Adam, learning-rate schedules, the training loop and binary checkpoints."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import DivergenceError, VFlowModel
from .numerics import RNG_TAG, Rng, derive_seed
from .objective import (
    elbo,
    elbo_backward,
    elbo_discrete,
    elbo_discrete_backward,
    importance_log_likelihood,
)

MAGIC = b"VFLOWCKP"
FORMAT_VERSION = 1


class TrainingAborted(RuntimeError):
    """Too many optimizer steps were skipped because of non-finite values."""


class CheckpointError(ValueError):
    pass


# Optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    skipped: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Descend along ``grads``; parameters are updated in place.

    Returns the applied deltas, or None when the step was skipped because a
    gradient entry was non-finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            return None
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    deltas = {}
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        delta = -lr * step
        params[name] += delta
        deltas[name] = delta
    return deltas


def clip_global_norm(grads: dict, max_norm):
    """Rescale in place so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass(frozen=True)
class LrSchedule:
    """``constant`` uses ``rate``; ``warmup_decay`` ramps linearly to ``peak``,
    holds until ``decay_start``, then decays geometrically down to ``floor``."""

    kind: str = "constant"
    rate: float = 1e-3
    warmup_steps: int = 2000
    peak: float = 0.0012
    decay_rate: float = 0.99999
    decay_start: int = 50_000
    floor: float = 0.0003

    def __post_init__(self):
        if self.kind not in ("constant", "warmup_decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.kind == "warmup_decay":
            if self.floor > self.peak:
                raise ValueError("floor must not exceed peak")
            if self.warmup_steps < 0 or self.decay_start < self.warmup_steps:
                raise ValueError("need 0 <= warmup_steps <= decay_start")
            if not 0 < self.decay_rate <= 1:
                raise ValueError("decay_rate must be in (0, 1]")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if schedule.kind == "constant":
        return schedule.rate
    if step < schedule.warmup_steps:
        return schedule.peak * step / schedule.warmup_steps
    if step <= schedule.decay_start:
        return schedule.peak
    decayed = schedule.peak * schedule.decay_rate ** (step - schedule.decay_start)
    return max(decayed, schedule.floor)


# Training loop


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    iterations: int = 100_000
    seed: int = 0
    eval_every: int = 1000
    eval_samples: int = 100
    schedule: LrSchedule = LrSchedule()
    clip: float | None = 100.0
    max_skip_fraction: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1 or self.eval_every < 1 or self.eval_samples < 1:
            raise ValueError("batch_size, iterations, eval_every and eval_samples must be positive")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip threshold must be positive (or None to disable)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["schedule"] = LrSchedule(**d.get("schedule", {}))
        return cls(**d)


METRIC_COLUMNS = ("step", "lr", "train_elbo_nats", "test_is_loglik_nats")


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    step: int
    rng: Rng
    adam: AdamState
    elbo_sum: float = 0.0
    elbo_count: int = 0
    metrics: list = field(default_factory=list)


# Stream labels for derive_seed.
STREAM_DATA, STREAM_INIT, STREAM_TRAIN, STREAM_EVAL = 1, 2, 3, 4


def _eval_rng(seed: int, step: int) -> Rng:
    # Separate stream per evaluation point so evaluation never perturbs training draws.
    return Rng(derive_seed(seed, STREAM_EVAL, step))


def evaluate(model: VFlowModel, data, samples: int, rng: Rng, discrete: bool = False):
    return importance_log_likelihood(model, data, samples, rng, discrete=discrete)


def data_init(model: VFlowModel, batch, rng: Rng, discrete: bool):
    """Data-dependent ActNorm initialization from one batch, flow by flow."""
    x = np.asarray(batch, dtype=np.float64)
    if discrete:
        eps_r = rng.normal(x.shape)
        model.r.data_init(x, eps_r)
        u, _, _ = model.r.sample_cached(x, eps_r)
        x = x + u
    if model.d_z:
        eps_q = rng.normal((x.shape[0], model.d_z))
        model.q.data_init(x, eps_q)
        z, _, _ = model.q.sample_cached(x, eps_q)
        x = np.concatenate([x, z], axis=1)
    model.p.data_init(x)


def _gradients(model, xb, rng, discrete):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            if discrete:
                est, cache = elbo_discrete(model, xb, rng)
                grads = elbo_discrete_backward(model, cache)
            else:
                est, cache = elbo(model, xb, rng)
                grads, _ = elbo_backward(model, cache)
        except (DivergenceError, FloatingPointError):
            return None, None
    return est.mean(), grads


def new_state(config: TrainConfig) -> TrainState:
    return TrainState(0, Rng(derive_seed(config.seed, STREAM_TRAIN)), AdamState())


def train_loop(model: VFlowModel, train, test, config: TrainConfig, state: TrainState | None = None,
               until: int | None = None, progress=None):
    """Maximize the ELBO (or the dequantization bound when ``model.r`` is set).

    Runs from ``state.step`` up to ``until`` (default ``config.iterations``)
    and returns the updated state; ``state.metrics`` accumulates rows keyed by
    ``METRIC_COLUMNS``. Passing a state restored from a checkpoint continues
    the run exactly.
    """
    discrete = model.r is not None
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    for name, arr in (("train", train), ("test", test)):
        if arr.ndim != 2 or arr.shape[1] != model.d_x:
            raise ValueError(f"{name} data must have shape (N, {model.d_x}), got {arr.shape}")
    until = config.iterations if until is None else min(until, config.iterations)
    if state is None:
        state = new_state(config)
        idx = state.rng.integers(0, train.shape[0], config.batch_size)
        data_init(model, train[idx], state.rng, discrete)
    params = model.parameter_dict()
    rng = state.rng
    lr = lr_at(config.schedule, state.step)
    while state.step < until:
        idx = rng.integers(0, train.shape[0], config.batch_size)
        value, grads = _gradients(model, train[idx], rng, discrete)
        lr = lr_at(config.schedule, state.step)
        applied = False
        if grads is not None and math.isfinite(value):
            neg = {k: -g for k, g in grads.items()}
            if config.clip is not None:
                clip_global_norm(neg, config.clip)
            applied = adam_step(params, neg, state.adam, lr) is not None
        else:
            state.adam.skipped += 1
        if applied:
            state.elbo_sum += value
            state.elbo_count += 1
        state.step += 1
        if state.adam.skipped > config.max_skip_fraction * max(state.step, 100):
            raise TrainingAborted(
                f"{state.adam.skipped} of {state.step} steps skipped on non-finite values "
                f"(limit {config.max_skip_fraction:.0%}); last lr {lr:g}"
            )
        if state.step % config.eval_every == 0 or state.step == config.iterations:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                ll = evaluate(model, test, config.eval_samples, _eval_rng(config.seed, state.step), discrete)
            row = {
                "step": state.step,
                "lr": lr,
                "train_elbo_nats": state.elbo_sum / state.elbo_count if state.elbo_count else math.nan,
                "test_is_loglik_nats": float(np.mean(ll)),
            }
            state.metrics.append(row)
            state.elbo_sum, state.elbo_count = 0.0, 0
            if progress is not None:
                progress(row)
    return state


# Checkpoints


def _u32(n):
    return struct.pack("<I", n)


def _blob(b: bytes):
    return _u32(len(b)) + b


def save_checkpoint(path, model: VFlowModel, state: TrainState | None = None,
                    config: TrainConfig | None = None, extra: dict | None = None):
    """Binary layout: magic, u32 version, RNG tag, JSON header, named float64 tensors.

    ``extra`` is stored verbatim in the header (must be JSON-serializable).
    """
    meta = {"model": model.spec(), "config": None if config is None else config.to_dict()}
    if extra is not None:
        meta["extra"] = extra
    tensors = [(f"param/{k}", v) for k, v in model.named_parameters()]
    if state is not None:
        adam = state.adam
        meta["train"] = {
            "step": state.step,
            "rng": state.rng.get_state(),
            "adam": {"t": adam.t, "skipped": adam.skipped, "beta1": adam.beta1,
                     "beta2": adam.beta2, "eps": adam.eps},
            "elbo_sum": state.elbo_sum,
            "elbo_count": state.elbo_count,
            "metrics": state.metrics,
        }
        tensors += [(f"adam_m/{k}", v) for k, v in adam.m.items()]
        tensors += [(f"adam_v/{k}", v) for k, v in adam.v.items()]
    out = [MAGIC, _u32(FORMAT_VERSION), _blob(RNG_TAG.encode()),
           _blob(json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()),
           _u32(len(tensors))]
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(_blob(name.encode()))
        out.append(_u32(arr.ndim) + b"".join(struct.pack("<Q", d) for d in arr.shape))
        out.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


@dataclass
class Checkpoint:
    version: int
    rng_tag: str
    meta: dict
    tensors: dict

    def model(self) -> VFlowModel:
        model = VFlowModel.from_spec(self.meta["model"])
        params = model.parameter_dict()
        for name, arr in params.items():
            key = f"param/{name}"
            if key not in self.tensors:
                raise CheckpointError(f"checkpoint lacks tensor {key!r}")
            src = self.tensors[key]
            if src.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {name}: {src.shape} vs {arr.shape}")
            arr[...] = src
        extra = {k for k in self.tensors if k.startswith("param/")} - {f"param/{k}" for k in params}
        if extra:
            raise CheckpointError(f"checkpoint has unknown tensors: {sorted(extra)}")
        return model

    def config(self) -> TrainConfig | None:
        c = self.meta.get("config")
        return None if c is None else TrainConfig.from_dict(c)

    def state(self) -> TrainState | None:
        t = self.meta.get("train")
        if t is None:
            return None
        rng = Rng(t["rng"]["seed"])
        rng.set_state(t["rng"])
        a = t["adam"]
        adam = AdamState(t=a["t"], skipped=a["skipped"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
        for key, arr in self.tensors.items():
            kind, _, name = key.partition("/")
            if kind == "adam_m":
                adam.m[name] = arr.copy()
            elif kind == "adam_v":
                adam.v[name] = arr.copy()
        return TrainState(t["step"], rng, adam, t["elbo_sum"], t["elbo_count"], list(t["metrics"]))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def blob(self):
        return self.take(self.u32())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    r = _Reader(data)
    r.take(len(MAGIC))
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    try:
        tag = r.blob().decode()
        meta = json.loads(r.blob().decode())
        tensors = {}
        for _ in range(r.u32()):
            name = r.blob().decode()
            ndim = r.u32()
            shape = tuple(struct.unpack("<Q", r.take(8))[0] for _ in range(ndim))
            count = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header: {err}") from err
    if r.pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return Checkpoint(version, tag, meta, tensors)
