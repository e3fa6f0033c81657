"""TOML run configuration.

Schema (every table and key is optional and defaults as listed)::

    seed = 0                    # model init, data and training streams derive from it;
                                # if absent (and no --seed flag) one is drawn and printed
    out = "runs/default"        # output directory

    [model]
    d_x = 2
    d_z = 0                     # 0 = plain flow baseline
    p_steps = 3                 # ActNorm -> Pointwise -> coupling steps in p
    q_steps = 1
    hidden = 50                 # D_H
    n_hidden = 2                # B
    q_hidden = 50
    q_n_hidden = 2
    mask = "checker"            # or "channel"
    coupling = "affine"         # or "mixlogistic"
    components = 4              # K, mixlogistic only
    clamp = 5.0
    mix_affine = false
    r_steps = 0                 # > 0 adds a dequantization flow r(u|x)

    [data]
    kind = "checkerboard"       # or "quantized"
    scale = 2.0
    n_train = 50000
    n_test = 1000
    levels = 8

    [train]
    batch_size = 64
    iterations = 100000
    eval_every = 1000
    eval_samples = 100
    clip = 100.0                # 0 disables clipping
    max_skip_fraction = 0.01

    [train.schedule]
    kind = "constant"           # or "warmup_decay"
    rate = 0.001
    warmup_steps = 2000
    peak = 0.0012
    decay_rate = 0.99999
    decay_start = 50000
    floor = 0.0003

    [eval]
    samples = 100

    [theory]
    d_z = [1, 2, 8]
    n_points = 100
    samples = [1, 16]
    base_checkpoint = ""        # empty: build the [model] flow with d_z = 0
    base_iterations = 0         # optionally train the base flow first
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import CheckerboardSpec, QuantizedSpec
from .train import LrSchedule, TrainConfig


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class ModelConfig:
    d_x: int = 2
    d_z: int = 0
    p_steps: int = 3
    q_steps: int = 1
    hidden: int = 50
    n_hidden: int = 2
    q_hidden: int = 50
    q_n_hidden: int = 2
    mask: str = "checker"
    coupling: str = "affine"
    components: int = 4
    clamp: float = 5.0
    mix_affine: bool = False
    r_steps: int = 0


@dataclass(frozen=True)
class DataConfig:
    kind: str = "checkerboard"
    scale: float = 2.0
    n_train: int = 50_000
    n_test: int = 1000
    levels: int = 8


@dataclass(frozen=True)
class TheoryConfig:
    d_z: tuple = (1, 2, 8)
    n_points: int = 100
    samples: tuple = (1, 16)
    base_checkpoint: str = ""
    base_iterations: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    out: str = "runs/default"
    model: ModelConfig = ModelConfig()
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    eval_samples: int = 100
    theory: TheoryConfig = TheoryConfig()
    source: str | None = field(default=None, compare=False)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "out": self.out, "model": asdict(self.model),
                "data": asdict(self.data), "eval_samples": self.eval_samples}

    def checkerboard(self) -> CheckerboardSpec:
        from .numerics import derive_seed
        from .train import STREAM_DATA

        d = self.data
        return CheckerboardSpec(d.scale, d.n_train, d.n_test, derive_seed(self.seed or 0, STREAM_DATA))

    def quantized(self) -> QuantizedSpec:
        return QuantizedSpec(self.data.levels, self.checkerboard())


_TABLES = {
    "model": ModelConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "train.schedule": LrSchedule,
    "eval": None,
    "theory": TheoryConfig,
}
_EVAL_KEYS = {"samples"}
_TOP_KEYS = {"seed", "out"}


def _key_line(text, table, key):
    """1-based line where ``key`` is assigned inside ``[table]`` (None if not found)."""
    current = ""
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[\s*([^\]]+?)\s*\]", line)
        if head:
            current = head.group(1)
            if current == key and table == "":
                return i
            continue
        if current == table and pat.match(line):
            return i
    return None


def _allowed(table):
    cls = _TABLES[table]
    if cls is None:
        return _EVAL_KEYS
    names = {f.name for f in fields(cls)}
    if table == "train":
        names = (names - {"seed", "schedule"}) | {"schedule"}
    return names


def _expect(value, typ, where):
    ok = isinstance(value, typ) and not (typ in (int, float) and isinstance(value, bool))
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        ok = True
    if not ok:
        raise ValueError(f"{where} must be {typ.__name__}, got {type(value).__name__}")
    return float(value) if typ is float else value


def _build(cls, table_name, raw, skip=()):
    kwargs = {}
    for f in fields(cls):
        if f.name in skip or f.name not in raw:
            continue
        default = f.default
        val = raw[f.name]
        where = f"{table_name}.{f.name}"
        if isinstance(default, tuple):
            if not isinstance(val, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in val):
                raise ValueError(f"{where} must be a list of integers")
            val = tuple(val)
        elif f.name == "clip":
            val = _expect(val, float, where)
            val = None if val == 0 else val
        elif isinstance(default, bool):
            val = _expect(val, bool, where)
        elif isinstance(default, int):
            val = _expect(val, int, where)
        elif isinstance(default, float):
            val = _expect(val, float, where)
        elif isinstance(default, str):
            val = _expect(val, str, where)
        kwargs[f.name] = val
    return cls(**kwargs)


def parse_config(text: str, path: str | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        m = re.search(r"line (\d+)", str(err))
        line = int(m.group(1)) if m else max(len(text.splitlines()), 1)
        raise ConfigError(f"TOML syntax error: {err}", path, line) from err

    def fail(msg, table, key):
        raise ConfigError(msg, path, _key_line(text, table, key))

    for key, val in raw.items():
        if key in _TOP_KEYS:
            continue
        if key not in _TABLES or not isinstance(val, dict):
            fail(f"unknown key {key!r}", "", key)
        for sub in val:
            if sub not in _allowed(key):
                fail(f"unknown key {sub!r} in [{key}]", key, sub)
        if key == "train" and "schedule" in val:
            if not isinstance(val["schedule"], dict):
                fail("[train.schedule] must be a table", "train", "schedule")
            for sub in val["schedule"]:
                if sub not in _allowed("train.schedule"):
                    fail(f"unknown key {sub!r} in [train.schedule]", "train.schedule", sub)

    current = ("", "")
    try:
        current = ("", "seed")
        seed = raw.get("seed")
        if seed is not None:
            seed = _expect(seed, int, "seed")
            if seed < 0:
                raise ValueError("seed must be non-negative")
        current = ("", "out")
        out = _expect(raw.get("out", "runs/default"), str, "out")
        current = ("model", "")
        model = _build(ModelConfig, "model", raw.get("model", {}))
        _validate_model(model)
        current = ("data", "")
        data = _build(DataConfig, "data", raw.get("data", {}))
        if data.kind not in ("checkerboard", "quantized"):
            raise ValueError(f"data.kind must be 'checkerboard' or 'quantized', got {data.kind!r}")
        CheckerboardSpec(data.scale, data.n_train, data.n_test)
        QuantizedSpec(data.levels)
        if (data.kind == "quantized") != (model.r_steps > 0):
            raise ValueError("quantized data requires model.r_steps > 0 (and vice versa)")
        current = ("train.schedule", "")
        traw = raw.get("train", {})
        schedule = _build(LrSchedule, "train.schedule", traw.get("schedule", {}))
        current = ("train", "")
        tc = _build(TrainConfig, "train", traw, skip=("seed", "schedule"))
        train = TrainConfig(**{**tc.to_dict(), "schedule": schedule, "seed": seed or 0})
        current = ("eval", "")
        eval_samples = _expect(raw.get("eval", {}).get("samples", 100), int, "eval.samples")
        if eval_samples < 1:
            raise ValueError("eval.samples must be at least 1")
        current = ("theory", "")
        theory = _build(TheoryConfig, "theory", raw.get("theory", {}))
        if not theory.d_z or min(theory.d_z) < 1 or not theory.samples or min(theory.samples) < 1:
            raise ValueError("theory.d_z and theory.samples need positive entries")
    except (ValueError, TypeError) as err:
        table, key = current
        msg = str(err)
        m = re.match(r"([\w.]+)\.(\w+) must", msg)
        if m:
            table, key = m.group(1), m.group(2)
        if not key:
            # constructor messages name the offending field(s); anchor on the first present
            key = next((w for w in re.findall(r"\w+", msg) if _key_line(text, table, w)), "")
        line = _key_line(text, table, key) if key else _key_line(text, "", table.split(".")[-1])
        raise ConfigError(msg, path, line) from err
    return RunConfig(seed, out, model, data, train, eval_samples, theory, path)


def _validate_model(m: ModelConfig):
    for name in ("d_x", "p_steps", "q_steps", "hidden", "q_hidden", "components"):
        if getattr(m, name) < 1:
            raise ValueError(f"model.{name} must be at least 1")
    for name in ("d_z", "n_hidden", "q_n_hidden", "r_steps"):
        if getattr(m, name) < 0:
            raise ValueError(f"model.{name} must be non-negative")
    if m.mask not in ("checker", "channel"):
        raise ValueError(f"model.mask must be 'checker' or 'channel', got {m.mask!r}")
    if m.coupling not in ("affine", "mixlogistic"):
        raise ValueError(f"model.coupling must be 'affine' or 'mixlogistic', got {m.coupling!r}")
    if m.d_x + m.d_z < 2:
        raise ValueError("model.d_x + model.d_z must be at least 2 for coupling layers")
    if m.r_steps and m.d_x < 2:
        raise ValueError("model.r_steps needs d_x >= 2")
    if m.clamp <= 0:
        raise ValueError("model.clamp must be positive")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", str(path)) from err
    return parse_config(text, str(path))


def build_model(cfg: RunConfig, rng=None):
    from .model import build_vflow
    from .numerics import Rng, derive_seed
    from .train import STREAM_INIT

    m = cfg.model
    rng = rng if rng is not None else Rng(derive_seed(cfg.seed or 0, STREAM_INIT))
    return build_vflow(m.d_x, m.d_z, m.p_steps, m.q_steps, m.hidden, m.n_hidden, m.mask, m.coupling,
                       m.components, m.clamp, m.q_hidden, m.q_n_hidden, m.mix_affine, m.r_steps, rng)
