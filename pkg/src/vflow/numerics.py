"""Numeric primitives shared by every module, plus brute-force oracles.

Arrays are plain ``numpy.ndarray`` of float64. Batched quantities put the
batch on axis 0; per-row scalars (log-densities, log-dets) are 1-D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

LOG_2PI = math.log(2.0 * math.pi)

# Recorded in checkpoint headers so runs are attributable to a generator.
RNG_TAG = "numpy-philox4x64-ziggurat"


class Rng:
    """Seeded Philox4x64 counter generator; normals via numpy's ziggurat.

    Not safe to share between concurrent callers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=None, low=0.0, high=1.0):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def spawn_seed(self) -> int:
        return int(self._gen.integers(0, 2**63 - 1))

    def get_state(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }


def derive_seed(seed: int, *labels: int) -> int:
    """Independent child seed for a labelled purpose (data, init, training, ...)."""
    ss = np.random.SeedSequence([int(seed), *map(int, labels)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class QuadratureSpec:
    lower: float
    upper: float
    nodes: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"need lower < upper, got [{self.lower}, {self.upper}]")
        if self.nodes < 3:
            raise ValueError(f"need at least 3 nodes, got {self.nodes}")


def sample_standard_normal(rng: Rng, shape) -> np.ndarray:
    return rng.normal(shape)


def log_normal_pdf(x: np.ndarray) -> np.ndarray | float:
    """Standard normal log-density summed over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    return -0.5 * np.sum(x * x, axis=-1) - 0.5 * d * LOG_2PI


def logsumexp(v, axis=None):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty input")
    return special.logsumexp(v, axis=axis)


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, any input shape."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def numeric_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-5):
    x = np.array(x, dtype=np.float64).reshape(-1)
    d = x.size
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        cols.append((np.asarray(f(x + e)).reshape(-1) - np.asarray(f(x - e)).reshape(-1)) / (2 * h))
    return np.stack(cols, axis=1)


def numeric_jacobian_logdet(
    f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-5
) -> float:
    """log|det J_f(x)| from a central-difference Jacobian and LU (slogdet)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size > 16:
        raise ValueError("numeric Jacobian oracle is limited to D <= 16")
    jac = numeric_jacobian(f, x, h)
    if jac.shape != (x.size, x.size):
        raise ValueError(f"f must map R^{x.size} to R^{x.size}, got Jacobian {jac.shape}")
    sign, logabs = np.linalg.slogdet(jac)
    if sign == 0 or logabs < math.log(1e-300):
        raise np.linalg.LinAlgError("singular Jacobian")
    return float(logabs)


def quadrature_1d(g: Callable[[np.ndarray], np.ndarray], spec: QuadratureSpec) -> float:
    """Composite Simpson rule; an even node count is rounded up to odd.

    ``g`` is called once on the full node vector.
    """
    n = spec.nodes if spec.nodes % 2 == 1 else spec.nodes + 1
    nodes = np.linspace(spec.lower, spec.upper, n)
    vals = np.asarray(g(nodes), dtype=np.float64)
    if vals.shape != nodes.shape:
        vals = np.broadcast_to(vals, nodes.shape)
    if not np.all(np.isfinite(vals)):
        bad = nodes[~np.isfinite(vals)][0]
        raise FloatingPointError(f"non-finite integrand at node {bad!r}")
    return float(integrate.simpson(vals, x=nodes))


def simpson_weights(lower: float, upper: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the composite Simpson rule (odd node count)."""
    n = nodes if nodes % 2 == 1 else nodes + 1
    xs = np.linspace(lower, upper, n)
    h = (upper - lower) / (n - 1)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return xs, w * h / 3.0
