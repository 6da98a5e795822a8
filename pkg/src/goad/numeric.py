"""Dense layers, a small fully-connected network with hand-written
backpropagation, ADAM, and a stable logsumexp.

Everything is float64 numpy. Matrices are plain ``np.ndarray`` objects;
a batch is always laid out as ``(rows, features)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

IDENTITY = "identity"
LEAKY_RELU = "leaky_relu"


class DimensionError(ValueError):
    """Raised when an array does not have the shape an operation needs."""

    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


ROW_BLOCK = 64


def matmul_rows(a: np.ndarray, b: np.ndarray, block: int = ROW_BLOCK) -> np.ndarray:
    """``a @ b`` whose per-row results do not depend on how many rows ``a`` has.

    BLAS picks kernels and tilings from the operand shapes, so the rounding of
    one row can change with the batch it sits in. Every product here is taken
    on a fixed ``(block, k)`` shape, with the tail zero-padded, which keeps
    batch and per-sample results bit-identical.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    n = a.shape[0]
    out = np.empty((n, b.shape[1]))
    full = n - n % block
    for s in range(0, full, block):
        out[s:s + block] = a[s:s + block] @ b
    if full < n:
        pad = np.zeros((block, a.shape[1]))
        pad[:n - full] = a[full:]
        out[full:] = (pad @ b)[:n - full]
    return out


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = IDENTITY
    slope: float = 0.2

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionError("layer weight ndim", 2, self.weight.ndim)
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("layer bias shape", (self.weight.shape[0],), self.bias.shape)
        if self.activation not in (IDENTITY, LEAKY_RELU):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == LEAKY_RELU and not 0.0 < self.slope < 1.0:
            raise ValueError(f"leaky ReLU slope must lie in (0, 1), got {self.slope}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def preactivation(self, x: np.ndarray, exact_rows: bool = True) -> np.ndarray:
        if exact_rows:
            return matmul_rows(x, self.weight.T) + self.bias
        return x @ self.weight.T + self.bias

    def activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation == LEAKY_RELU:
            return np.where(z > 0, z, self.slope * z)
        return z

    def activation_grad(self, z: np.ndarray) -> np.ndarray:
        if self.activation == LEAKY_RELU:
            return np.where(z > 0, 1.0, self.slope)
        return np.ones_like(z)

    def forward(self, x: np.ndarray, exact_rows: bool = True) -> np.ndarray:
        return self.activate(self.preactivation(x, exact_rows))


def init_layer(rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = IDENTITY, slope: float = 0.2) -> DenseLayer:
    # He-normal weights, zero bias
    w = rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)
    return DenseLayer(w, np.zeros(out_dim), activation, slope)


@dataclass
class FeatureNet:
    """Stack of dense layers. Hidden layers use leaky ReLU, the last is linear."""

    layers: List[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("FeatureNet needs at least one layer")
        for k in range(len(self.layers) - 1):
            a, b = self.layers[k], self.layers[k + 1]
            if a.out_dim != b.in_dim:
                raise DimensionError(f"layer {k + 1} input", a.out_dim, b.in_dim)

    @classmethod
    def create(cls, input_dim: int, hidden: Sequence[int], output_dim: int,
               rng: np.random.Generator, slope: float = 0.2) -> "FeatureNet":
        dims = [input_dim, *hidden, output_dim]
        layers = []
        for k in range(len(dims) - 1):
            act = LEAKY_RELU if k < len(dims) - 2 else IDENTITY
            layers.append(init_layer(rng, dims[k], dims[k + 1], act, slope))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def _check_input(self, batch: np.ndarray):
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise DimensionError("FeatureNet input columns", self.input_dim,
                                 batch.shape[1] if batch.ndim == 2 else batch.shape)

    def forward(self, batch: np.ndarray, exact_rows: bool = True) -> np.ndarray:
        """Row-exact by default; ``exact_rows=False`` takes one plain product per layer."""
        batch = np.asarray(batch, dtype=np.float64)
        self._check_input(batch)
        h = batch
        for layer in self.layers:
            h = layer.forward(h, exact_rows)
        return h

    def forward_cached(self, batch: np.ndarray) -> Tuple[np.ndarray, list]:
        """Forward pass that also returns what ``backward`` needs."""
        batch = np.asarray(batch, dtype=np.float64)
        self._check_input(batch)
        cache = []
        h = batch
        for layer in self.layers:
            z = layer.preactivation(h, exact_rows=False)
            cache.append((h, z))
            h = layer.activate(z)
        return h, cache

    def backward(self, cache: list, upstream: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Gradients for ``params()`` (same order) and for the input batch."""
        out_rows = cache[-1][1].shape[0]
        if upstream.shape != (out_rows, self.output_dim):
            raise DimensionError("upstream gradient shape", (out_rows, self.output_dim), upstream.shape)
        grads: List[Optional[np.ndarray]] = [None] * (2 * len(self.layers))
        g = upstream
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            h_in, z = cache[k]
            dz = g * layer.activation_grad(z)
            grads[2 * k] = dz.T @ h_in
            grads[2 * k + 1] = dz.sum(axis=0)
            g = dz @ layer.weight
        return grads, g


def forward(net: FeatureNet, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def backward(net: FeatureNet, batch: np.ndarray, upstream: np.ndarray):
    _, cache = net.forward_cached(batch)
    return net.backward(cache, np.asarray(upstream, dtype=np.float64))


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step_count: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected ADAM update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise DimensionError("number of gradient tensors", len(params), len(grads))
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or m.shape != p.shape:
            raise DimensionError("gradient shape", p.shape, g.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps_adam)
    return state


def logsumexp(values, axis: Optional[int] = None):
    """log(sum(exp(values))) with a max shift. ``-inf`` entries are allowed."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or (axis is not None and values.shape[axis] == 0):
        raise ValueError("logsumexp of an empty input")
    vmax = np.max(values, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    work = np.subtract(values, shift)
    np.exp(work, out=work)  # in place: the shifted copy is ours
    out = np.log(np.sum(work, axis=axis, keepdims=True))
    out += shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    return logits - logsumexp(logits, axis=1)[:, None]
