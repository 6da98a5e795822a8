"""Random transformation tasks ``T(x, m) = W_m x + b_m``.

A bank is fully described by ``(seed, M, L, r, generator, scaled)``; the
matrices are regenerated from that tuple rather than stored, so regeneration
must stay bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numeric import DimensionError, matmul_rows

GENERATORS = ("affine", "rotation", "permutation")


@dataclass(frozen=True)
class TaskBank:
    seed: int
    M: int
    L: int
    r: int
    generator: str = "affine"
    scaled: bool = False
    weights: np.ndarray = field(repr=False, compare=False, default=None)  # (M, r, L)
    biases: np.ndarray = field(repr=False, compare=False, default=None)  # (M, r)

    @property
    def spec(self) -> dict:
        return {"seed": int(self.seed), "M": self.M, "L": self.L, "r": self.r,
                "generator": self.generator, "scaled": self.scaled}

    @classmethod
    def from_spec(cls, spec: dict) -> "TaskBank":
        return sample_bank(spec["seed"], spec["M"], spec["L"], spec["r"],
                           generator=spec.get("generator", "affine"),
                           scaled=spec.get("scaled", False))


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _affine(rng, M, L, r, scaled):
    w = rng.standard_normal((M, r, L))
    if scaled:
        w /= np.sqrt(L)
    return w


def _rotation(rng, M, L, r):
    # rows (r <= L) or columns (r > L) of a random orthogonal matrix
    n = max(L, r)
    w = np.empty((M, r, L))
    for m in range(M):
        q, rr = np.linalg.qr(rng.standard_normal((n, n)))
        q *= np.sign(np.diag(rr))
        w[m] = q[:r, :L]
    return w


def _permutation(rng, M, L, r):
    if r != L:
        raise ValueError(f"permutation tasks need r == L, got r={r}, L={L}")
    w = np.zeros((M, L, L))
    for m in range(M):
        w[m, np.arange(L), rng.permutation(L)] = 1.0
    return w


def sample_bank(seed: int, M: int, L: int, r: int, generator: str = "affine",
                scaled: bool = False) -> TaskBank:
    """Draw M transformation matrices of shape (r, L) with zero biases.

    ``affine`` draws i.i.d. N(0, 1) entries (divided by sqrt(L) when
    ``scaled``); ``rotation`` and ``permutation`` are the alternative
    families and ignore ``scaled``.
    """
    if M < 2:
        raise ValueError(f"need at least 2 transformations, got M={M}")
    if L < 1 or r < 1:
        raise ValueError(f"dimensions must be positive, got L={L}, r={r}")
    if generator not in GENERATORS:
        raise ValueError(f"unknown generator {generator!r}; choose from {GENERATORS}")
    rng = _rng(seed)
    if generator == "affine":
        w = _affine(rng, M, L, r, scaled)
    elif generator == "rotation":
        w = _rotation(rng, M, L, r)
    else:
        w = _permutation(rng, M, L, r)
    w.flags.writeable = False
    b = np.zeros((M, r))
    b.flags.writeable = False
    return TaskBank(int(seed), M, L, r, generator, bool(scaled), w, b)


def apply(bank: TaskBank, m: int, x) -> np.ndarray:
    if not 0 <= m < bank.M:
        raise IndexError(f"transformation index {m} out of range [0, {bank.M})")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (bank.L,):
        raise DimensionError("input vector length", bank.L, x.shape)
    return bank.weights[m] @ x + bank.biases[m]


def apply_all(bank: TaskBank, X) -> np.ndarray:
    """Transform every row by every task: returns an (N, M, r) array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.L:
        raise DimensionError("input columns", bank.L, X.shape[1] if X.ndim == 2 else X.shape)
    stacked = bank.weights.reshape(bank.M * bank.r, bank.L)
    out = matmul_rows(X, stacked.T).reshape(X.shape[0], bank.M, bank.r)
    return out + bank.biases
