"""Local Outlier Factor with exact, blocked brute-force neighbour search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError

REACH_FLOOR = 1e-12


@dataclass(frozen=True)
class LofModel:
    k: int
    reference: np.ndarray  # (N, L)
    k_distance: np.ndarray  # (N,)
    lrd: np.ndarray  # (N,)


def _knn(queries: np.ndarray, ref: np.ndarray, k: int, self_offset: int = -1,
         block: int = 512):
    """Exact k nearest reference rows for every query row.

    Candidates come from the BLAS distance expansion; their distances are then
    recomputed directly and re-ranked, so returned distances are exact.
    ``self_offset >= 0`` means query i is reference row ``self_offset + i``
    and must not be its own neighbour.
    """
    n = queries.shape[0]
    extra = min(ref.shape[0] - (self_offset >= 0), k + 8)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    r2 = np.einsum("ij,ij->i", ref, ref)
    for s in range(0, n, block):
        q = queries[s:s + block]
        d2 = np.einsum("ij,ij->i", q, q)[:, None] + r2[None, :] - 2.0 * (q @ ref.T)
        if self_offset >= 0:
            d2[np.arange(q.shape[0]), self_offset + s + np.arange(q.shape[0])] = np.inf
        cand = np.argpartition(d2, extra - 1, axis=1)[:, :extra]
        exact = np.sqrt(np.sum((q[:, None, :] - ref[cand]) ** 2, axis=2))
        if self_offset >= 0:
            exact[cand == (self_offset + s + np.arange(q.shape[0]))[:, None]] = np.inf
        order = np.lexsort((cand, exact), axis=1)[:, :k]
        idx[s:s + block] = np.take_along_axis(cand, order, axis=1)
        dist[s:s + block] = np.take_along_axis(exact, order, axis=1)
    return idx, dist


def _lrd(nbr_idx, nbr_dist, k_distance):
    reach = np.maximum(k_distance[nbr_idx], nbr_dist)
    reach = np.maximum(reach, REACH_FLOOR)
    return 1.0 / reach.mean(axis=1)


def fit(train_normals, k: int = 20) -> LofModel:
    X = np.asarray(train_normals, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("reference set ndim", 2, X.ndim)
    if not 1 <= k < X.shape[0]:
        raise ValueError(f"k must satisfy 1 <= k < N, got k={k}, N={X.shape[0]}")
    idx, dist = _knn(X, X, k, self_offset=0)
    k_distance = dist[:, -1].copy()
    lrd = _lrd(idx, dist, k_distance)
    return LofModel(k, X, k_distance, lrd)


def lof_scores(model: LofModel, X) -> np.ndarray:
    """LOF of each query row against the reference set; higher is more anomalous."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.reference.shape[1]:
        raise DimensionError("query columns", model.reference.shape[1], X.shape[1])
    idx, dist = _knn(X, model.reference, model.k)
    lrd_q = _lrd(idx, dist, model.k_distance)
    return model.lrd[idx].mean(axis=1) / lrd_q


def lof_score(model: LofModel, x) -> float:
    return float(lof_scores(model, x)[0])
