"""Distance-based transformation classification for anomaly detection.

Training transforms every normal sample by all M tasks and fits a feature
extractor so that each transformation's features cluster around their own
center. A test sample's score sums, over its M transformed copies, the
negative log-probability that the copy is assigned back to its own task.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .numeric import (AdamState, DenseLayer, DimensionError, FeatureNet, adam_step,
                      init_layer, log_softmax, logsumexp, matmul_rows)
from .tasks import TaskBank, apply_all, sample_bank

log = logging.getLogger(__name__)

RECOMPUTED_MEANS = "recomputed_means"
LEARNED_FREE = "learned_free"
OPENSET = "openset"
SOFTMAX = "softmax"

# transformed instances per scoring chunk
_SCORE_CHUNK = 1 << 16


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    margin: float = 1.0
    epsilon: float = 1e-12
    epochs: int = 1
    batch_size: int = 256
    learning_rate: float = 1e-3
    ce_weight: float = 1.0
    feat_l2_weight: float = 1e-3
    center_mode: str = RECOMPUTED_MEANS
    score_mode: str = OPENSET
    hidden: Tuple[int, ...] = ()
    feature_dim: int = 8
    slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.margin < 0 or self.epsilon < 0:
            raise ValueError("margin and epsilon must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.ce_weight < 0 or self.feat_l2_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.center_mode not in (RECOMPUTED_MEANS, LEARNED_FREE):
            raise ValueError(f"unknown center_mode {self.center_mode!r}")
        if self.score_mode not in (OPENSET, SOFTMAX):
            raise ValueError(f"unknown score_mode {self.score_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class BankSpec:
    n_tasks: int = 256
    reduced_dim: int = 32
    generator: str = "affine"
    scaled: bool = False
    seed: Optional[int] = None  # None: derived from the training seed


def split_seed(root: int) -> Tuple[int, int, int]:
    """Derive independent (bank, init, shuffle) seeds from one root seed."""
    children = np.random.SeedSequence(int(root)).spawn(3)
    return tuple(int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)


@dataclass
class GoadModel:
    bank: TaskBank
    net: FeatureNet
    centers: np.ndarray  # (M, d)
    config: TrainConfig
    aux_head: Optional[DenseLayer] = None
    history: List[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if self.bank.r != self.net.input_dim:
            raise DimensionError("net input_dim vs bank r", self.bank.r, self.net.input_dim)
        if self.centers.shape != (self.bank.M, self.net.output_dim):
            raise DimensionError("centers shape", (self.bank.M, self.net.output_dim), self.centers.shape)

    def score(self, X) -> np.ndarray:
        return score_batch(self, X)


def compute_centers(net: FeatureNet, bank: TaskBank, X, chunk_rows: int = 512) -> np.ndarray:
    """Mean feature of every transformation over the rows of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot compute centers from an empty training set")
    total = np.zeros((bank.M, net.output_dim))
    for start in range(0, X.shape[0], chunk_rows):
        Z = apply_all(bank, X[start:start + chunk_rows])
        F = net.forward(Z.reshape(-1, bank.r), exact_rows=False).reshape(Z.shape[0], bank.M, -1)
        total += F.sum(axis=0)
    return total / X.shape[0]


def squared_distances(features, centers) -> np.ndarray:
    """(B, M) squared Euclidean distances between feature rows and centers."""
    features = np.asarray(features, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if features.ndim != 2 or centers.ndim != 2 or features.shape[1] != centers.shape[1]:
        raise DimensionError("feature dimension", centers.shape[-1], features.shape[-1])
    f2 = np.einsum("ij,ij->i", features, features)
    c2 = np.einsum("ij,ij->i", centers, centers)
    d2 = features @ (-2.0 * centers.T)
    d2 += f2[:, None]
    d2 += c2
    return np.maximum(d2, 0.0, out=d2)


def triplet_center_loss(features, labels, centers, margin: float, reduction: str = "sum"):
    """Hinge loss pulling each feature to its own center and away from the nearest other one.

    Returns ``(loss, d_features, d_centers)``. At a tie for the nearest other
    center the gradient goes to the lowest index.
    """
    features = np.asarray(features, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    labels = np.asarray(labels)
    M = centers.shape[0]
    if M < 2:
        raise ValueError("triplet center loss needs at least two centers")
    if labels.shape != (features.shape[0],):
        raise DimensionError("labels", (features.shape[0],), labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= M):
        raise ValueError(f"labels must lie in [0, {M})")
    n = features.shape[0]
    rows = np.arange(n)
    d2 = squared_distances(features, centers)
    own = d2[rows, labels].copy()
    d2[rows, labels] = np.inf
    nearest = np.argmin(d2, axis=1)
    hinge = own + margin - d2[rows, nearest]
    active = hinge > 0
    loss = float(np.sum(np.where(active, hinge, 0.0)))

    scale = 1.0 / n if reduction == "mean" and n else 1.0
    a = active[:, None] * scale
    c_own = centers[labels]
    c_near = centers[nearest]
    d_features = 2.0 * a * (c_near - c_own)
    d_centers = np.zeros_like(centers)
    np.add.at(d_centers, labels, -2.0 * a * (features - c_own))
    np.add.at(d_centers, nearest, 2.0 * a * (features - c_near))
    return loss * scale, d_features, d_centers


def _normalised_log_probs(u: np.ndarray, lmean: np.ndarray, log_eps, M: int) -> np.ndarray:
    """log((e^u + eps') / (M (e^lmean + eps'))) with ``log_eps`` = log eps'.

    ``u`` holds shifted log-weights and ``lmean`` the log of their row mean.
    Equal weights make both terms identical, so the result is exactly -log M.
    """
    if log_eps is None:
        out = u - lmean
    else:
        out = np.logaddexp(u, log_eps) - np.logaddexp(lmean, log_eps)
    out -= np.log(M)
    return np.minimum(out, 0.0, out=out)


def log_probs_from_distances(d2: np.ndarray, epsilon: float) -> np.ndarray:
    """log of (exp(-d) + eps) / (sum exp(-d) + M eps), row-wise, in log space."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    a = -np.asarray(d2, dtype=np.float64)
    M = a.shape[1]
    shift = a.max(axis=1, keepdims=True)
    u = a - shift
    lmean = logsumexp(u, axis=1)[:, None] - np.log(M)
    log_eps = None if epsilon == 0 else np.log(epsilon) - shift
    return _normalised_log_probs(u, lmean, log_eps, M)


def transform_log_probs(features, centers, epsilon: float) -> np.ndarray:
    return log_probs_from_distances(squared_distances(features, centers), epsilon)


def _features(model: GoadModel, X: np.ndarray) -> np.ndarray:
    Z = apply_all(model.bank, X)
    return model.net.forward(Z.reshape(-1, model.bank.r))


def _own_task_log_probs(F: np.ndarray, centers: np.ndarray, M: int, epsilon: float) -> np.ndarray:
    """Per transformed copy, the log-probability of its own task: (rows, M).

    Uses -||f - c||^2 = g - ||f||^2 with g = 2 f.c - ||c||^2; the row
    constant ||f||^2 cancels from the ratio and only re-enters through epsilon.
    """
    n_rows = F.shape[0] // M
    c2 = np.einsum("ij,ij->i", centers, centers)
    aug_f = np.hstack([F, np.ones((F.shape[0], 1))])
    aug_c = np.hstack([2.0 * centers, -c2[:, None]])
    g = matmul_rows(aug_f, aug_c.T)
    shift = g.max(axis=1)
    own = g.reshape(n_rows, M, M)[:, np.arange(M), np.arange(M)] - shift.reshape(n_rows, M)
    g -= shift[:, None]
    lmean = (logsumexp(g, axis=1) - np.log(M)).reshape(n_rows, M)
    log_eps = None
    if epsilon > 0:
        f2 = np.einsum("ij,ij->i", F, F)
        log_eps = (np.log(epsilon) + f2 - shift).reshape(n_rows, M)
    return _normalised_log_probs(own, lmean, log_eps, M)


def _neg_row_sums(logp: np.ndarray) -> np.ndarray:
    # correctly rounded, so M equal terms give exactly M * log(M)
    return np.array([-math.fsum(row) for row in logp])


def _openset_chunk(model: GoadModel, X: np.ndarray) -> np.ndarray:
    F = _features(model, X)
    return _neg_row_sums(_own_task_log_probs(F, model.centers, model.bank.M, model.config.epsilon))


def _softmax_chunk(model: GoadModel, X: np.ndarray) -> np.ndarray:
    if model.aux_head is None:
        raise ValueError("closed-set scoring needs a trained classification head")
    M = model.bank.M
    logp = log_softmax(model.aux_head.forward(_features(model, X)))
    return _neg_row_sums(logp.reshape(X.shape[0], M, M)[:, np.arange(M), np.arange(M)])


def _check_rows(model: GoadModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.bank.L:
        raise DimensionError("input columns", model.bank.L, X.shape[-1])
    return X


def anomaly_score(x, model: GoadModel) -> float:
    """Open-set score of one sample; higher means more anomalous."""
    return float(_openset_chunk(model, _check_rows(model, x))[0])


def closed_set_score(x, model: GoadModel) -> float:
    return float(_softmax_chunk(model, _check_rows(model, x))[0])


def score_batch(model: GoadModel, X, mode: Optional[str] = None) -> np.ndarray:
    """Scores for every row of X, in input order."""
    X = _check_rows(model, X)
    mode = mode or model.config.score_mode
    fn = _openset_chunk if mode == OPENSET else _softmax_chunk
    rows = max(1, _SCORE_CHUNK // model.bank.M)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], rows):
        out[start:start + rows] = fn(model, X[start:start + rows])
    return out


def batch_loss(net: FeatureNet, head: Optional[DenseLayer], centers: np.ndarray,
               Z: np.ndarray, labels: np.ndarray, config: TrainConfig,
               center_grads: bool = False):
    """Training objective on a block of transformed instances.

    Returns ``(loss, grads)`` with grads ordered as net params, then head
    weight and bias (when a head is given), then centers (when
    ``center_grads``).
    """
    n = Z.shape[0]
    F, cache = net.forward_cached(Z)
    loss, dF, dC = triplet_center_loss(F, labels, centers, config.margin, reduction="mean")
    head_grads = []
    if head is not None:
        probs = head.forward(F, exact_rows=False)
        probs -= probs.max(axis=1, keepdims=True)
        picked = probs[np.arange(n), labels].copy()
        np.exp(probs, out=probs)
        norm = probs.sum(axis=1)
        loss += config.ce_weight * float(np.mean(np.log(norm) - picked))
        probs /= norm[:, None]
        probs[np.arange(n), labels] -= 1.0
        probs *= config.ce_weight / n
        head_grads = [probs.T @ F, probs.sum(axis=0)]
        dF = dF + probs @ head.weight
    if config.feat_l2_weight:
        loss += config.feat_l2_weight * float(np.einsum("ij,ij->", F, F)) / n
        dF = dF + (2.0 * config.feat_l2_weight / n) * F
    net_grads, _ = net.backward(cache, dF)
    grads = net_grads + head_grads
    if center_grads:
        grads.append(dC)
    return loss, grads


def train(X_train, config: TrainConfig, bank_spec: BankSpec) -> GoadModel:
    """Fit the feature extractor and centers on normal training rows."""
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    bank_seed, init_seed, shuffle_seed = split_seed(config.seed)
    if bank_spec.seed is not None:
        bank_seed = int(bank_spec.seed)
    bank = sample_bank(bank_seed, bank_spec.n_tasks, X.shape[1], bank_spec.reduced_dim,
                       bank_spec.generator, bank_spec.scaled)
    init_rng = np.random.default_rng(init_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    net = FeatureNet.create(bank.r, config.hidden, config.feature_dim, init_rng, config.slope)
    head = None
    if config.ce_weight > 0 or config.score_mode == SOFTMAX:
        head = init_layer(init_rng, config.feature_dim, bank.M)

    learned = config.center_mode == LEARNED_FREE
    centers = compute_centers(net, bank, X)
    params = net.params() + ([head.weight, head.bias] if head is not None else [])
    if learned:
        params.append(centers)
    state = AdamState(learning_rate=config.learning_rate)
    M, N = bank.M, X.shape[0]
    history = []
    for epoch in range(config.epochs):
        if not learned and epoch > 0:
            centers[...] = compute_centers(net, bank, X)
        order = shuffle_rng.permutation(N)
        total = 0.0
        for start in range(0, N, config.batch_size):
            rows = X[order[start:start + config.batch_size]]
            Z = apply_all(bank, rows).reshape(-1, bank.r)
            labels = np.tile(np.arange(M), rows.shape[0])
            loss, grads = batch_loss(net, head, centers, Z, labels, config, center_grads=learned)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting at row {start}")
            adam_step(params, grads, state)
            total += loss * rows.shape[0]
        history.append(total / N)
        log.debug("epoch %d mean loss %.6f", epoch, history[-1])
    final = compute_centers(net, bank, X)
    if not np.all(np.isfinite(final)):
        raise TrainingError("training produced non-finite centers")
    return GoadModel(bank, net, final, replace(config), head, history)
