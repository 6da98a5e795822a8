"""Thresholding, F1/AUC metrics, repeated seeded runs and parameter sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import BankSpec, TrainConfig, score_batch, train
from .data import EncodedDataset, SplitSpec, fit_normalization, split
from .lof import fit as lof_fit, lof_scores

log = logging.getLogger(__name__)


def select_threshold(scores, n_anomalies: int):
    """Flag exactly the ``n_anomalies`` highest scores.

    Ties at the boundary go to the earlier row. Returns ``(threshold, flags)``
    where ``threshold`` is the lowest flagged score (``inf`` when none are).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= n_anomalies <= scores.size:
        raise ValueError(f"n_anomalies={n_anomalies} outside [0, {scores.size}]")
    order = np.argsort(-scores, kind="stable")
    flags = np.zeros(scores.size, dtype=bool)
    flags[order[:n_anomalies]] = True
    threshold = float(scores[order[n_anomalies - 1]]) if n_anomalies else float("inf")
    return threshold, flags


def confusion_and_f1(predicted, truth) -> Dict[str, float]:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "precision": precision, "recall": recall, "f1": f1}


def roc_auc(scores, truth) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties count half)."""
    from scipy.stats import rankdata
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate_scores(scores, truth) -> Dict[str, float]:
    truth = np.asarray(truth, dtype=bool)
    n_a = int(truth.sum())
    threshold, flags = select_threshold(scores, n_a)
    out = confusion_and_f1(flags, truth)
    out["threshold"] = threshold
    out["n_anomalies"] = n_a
    out["roc_auc"] = roc_auc(scores, truth) if 0 < n_a < truth.size else float("nan")
    return out


# ---------------------------------------------------------------- detectors

@dataclass
class GoadDetector:
    config: TrainConfig = field(default_factory=TrainConfig)
    bank: BankSpec = field(default_factory=BankSpec)
    name: str = "GOAD"

    def fit(self, X, seed: int):
        return train(X, replace(self.config, seed=seed), self.bank)

    @staticmethod
    def score(fitted, X):
        return score_batch(fitted, X)


@dataclass
class LofDetector:
    k: int = 20
    name: str = "LOF"

    def fit(self, X, seed: int):
        return lof_fit(X, min(self.k, X.shape[0] - 1))

    @staticmethod
    def score(fitted, X):
        return lof_scores(fitted, X)


# ---------------------------------------------------------------- runs

@dataclass
class MetricsReport:
    method: str
    dataset: str
    f1: float
    precision: float
    recall: float
    roc_auc: float
    threshold: float
    n_anomalies: int
    per_run: List[dict]
    mean: float
    std: float

    @property
    def f1_values(self) -> np.ndarray:
        return np.array([r["f1"] for r in self.per_run])

    def summary(self) -> dict:
        return {"method": self.method, "dataset": self.dataset, "n_runs": len(self.per_run),
                "f1_mean": self.mean, "f1_std": self.std, "precision": self.precision,
                "recall": self.recall, "roc_auc": self.roc_auc, "n_anomalies": self.n_anomalies}


def run_once(dataset: EncodedDataset, detector, seed: int, split_spec: Optional[SplitSpec] = None,
             normalization: str = "zscore") -> dict:
    spec = replace(split_spec or SplitSpec(), seed=seed)
    parts = split(dataset, spec)
    stats = fit_normalization(parts.X_train, dataset.continuous_mask, normalization)
    fitted = detector.fit(stats.apply(parts.X_train), seed)
    scores = detector.score(fitted, stats.apply(parts.X_test))
    out = evaluate_scores(scores, parts.y_test)
    out["seed"] = seed
    out["n_train"] = int(parts.X_train.shape[0])
    out["n_test"] = int(parts.X_test.shape[0])
    out["train_anomalies"] = int(parts.y_train.sum())
    return out


def aggregate(runs: List[dict], method: str = "", dataset: str = "") -> MetricsReport:
    runs = sorted(runs, key=lambda r: r["seed"])
    f1 = np.array([r["f1"] for r in runs])

    def avg(key):
        return float(np.mean([r[key] for r in runs]))

    return MetricsReport(method, dataset, float(f1.mean()), avg("precision"), avg("recall"),
                         avg("roc_auc"), avg("threshold"), int(runs[0]["n_anomalies"]),
                         runs, float(f1.mean()), float(f1.std()))


def _run_job(args):
    return run_once(*args)


def run_repeated(dataset: EncodedDataset, detector, n_runs: int, base_seed: int = 0,
                 split_spec: Optional[SplitSpec] = None, normalization: str = "zscore",
                 jobs: int = 1) -> MetricsReport:
    """Independent runs with seeds ``base_seed + k``; aggregation ignores completion order."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    args = [(dataset, detector, base_seed + k, split_spec, normalization) for k in range(n_runs)]
    if jobs > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_job, args))
    else:
        runs = []
        for a in args:
            runs.append(_run_job(a))
            log.info("%s seed %d: F1 %.4f", detector.name, a[2], runs[-1]["f1"])
    return aggregate(runs, detector.name, dataset.name)


@dataclass
class SweepResult:
    axis: str
    values: List[float]
    reports: List[MetricsReport]

    def __post_init__(self):
        if not self.values:
            raise ValueError("sweep axis is empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError(f"sweep axis must be strictly increasing, got {self.values}")

    def rows(self):
        for v, r in zip(self.values, self.reports):
            yield v, r.mean, r.std


def _check_axis(values: Sequence[float]) -> List[float]:
    values = list(values)
    if not values:
        raise ValueError("sweep axis is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"sweep axis must be strictly increasing, got {values}")
    return values


def sweep_tasks(dataset: EncodedDataset, detector: GoadDetector, task_counts: Sequence[int],
                n_runs: int, base_seed: int = 0, split_spec: Optional[SplitSpec] = None,
                normalization: str = "zscore", jobs: int = 1) -> SweepResult:
    counts = _check_axis(task_counts)
    reports = []
    for M in counts:
        det = replace(detector, bank=replace(detector.bank, n_tasks=int(M)))
        reports.append(run_repeated(dataset, det, n_runs, base_seed, split_spec, normalization, jobs))
        log.info("tasks=%d: F1 %.4f +- %.4f", M, reports[-1].mean, reports[-1].std)
    return SweepResult("tasks", counts, reports)


def contamination_curve(dataset: EncodedDataset, detector, fractions: Sequence[float],
                        n_runs: int, base_seed: int = 0, split_spec: Optional[SplitSpec] = None,
                        normalization: str = "zscore", jobs: int = 1) -> SweepResult:
    fractions = _check_axis(fractions)
    base = split_spec or SplitSpec()
    reports = []
    for c in fractions:
        spec = replace(base, contamination_fraction=float(c))
        reports.append(run_repeated(dataset, detector, n_runs, base_seed, spec, normalization, jobs))
        log.info("contamination=%.3f: F1 %.4f +- %.4f", c, reports[-1].mean, reports[-1].std)
    return SweepResult("contamination", fractions, reports)


# ---------------------------------------------------------------- published numbers

class _Absent:
    def __repr__(self):
        return "ABSENT"

    def __bool__(self):
        return False


ABSENT = _Absent()

DATASETS = ("arrhythmia", "thyroid", "kdd", "kddrev")

# F1 (%) and sigma per dataset; None where no sigma was reported
_REFERENCE = {
    "OC-SVM": [(45.8, None), (38.9, None), (79.5, None), (83.2, None)],
    "E2E-AE": [(45.9, None), (11.8, None), (0.3, None), (74.5, None)],
    "LOF": [(50.0, 0.0), (52.7, 0.0), (83.8, 5.2), (81.6, 3.6)],
    "DAGMM": [(49.8, None), (47.8, None), (93.7, None), (93.8, None)],
    "FB-AE": [(51.5, 1.6), (75.0, 0.8), (92.7, 0.3), (95.9, 0.4)],
    "GOAD": [(52.0, 2.3), (74.5, 1.1), (98.4, 0.2), (98.9, 0.3)],
}


def reference_table() -> Dict[str, Dict[str, dict]]:
    """Published F1 scores (%) of the compared methods on the four tabular sets."""
    return {m: {d: {"f1": f, "sigma": s if s is not None else ABSENT}
                for d, (f, s) in zip(DATASETS, rows)}
            for m, rows in _REFERENCE.items()}


def reference_value(method: str, dataset: str, key: str = "f1"):
    entry = reference_table().get(method, {}).get(dataset.lower())
    if entry is None:
        return ABSENT
    return entry[key]
