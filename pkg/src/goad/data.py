"""Loading, encoding, labelling and splitting tabular anomaly-detection data.

Raw tables are delimited text described by a small declarative schema (JSON).
ODDS ``.mat`` files (``X``, ``y``) are read directly since they are already
numeric and labelled.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
LABEL = "label"

KDD_COLUMNS = [
    ("duration", CONTINUOUS), ("protocol_type", CATEGORICAL), ("service", CATEGORICAL),
    ("flag", CATEGORICAL), ("src_bytes", CONTINUOUS), ("dst_bytes", CONTINUOUS),
    ("land", CATEGORICAL), ("wrong_fragment", CONTINUOUS), ("urgent", CONTINUOUS),
    ("hot", CONTINUOUS), ("num_failed_logins", CONTINUOUS), ("logged_in", CATEGORICAL),
    ("num_compromised", CONTINUOUS), ("root_shell", CONTINUOUS), ("su_attempted", CONTINUOUS),
    ("num_root", CONTINUOUS), ("num_file_creations", CONTINUOUS), ("num_shells", CONTINUOUS),
    ("num_access_files", CONTINUOUS), ("num_outbound_cmds", CONTINUOUS),
    ("is_host_login", CATEGORICAL), ("is_guest_login", CATEGORICAL), ("count", CONTINUOUS),
    ("srv_count", CONTINUOUS), ("serror_rate", CONTINUOUS), ("srv_serror_rate", CONTINUOUS),
    ("rerror_rate", CONTINUOUS), ("srv_rerror_rate", CONTINUOUS), ("same_srv_rate", CONTINUOUS),
    ("diff_srv_rate", CONTINUOUS), ("srv_diff_host_rate", CONTINUOUS),
    ("dst_host_count", CONTINUOUS), ("dst_host_srv_count", CONTINUOUS),
    ("dst_host_same_srv_rate", CONTINUOUS), ("dst_host_diff_srv_rate", CONTINUOUS),
    ("dst_host_same_src_port_rate", CONTINUOUS), ("dst_host_srv_diff_host_rate", CONTINUOUS),
    ("dst_host_serror_rate", CONTINUOUS), ("dst_host_srv_serror_rate", CONTINUOUS),
    ("dst_host_rerror_rate", CONTINUOUS), ("dst_host_srv_rerror_rate", CONTINUOUS),
    ("label", LABEL),
]

ARRHYTHMIA_ANOMALY_CLASSES = ("3", "4", "5", "7", "8", "9", "14", "15")

MISSING = ("?", "")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LabelRule:
    """How raw label values map to {normal, anomaly}.

    ``anomaly_values`` lists labels that are anomalous; with ``invert`` the
    listed values are the *normal* ones and everything else is anomalous.
    ``anomaly_ratio`` subsamples anomalies to that multiple of the normal count.
    """

    name: str
    anomaly_values: Tuple[str, ...]
    invert: bool = False
    anomaly_ratio: Optional[float] = None

    def is_anomaly(self, labels: Sequence[str]) -> np.ndarray:
        hit = np.isin(np.asarray([str(v).strip() for v in labels]), self.anomaly_values)
        return ~hit if self.invert else hit

    def to_dict(self) -> dict:
        return {"name": self.name, "anomaly_values": list(self.anomaly_values),
                "invert": self.invert, "anomaly_ratio": self.anomaly_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelRule":
        return cls(d.get("name", "custom"), tuple(str(v) for v in d["anomaly_values"]),
                   bool(d.get("invert", False)), d.get("anomaly_ratio"))


def label_rules(dataset_name: str, custom: Optional[dict] = None) -> LabelRule:
    """Anomaly mapping for a named dataset, or a custom rule passed through."""
    if custom is not None:
        return LabelRule.from_dict(custom)
    name = dataset_name.lower()
    if name == "arrhythmia":
        return LabelRule(name, ARRHYTHMIA_ANOMALY_CLASSES)
    if name == "thyroid":
        return LabelRule(name, ("hyperfunction",))
    if name == "kdd":
        # non-attack traffic is the minority and plays the anomaly
        return LabelRule(name, ("normal", "normal."))
    if name == "kddrev":
        return LabelRule(name, ("normal", "normal."), invert=True, anomaly_ratio=0.25)
    if name in ("binary", "odds"):
        return LabelRule(name, ("1", "1.0", "True", "true"))
    raise DataError(f"unknown dataset {dataset_name!r} and no custom label rule given")


@dataclass
class TableSchema:
    columns: List[Tuple[str, str]]
    delimiter: str = ","
    header: bool = False
    rule: Optional[dict] = None  # custom label rule, else taken from the dataset name

    def __post_init__(self):
        self.columns = [(str(n), str(k)) for n, k in self.columns]
        kinds = [k for _, k in self.columns]
        bad = set(kinds) - {CONTINUOUS, CATEGORICAL, LABEL}
        if bad:
            raise DataError(f"unknown column kinds {sorted(bad)}")
        if kinds.count(LABEL) != 1:
            raise DataError(f"schema needs exactly one label column, found {kinds.count(LABEL)}")

    @property
    def label_index(self) -> int:
        return [k for _, k in self.columns].index(LABEL)

    def to_dict(self) -> dict:
        return {"columns": [{"name": n, "kind": k} for n, k in self.columns],
                "delimiter": self.delimiter, "header": self.header, "rule": self.rule}

    @classmethod
    def from_dict(cls, d: dict) -> "TableSchema":
        cols = [(c["name"], c["kind"]) for c in d["columns"]]
        return cls(cols, d.get("delimiter", ","), bool(d.get("header", False)), d.get("rule"))

    @classmethod
    def from_file(cls, path: str) -> "TableSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def builtin_schema(name: str) -> TableSchema:
    if name.lower() in ("kdd", "kddrev"):
        return TableSchema(KDD_COLUMNS)
    raise DataError(f"no built-in schema for {name!r}; pass a schema file")


@dataclass
class RawTable:
    schema: TableSchema
    values: Dict[str, list]
    n_rows: int


def _open_text(path: str):
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, newline="", encoding="utf-8")


def load_table(path: str, schema: TableSchema) -> RawTable:
    """Parse a delimited file column-wise according to ``schema``."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    names = [n for n, _ in schema.columns]
    kinds = [k for _, k in schema.columns]
    values: Dict[str, list] = {n: [] for n in names}
    n = 0
    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for lineno, row in enumerate(reader, start=1):
            if schema.header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise DataError(f"{path}:{lineno}: expected {len(names)} fields, got {len(row)}")
            for col, (name, kind, cell) in enumerate(zip(names, kinds, row)):
                cell = cell.strip()
                if kind == CONTINUOUS:
                    if cell in MISSING:
                        values[name].append(np.nan)
                        continue
                    try:
                        values[name].append(float(cell))
                    except ValueError:
                        raise DataError(f"{path}:{lineno}: column {col} ({name}) is not numeric: {cell!r}") from None
                else:
                    values[name].append(cell)
            n += 1
    log.info("loaded %d rows from %s", n, path)
    return RawTable(schema, values, n)


@dataclass
class Encoder:
    """Column layout of the encoded matrix; categorical values in first-seen order."""

    columns: List[Tuple[str, str]]
    vocab: Dict[str, List[str]]
    fill: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def fit(cls, raw: RawTable) -> "Encoder":
        cols = [(n, k) for n, k in raw.schema.columns if k != LABEL]
        vocab = {}
        fill = {}
        for name, kind in cols:
            if kind == CATEGORICAL:
                vocab[name] = list(dict.fromkeys(raw.values[name]))
            else:
                col = np.asarray(raw.values[name], dtype=np.float64)
                fill[name] = float(np.nanmedian(col)) if np.isfinite(col).any() else 0.0
        return cls(cols, vocab, fill)

    @property
    def feature_names(self) -> List[str]:
        out = []
        for name, kind in self.columns:
            if kind == CATEGORICAL:
                out.extend(f"{name}={v}" for v in self.vocab[name])
            else:
                out.append(name)
        return out

    @property
    def continuous_mask(self) -> np.ndarray:
        mask = []
        for name, kind in self.columns:
            mask.extend([False] * len(self.vocab[name]) if kind == CATEGORICAL else [True])
        return np.array(mask, dtype=bool)

    def transform(self, raw: RawTable) -> np.ndarray:
        blocks = []
        for name, kind in self.columns:
            if kind == CATEGORICAL:
                index = {v: i for i, v in enumerate(self.vocab[name])}
                block = np.zeros((raw.n_rows, len(index)))
                unknown = set()
                for r, v in enumerate(raw.values[name]):
                    j = index.get(v)
                    if j is None:
                        unknown.add(v)
                    else:
                        block[r, j] = 1.0
                if unknown:
                    log.warning("column %s: %d unseen categorical value(s) encoded as all-zero: %s",
                                name, len(unknown), sorted(unknown)[:5])
                blocks.append(block)
            else:
                col = np.asarray(raw.values[name], dtype=np.float64)
                col = np.where(np.isnan(col), self.fill.get(name, 0.0), col)
                blocks.append(col[:, None])
        return np.hstack(blocks) if blocks else np.zeros((raw.n_rows, 0))

    def to_dict(self) -> dict:
        return {"columns": [[n, k] for n, k in self.columns], "vocab": self.vocab, "fill": self.fill}

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder":
        return cls([tuple(c) for c in d["columns"]], {k: list(v) for k, v in d["vocab"].items()},
                   {k: float(v) for k, v in d.get("fill", {}).items()})

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class EncodedDataset:
    X: np.ndarray  # (N, L) float64
    y: np.ndarray  # (N,) bool, True = anomaly
    feature_names: List[str]
    continuous_mask: np.ndarray
    name: str = "custom"
    encoder: Optional[Encoder] = None

    @property
    def n_anomalies(self) -> int:
        return int(self.y.sum())


def encode(raw: RawTable, encoder: Optional[Encoder] = None) -> Tuple[np.ndarray, Encoder]:
    encoder = encoder or Encoder.fit(raw)
    return encoder.transform(raw), encoder


def subsample_anomalies(y: np.ndarray, ratio: float, seed: int) -> np.ndarray:
    """Row indices keeping all normals and round(ratio * #normals) anomalies."""
    normal = np.flatnonzero(~y)
    anomalous = np.flatnonzero(y)
    keep = int(round(ratio * normal.size))
    if keep > anomalous.size:
        raise DataError(f"need {keep} anomalies for ratio {ratio}, only {anomalous.size} available")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(anomalous, size=keep, replace=False))
    return np.sort(np.concatenate([normal, chosen]))


def dataset_from_table(raw: RawTable, rule: LabelRule, name: str = "custom",
                       encoder: Optional[Encoder] = None, seed: int = 0) -> EncodedDataset:
    X, encoder = encode(raw, encoder)
    y = rule.is_anomaly(raw.values[raw.schema.columns[raw.schema.label_index][0]])
    if rule.anomaly_ratio is not None:
        rows = subsample_anomalies(y, rule.anomaly_ratio, seed)
        X, y = X[rows], y[rows]
    return EncodedDataset(X, y, encoder.feature_names, encoder.continuous_mask, name, encoder)


def load_mat(path: str, name: str = "custom") -> EncodedDataset:
    """ODDS-style ``.mat`` (or ``.npz``) file holding ``X`` and binary ``y``."""
    if path.endswith(".npz"):
        with np.load(path) as f:
            X, y = f["X"], f["y"]
    else:
        from scipy.io import loadmat
        try:
            f = loadmat(path)
            X, y = f["X"], f["y"]
        except NotImplementedError:  # MATLAB v7.3 is HDF5
            import h5py
            with h5py.File(path, "r") as h:
                X, y = np.asarray(h["X"]).T, np.asarray(h["y"]).T
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel().astype(bool)
    if X.shape[0] != y.shape[0]:
        raise DataError(f"{path}: X has {X.shape[0]} rows but y has {y.shape[0]}")
    names = [f"x{i}" for i in range(X.shape[1])]
    return EncodedDataset(X, y, names, np.ones(X.shape[1], dtype=bool), name)


def load_dataset(path: str, name: str, schema: Optional[TableSchema] = None, seed: int = 0) -> EncodedDataset:
    """Load and label a dataset file. ``.mat``/``.npz`` need no schema."""
    if path.endswith((".mat", ".npz")):
        return load_mat(path, name)
    if path.endswith(".gdat"):
        return load_encoded(path)
    schema = schema or builtin_schema(name)
    rule = label_rules(name, schema.rule)
    return dataset_from_table(load_table(path, schema), rule, name, seed=seed)


@dataclass
class SplitSpec:
    train_fraction_of_normals: float = 0.5
    seed: int = 0
    contamination_fraction: float = 0.0

    def __post_init__(self):
        for v in (self.train_fraction_of_normals, self.contamination_fraction):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"fractions must lie in [0, 1], got {v}")
        if self.contamination_fraction >= 1.0:
            raise ValueError("contamination fraction must be below 1")


@dataclass
class Split:
    train_idx: np.ndarray
    test_idx: np.ndarray
    X_train: np.ndarray
    X_test: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray

    @property
    def n_test_anomalies(self) -> int:
        return int(self.y_test.sum())


def split(dataset: EncodedDataset, spec: SplitSpec) -> Split:
    """Train on a share of the normals; test on the rest plus the anomalies.

    With contamination, enough anomalies move (unlabelled) into the training
    set that they make up ``contamination_fraction`` of it; the remaining
    anomalies stay in the test set.
    """
    y = np.asarray(dataset.y, dtype=bool)
    normals = np.flatnonzero(~y)
    anomalies = np.flatnonzero(y)
    if normals.size < 2:
        raise DataError(f"need at least 2 normal rows, got {normals.size}")
    rng = np.random.default_rng(spec.seed)
    normals = rng.permutation(normals)
    n_train = int(round(spec.train_fraction_of_normals * normals.size))
    n_train = min(max(n_train, 1), normals.size - 1)
    train_idx = normals[:n_train]
    test_idx = normals[n_train:]
    c = spec.contamination_fraction
    if c > 0:
        n_contam = int(round(c * n_train / (1.0 - c)))
        if n_contam >= anomalies.size:
            raise DataError(f"contamination {c} needs {n_contam} anomalies but only "
                            f"{anomalies.size} exist (at least one must stay for testing)")
        anomalies = rng.permutation(anomalies)
        train_idx = np.concatenate([train_idx, anomalies[:n_contam]])
        anomalies = anomalies[n_contam:]
    train_idx = np.sort(train_idx)
    test_idx = np.sort(np.concatenate([test_idx, anomalies]))
    return Split(train_idx, test_idx, dataset.X[train_idx], dataset.X[test_idx],
                 y[train_idx], y[test_idx])


NORMALIZATIONS = ("zscore", "minmax", "none")


@dataclass
class NormStats:
    mode: str
    shift: np.ndarray
    scale: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.shift) / self.scale

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.scale + self.shift


def fit_normalization(train: np.ndarray, continuous_mask: Optional[np.ndarray] = None,
                      mode: str = "zscore") -> NormStats:
    """Per-column shift/scale from training rows; only continuous columns move.

    Constant columns get unit scale (so z-scoring maps them to zero).
    """
    if mode not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {mode!r}; choose from {NORMALIZATIONS}")
    train = np.asarray(train, dtype=np.float64)
    L = train.shape[1]
    mask = np.ones(L, dtype=bool) if continuous_mask is None else np.asarray(continuous_mask, dtype=bool)
    shift = np.zeros(L)
    scale = np.ones(L)
    if mode == "zscore":
        mean = train.mean(axis=0)
        std = train.std(axis=0)
        shift[mask] = mean[mask]
        scale[mask] = np.where(std[mask] > 0, std[mask], 1.0)
    elif mode == "minmax":
        lo, hi = train.min(axis=0), train.max(axis=0)
        shift[mask] = lo[mask]
        scale[mask] = np.where(hi[mask] > lo[mask], (hi - lo)[mask], 1.0)
    return NormStats(mode, shift, scale)


def standardize(train, test, continuous_mask=None, mode: str = "zscore"):
    """Normalize train and test with statistics from the training rows only."""
    stats = fit_normalization(train, continuous_mask, mode)
    return stats.apply(train), stats.apply(test), stats


# binary dataset cache: magic, version, N, L, names-json length, names json,
# X as little-endian float64 row-major, y as uint8
_DS_MAGIC = b"GOADDS\x00\x01"
_DS_VERSION = 1


def save_encoded(path: str, ds: EncodedDataset) -> None:
    meta = json.dumps({"name": ds.name, "feature_names": ds.feature_names,
                       "continuous_mask": [bool(v) for v in ds.continuous_mask],
                       "encoder": ds.encoder.to_dict() if ds.encoder else None},
                      sort_keys=True).encode()
    N, L = ds.X.shape
    with open(path, "wb") as fh:
        fh.write(_DS_MAGIC)
        fh.write(struct.pack("<IQQQ", _DS_VERSION, N, L, len(meta)))
        fh.write(meta)
        fh.write(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())
        fh.write(np.asarray(ds.y, dtype=np.uint8).tobytes())


def load_encoded(path: str) -> EncodedDataset:
    with open(path, "rb") as fh:
        if fh.read(len(_DS_MAGIC)) != _DS_MAGIC:
            raise DataError(f"{path}: not an encoded dataset file")
        version, N, L, meta_len = struct.unpack("<IQQQ", fh.read(struct.calcsize("<IQQQ")))
        if version != _DS_VERSION:
            raise DataError(f"{path}: unsupported dataset format version {version}")
        meta = json.loads(fh.read(meta_len))
        X = np.frombuffer(fh.read(8 * N * L), dtype="<f8").reshape(N, L).astype(np.float64)
        y = np.frombuffer(fh.read(N), dtype=np.uint8).astype(bool)
    enc = Encoder.from_dict(meta["encoder"]) if meta.get("encoder") else None
    return EncodedDataset(X, y, meta["feature_names"], np.array(meta["continuous_mask"], dtype=bool),
                          meta["name"], enc)
