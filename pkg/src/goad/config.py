"""Run configuration: dataset presets, JSON config files and ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from .core import BankSpec, TrainConfig
from .data import NORMALIZATIONS, SplitSpec

# Per-dataset hyperparameters. Task counts, reduced dims, widths, epochs and
# the learning rate are the published settings; the rest are our choices.
PRESETS: Dict[str, dict] = {
    "thyroid": {
        "train": {"epochs": 1, "hidden": [], "feature_dim": 8},
        "bank": {"n_tasks": 256, "reduced_dim": 32, "scaled": True},
        "normalization": "minmax",
        "n_runs": 100,
    },
    "arrhythmia": {
        "train": {"epochs": 1, "hidden": [], "feature_dim": 8},
        "bank": {"n_tasks": 256, "reduced_dim": 32, "scaled": True},
        "normalization": "minmax",
        "n_runs": 100,
    },
    "kddrev": {
        "train": {"epochs": 25, "hidden": [128], "feature_dim": 128},
        "bank": {"n_tasks": 256, "reduced_dim": 64, "scaled": True},
        "normalization": "zscore",
        "n_runs": 5,
    },
    "kdd": {
        "train": {"epochs": 25, "hidden": [32], "feature_dim": 32},
        "bank": {"n_tasks": 64, "reduced_dim": 128, "scaled": True},
        "normalization": "zscore",
        "n_runs": 5,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = "custom"
    data_path: Optional[str] = None
    schema_path: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    bank: BankSpec = field(default_factory=BankSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    normalization: str = "zscore"
    n_runs: int = 1
    seed: int = 0
    dataset_seed: int = 0
    lof_k: int = 20
    out: str = "runs"
    jobs: int = 1

    def validate(self, need_data: bool = True) -> "RunConfig":
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if need_data:
            if not self.data_path:
                raise ConfigError("no dataset path given (set data_path or pass --data)")
            if not os.path.exists(self.data_path):
                raise ConfigError(f"dataset file not found: {self.data_path}")
        if self.schema_path and not os.path.exists(self.schema_path):
            raise ConfigError(f"schema file not found: {self.schema_path}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: List[str]) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(value)
    return raw


def build(raw: dict) -> RunConfig:
    """Resolve a raw config dict (preset name + overrides) into a RunConfig."""
    raw = copy.deepcopy(raw)
    preset = raw.pop("preset", None) or raw.get("dataset")
    if preset in PRESETS:
        raw = _merge(PRESETS[preset], raw)
        raw.setdefault("dataset", preset)
    unknown = set(raw) - {f for f in RunConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        train = TrainConfig(**raw.pop("train", {}))
        bank = BankSpec(**raw.pop("bank", {}))
        split = SplitSpec(**raw.pop("split", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(train=train, bank=bank, split=split, **raw)


def load(path: Optional[str] = None, preset: Optional[str] = None,
         overrides: Optional[List[str]] = None) -> RunConfig:
    raw: dict = {}
    if path:
        with open(path) as fh:
            raw = json.load(fh)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        raw["preset"] = preset
    return build(apply_overrides(raw, overrides or []))
