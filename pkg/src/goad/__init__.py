"""Anomaly detection for tabular data by classifying random affine transformations."""

from .core import (BankSpec, GoadModel, TrainConfig, TrainingError, anomaly_score,
                   closed_set_score, compute_centers, score_batch, train,
                   transform_log_probs, triplet_center_loss)
from .data import (EncodedDataset, SplitSpec, load_dataset, split, standardize)
from .evaluation import (GoadDetector, LofDetector, MetricsReport, contamination_curve,
                         run_once, run_repeated, select_threshold, sweep_tasks)
from .numeric import DimensionError, FeatureNet
from .tasks import TaskBank, apply, apply_all, sample_bank

__version__ = "0.1.0"
