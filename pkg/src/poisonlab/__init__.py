"""Poisoning attacks on neural-network training sets, and defences.

The package covers the full loop: craft poisoned training data (label
flipping or hypergradient-optimized feature perturbations), detect and
remove it again (label-likelihood knee cut, kNN sanitization, per-class
outlier detection), and evaluate both sides with seeded, reproducible
experiment pipelines.
"""

from .attacks import (
    AttackConfig,
    PoisonedDataset,
    PoisonRecord,
    back_gradient_attack,
    flip_labels,
    poison_count,
    sample_poison_seeds,
)
from .baselines import (
    KnnConfig,
    OutlierConfig,
    ecdf_threshold,
    knn_sanitize,
    l2_scores,
    lof_scores,
    outlier_defence,
)
from .datasets import (
    Dataset,
    DatasetError,
    DatasetUnavailableError,
    SplitSpec,
    available_benchmarks,
    load_delimited,
    make_points,
    prepare_benchmark,
    save_dataset,
    split,
)
from .defence import (
    DefenceConfig,
    DefenceReport,
    defend,
    knee_cutoff,
    label_likelihoods,
    scorer_train_config,
)
from .evaluation import (
    DetectionMetrics,
    auc,
    detection_metrics,
    evaluate_model,
    random_baseline,
    roc_curve,
)
from .experiments import ExperimentConfig, aggregate, run_single, run_table
from .hypergrad import UnrollSpec, attack_objective, back_gradient, unroll_train
from .nn import EarlyStopping, MlpParams, TrainConfig, grad_params, loss, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "Dataset",
    "DatasetError",
    "DatasetUnavailableError",
    "DefenceConfig",
    "DefenceReport",
    "DetectionMetrics",
    "EarlyStopping",
    "ExperimentConfig",
    "KnnConfig",
    "MlpParams",
    "OutlierConfig",
    "PoisonRecord",
    "PoisonedDataset",
    "SplitSpec",
    "TrainConfig",
    "UnrollSpec",
    "aggregate",
    "attack_objective",
    "auc",
    "available_benchmarks",
    "back_gradient",
    "back_gradient_attack",
    "defend",
    "detection_metrics",
    "ecdf_threshold",
    "evaluate_model",
    "flip_labels",
    "grad_params",
    "knee_cutoff",
    "knn_sanitize",
    "l2_scores",
    "label_likelihoods",
    "load_delimited",
    "lof_scores",
    "loss",
    "make_points",
    "outlier_defence",
    "poison_count",
    "prepare_benchmark",
    "random_baseline",
    "roc_curve",
    "run_single",
    "run_table",
    "sample_poison_seeds",
    "save_dataset",
    "scorer_train_config",
    "split",
    "train",
    "unroll_train",
]
