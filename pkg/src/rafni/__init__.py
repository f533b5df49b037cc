"""Noise-robust training: filter and relabel mislabelled instances during
training, driven by per-epoch losses and class probabilities of a pluggable
classifier."""

from .data import LabeledDataset, gen_synthetic, load_dataset, save_dataset
from .engine import (
    Action,
    ActionLogEntry,
    EpochReport,
    EpochSnapshot,
    InstanceState,
    RafniConfig,
    RafniEngine,
    ThresholdState,
    evaluate_start,
    process_epoch,
    quantile,
    update_thresholds,
)
from .evaluation import (
    ArmSummary,
    CvPlan,
    EffectivenessReport,
    ProtocolResult,
    RunResult,
    accuracy,
    audit,
    derive_seed,
    grid_search,
    holdout_split,
    make_folds,
    run_protocol,
    run_single,
)
from .gmm import Gaussian, GmmFit, fit_two_component, mean_gap, overlap
from .models import (
    Classifier,
    ClassifierKind,
    ClassifierSpec,
    Mlp,
    OptimizerSpec,
    SoftmaxRegression,
    init_model,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .noise import (
    NoiseKind,
    NoiseReport,
    NoiseSpec,
    apply_noise,
    inject_asymmetric,
    inject_nnar,
    inject_symmetric,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionLogEntry",
    "ArmSummary",
    "Classifier",
    "ClassifierKind",
    "ClassifierSpec",
    "CvPlan",
    "EffectivenessReport",
    "EpochReport",
    "EpochSnapshot",
    "Gaussian",
    "GmmFit",
    "InstanceState",
    "LabeledDataset",
    "Mlp",
    "NoiseKind",
    "NoiseReport",
    "NoiseSpec",
    "OptimizerSpec",
    "ProtocolResult",
    "RafniConfig",
    "RafniEngine",
    "RunResult",
    "SoftmaxRegression",
    "ThresholdState",
    "accuracy",
    "apply_noise",
    "audit",
    "derive_seed",
    "evaluate_start",
    "fit_two_component",
    "gen_synthetic",
    "grid_search",
    "holdout_split",
    "init_model",
    "inject_asymmetric",
    "inject_nnar",
    "inject_symmetric",
    "load_checkpoint",
    "load_dataset",
    "make_folds",
    "mean_gap",
    "overlap",
    "parameter_count",
    "process_epoch",
    "quantile",
    "run_protocol",
    "run_single",
    "save_checkpoint",
    "save_dataset",
    "update_thresholds",
]
