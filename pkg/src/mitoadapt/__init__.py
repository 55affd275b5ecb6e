"""Unsupervised domain adaptation for mitochondria segmentation on EM volumes.

The package covers three adaptation strategies around a shared attention
U-Net backbone plus a morphology-based stopping criterion:

* padding-aware histogram matching between domains (``preprocess``),
* self-supervised super-resolution pretraining with frozen-encoder
  fine-tuning (``train.train_ssl``),
* a multi-task attention Y-Net trained on labeled source and unlabeled
  target images (``nets``, ``train.train_ynet``),
* average-solidity checkpoint selection without target labels
  (``morpho``),
* a cross-dataset experiment grid with mean/std reporting (``harness``).
"""

from .dataio import (
    AnnotatedDataset,
    ImageStack,
    LabelStack,
    PatchSampler,
    PatchSet,
    detect_padding,
    load_dataset,
    make_blob_fixture,
    sample_patches,
    save_dataset,
    split_vnc_style,
)
from .harness import DatasetRegistry, ExperimentConfig, ResultTable, run_grid
from .morpho import (
    SolidityTrace,
    TraceEntry,
    average_solidity,
    connected_components,
    objective_solidity,
    select_by_criterion,
    select_by_solidity,
)
from .nets import AttentionGate, NetworkSpec, SegmentationNetwork, build_network, set_trainable
from .objectives import CombinedLossConfig, MetricReport, combined_loss, iou_f
from .preprocess import (
    DegradationConfig,
    HistogramModel,
    clahe,
    degrade_for_ssl,
    histogram_match,
    match_stack,
    mean_target_histogram,
)
from .train import (
    PhaseConfig,
    TrainPlan,
    baseline_plan,
    lr_one_cycle,
    lr_reduce_on_plateau,
    ssl_plan,
    train_baseline,
    train_ssl,
    train_ynet,
    ynet_plan,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedDataset",
    "AttentionGate",
    "CombinedLossConfig",
    "DatasetRegistry",
    "DegradationConfig",
    "ExperimentConfig",
    "HistogramModel",
    "ImageStack",
    "LabelStack",
    "MetricReport",
    "NetworkSpec",
    "PatchSampler",
    "PatchSet",
    "PhaseConfig",
    "ResultTable",
    "SegmentationNetwork",
    "SolidityTrace",
    "TraceEntry",
    "TrainPlan",
    "average_solidity",
    "baseline_plan",
    "build_network",
    "clahe",
    "combined_loss",
    "connected_components",
    "degrade_for_ssl",
    "detect_padding",
    "histogram_match",
    "iou_f",
    "load_dataset",
    "lr_one_cycle",
    "lr_reduce_on_plateau",
    "make_blob_fixture",
    "match_stack",
    "mean_target_histogram",
    "objective_solidity",
    "run_grid",
    "sample_patches",
    "save_dataset",
    "select_by_criterion",
    "select_by_solidity",
    "set_trainable",
    "split_vnc_style",
    "ssl_plan",
    "train_baseline",
    "train_ssl",
    "train_ynet",
    "ynet_plan",
]
