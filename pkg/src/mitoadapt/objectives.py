"""Training losses and the foreground-IoU evaluation metric.

The multi-task loss blends a reconstruction term and a segmentation
term::

    loss = alpha * MSE(reconstruction, image) + (1 - alpha) * BCE(segmentation, mask)

Samples without a mask contribute zero to the BCE term, which is how
unlabeled target images take part in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import ShapeError

BCE_EPS = 1e-7


@dataclass(frozen=True)
class CombinedLossConfig:
    """Weight of the reconstruction term; label availability is signalled
    per sample by passing ``label=None``."""

    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def bce_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Binary cross-entropy on probabilities, clamped away from log(0)."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def combined_loss(
    seg_pred: torch.Tensor,
    rec_pred: torch.Tensor,
    label: torch.Tensor | None,
    image: torch.Tensor,
    cfg: CombinedLossConfig,
) -> torch.Tensor:
    """alpha-weighted sum of reconstruction MSE and segmentation BCE.

    With ``label=None`` the BCE term is zero and the result is exactly
    ``alpha * MSE``.  At alpha in {0, 1} the value equals the standalone
    BCE / MSE to machine precision.
    """
    if rec_pred.shape != image.shape:
        raise ShapeError(f"shape mismatch {tuple(rec_pred.shape)} vs {tuple(image.shape)}")
    rec_term = mse_loss(rec_pred, image)
    if label is None:
        return cfg.alpha * rec_term
    return cfg.alpha * rec_term + (1.0 - cfg.alpha) * bce_loss(seg_pred, label)


@dataclass(frozen=True)
class MetricReport:
    """Pixel counts and foreground IoU of one prediction/ground-truth pair."""

    tp: int
    fp: int
    fn: int
    iou_f: float
    threshold: float


def iou_f(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> MetricReport:
    """Foreground intersection over union, TP / (TP + FP + FN).

    ``pred`` is binarized at ``threshold``; counts are pooled over all
    pixels of the input (slice stacks included).  When neither mask has
    any foreground the score is defined as 1 (nothing missed, nothing
    wrong).
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred >= threshold
    g = gt != 0
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    denom = tp + fp + fn
    score = 1.0 if denom == 0 else tp / denom
    return MetricReport(tp=tp, fp=fp, fn=fn, iou_f=score, threshold=threshold)
