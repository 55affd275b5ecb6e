"""Connected components, convex-hull solidity and checkpoint selection.

Solidity of an object is its pixel count divided by the pixel count of
its convex hull; the average over all objects of a predicted mask tracks
segmentation quality without target labels, so the checkpoint whose
average solidity is closest to the value measured on the source labels
can be deployed.

Hull area convention: the hull polygon is taken over pixel centers and
its area is the number of pixel centers inside or on the polygon, all in
exact integer arithmetic.  Objects smaller than ``min_object_px``
(default 10) are discarded before averaging.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataio import LabelStack
from .exceptions import SelectionError

DEFAULT_MIN_OBJECT_PX = 10

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class RegionStats:
    """Area, convex-hull area and solidity of one connected object."""

    area: int
    hull_area: int

    @property
    def solidity(self) -> float:
        return self.area / self.hull_area


@dataclass
class ObjectSet:
    """Connected foreground objects of one binary mask."""

    objects: list[RegionStats]
    connectivity: int = 8

    def __len__(self) -> int:
        return len(self.objects)


def _hull_vertices(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain on integer (x, y) points, CCW, no collinear vertices."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(chain_pts):
        chain = []
        for p in chain_pts:
            while len(chain) >= 2 and cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1], dtype=np.int64)
    if len(hull) < 3:  # all points collinear
        ends = pts[[0, -1]]
        return np.unique(ends, axis=0)
    return hull


def hull_pixel_area(rows: np.ndarray, cols: np.ndarray) -> int:
    """Number of pixel centers inside or on the convex hull of (rows, cols).

    Exact integer arithmetic throughout; degenerate hulls (single pixels,
    collinear objects) count the lattice points on the segment.
    """
    points = np.stack([np.asarray(cols, np.int64), np.asarray(rows, np.int64)], axis=1)
    hull = _hull_vertices(points)
    if len(hull) == 1:
        return 1
    if len(hull) == 2:
        d = hull[1] - hull[0]
        return math.gcd(int(abs(d[0])), int(abs(d[1]))) + 1

    x_min, y_min = hull.min(axis=0)
    x_max, y_max = hull.max(axis=0)
    gx, gy = np.meshgrid(
        np.arange(x_min, x_max + 1, dtype=np.int64),
        np.arange(y_min, y_max + 1, dtype=np.int64),
        indexing="ij",
    )
    inside = np.ones(gx.shape, dtype=bool)
    for i in range(len(hull)):
        px, py = hull[i]
        qx, qy = hull[(i + 1) % len(hull)]
        # CCW hull: interior is the non-negative side of every edge.
        inside &= (qx - px) * (gy - py) - (qy - py) * (gx - px) >= 0
    return int(inside.sum())


def connected_components(mask: np.ndarray, connectivity: int = 8) -> ObjectSet:
    """Label maximal connected foreground regions and measure each one."""
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {mask.shape}")
    labels, n = ndimage.label(mask != 0, structure=_STRUCTURES[connectivity])
    objects = []
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        local = labels[sl] == sl_idx
        rs, cs = np.nonzero(local)
        rows = rs + sl[0].start
        cols = cs + sl[1].start
        objects.append(RegionStats(area=int(local.sum()),
                                   hull_area=hull_pixel_area(rows, cols)))
    return ObjectSet(objects=objects, connectivity=connectivity)


def average_solidity(
    mask: np.ndarray,
    min_object_px: int = DEFAULT_MIN_OBJECT_PX,
    connectivity: int = 8,
) -> float | None:
    """Mean per-object solidity of a mask or stack of masks.

    Stacks are treated slice-wise (2D components) with objects pooled
    across slices.  Objects below ``min_object_px`` pixels are dropped;
    returns None when no object survives.
    """
    mask = np.asarray(mask)
    slices = mask[None] if mask.ndim == 2 else mask
    solidities = []
    for sl in slices:
        for obj in connected_components(sl, connectivity).objects:
            if obj.area >= min_object_px:
                solidities.append(obj.solidity)
    if not solidities:
        return None
    return float(np.mean(solidities))


def objective_solidity(
    source_labels: LabelStack,
    min_object_px: int = DEFAULT_MIN_OBJECT_PX,
    connectivity: int = 8,
) -> float | None:
    """Average solidity of the source training labels (the selection target)."""
    return average_solidity(source_labels.data, min_object_px, connectivity)


@dataclass
class TraceEntry:
    """One evaluated checkpoint: average solidity plus optional research-mode metrics."""

    epoch: int
    target_solidity: float | None = None
    target_iou: float | None = None
    source_val_iou: float | None = None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "target_solidity": self.target_solidity,
            "target_iou": self.target_iou,
            "source_val_iou": self.source_val_iou,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEntry":
        return cls(
            epoch=int(d["epoch"]),
            target_solidity=d.get("target_solidity"),
            target_iou=d.get("target_iou"),
            source_val_iou=d.get("source_val_iou"),
        )


@dataclass
class SolidityTrace:
    """Per-epoch solidity/IoU record used for model selection."""

    objective_solidity: float | None = None
    entries: list[TraceEntry] = field(default_factory=list)
    min_object_px: int = DEFAULT_MIN_OBJECT_PX

    def append(self, entry: TraceEntry) -> None:
        if self.entries and entry.epoch <= self.entries[-1].epoch:
            raise ValueError("trace entries must have strictly increasing epochs")
        self.entries.append(entry)

    def entry_at(self, epoch: int) -> TraceEntry:
        for entry in self.entries:
            if entry.epoch == epoch:
                return entry
        raise SelectionError(f"no trace entry for epoch {epoch}")

    def to_dict(self) -> dict:
        return {
            "objective_solidity": self.objective_solidity,
            "min_object_px": self.min_object_px,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolidityTrace":
        return cls(
            objective_solidity=d.get("objective_solidity"),
            entries=[TraceEntry.from_dict(e) for e in d.get("entries", [])],
            min_object_px=int(d.get("min_object_px", DEFAULT_MIN_OBJECT_PX)),
        )

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "SolidityTrace":
        return cls.from_dict(json.loads(Path(path).read_text()))


def select_by_solidity(trace: SolidityTrace) -> int:
    """Epoch whose target solidity is closest to the source objective.

    Ties break toward the later epoch (more training).  Entries with an
    undefined solidity are excluded rather than treated as distance 0.
    """
    if trace.objective_solidity is None:
        raise SelectionError("trace has no objective solidity")
    best_epoch = None
    best_dist = None
    for entry in trace.entries:
        if entry.target_solidity is None:
            continue
        dist = abs(entry.target_solidity - trace.objective_solidity)
        if best_dist is None or dist <= best_dist:
            best_epoch, best_dist = entry.epoch, dist
    if best_epoch is None:
        raise SelectionError("no trace entry has a defined target solidity")
    return best_epoch


CRITERIA = ("source_val", "last_epoch", "solidity")


def select_by_criterion(trace: SolidityTrace, criterion: str) -> int:
    """Apply one of the three stopping criteria to a finished trace."""
    if criterion == "solidity":
        return select_by_solidity(trace)
    if not trace.entries:
        raise SelectionError("empty trace")
    if criterion == "last_epoch":
        return trace.entries[-1].epoch
    if criterion == "source_val":
        best_epoch = None
        best_iou = None
        for entry in trace.entries:
            if entry.source_val_iou is None:
                continue
            if best_iou is None or entry.source_val_iou >= best_iou:
                best_epoch, best_iou = entry.epoch, entry.source_val_iou
        if best_epoch is None:
            raise SelectionError("no trace entry has a source validation IoU")
        return best_epoch
    raise SelectionError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
