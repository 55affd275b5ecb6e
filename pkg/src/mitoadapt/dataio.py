"""Loading, validation, partitioning and patch sampling of EM slice stacks.

A dataset on disk is a directory of lexicographically ordered 8-bit
grayscale slice files::

    <root>/x/slice_0000.png     image slices
    <root>/y/slice_0000.png     optional binary masks (0 / 255)
    <root>/dataset.toml         optional manifest (modality, resolution, partition)

In memory, intensities live in [0, 1] (8-bit values divided by 255) and
labels are {0, 1}.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .exceptions import GeometryError, LabelError, SamplingError, SplitError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_SLICE_EXTENSIONS = (".png", ".tif", ".tiff")


@dataclass
class ImageStack:
    """Ordered 2D grayscale slices with intensities in [0, 1].

    ``data`` has shape ``(n_slices, height, width)``.  ``padding_mask``,
    when present, marks non-tissue padding pixels (True = padding) and
    must match ``data`` in shape.
    """

    data: np.ndarray
    name: str = "stack"
    padding_mask: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise GeometryError(f"expected (n, h, w) array, got shape {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        if self.padding_mask is not None:
            self.padding_mask = np.asarray(self.padding_mask, dtype=bool)
            if self.padding_mask.shape != self.data.shape:
                raise GeometryError(
                    f"padding mask shape {self.padding_mask.shape} does not match "
                    f"stack shape {self.data.shape}"
                )

    @classmethod
    def from_slices(cls, slices, name="stack", padding_mask=None):
        slices = [np.asarray(s) for s in slices]
        if not slices:
            raise GeometryError("empty slice list")
        shape = slices[0].shape
        for i, s in enumerate(slices):
            if s.ndim != 2 or s.shape != shape:
                raise GeometryError(f"slice {i} has shape {s.shape}, expected {shape}")
        return cls(np.stack(slices), name=name, padding_mask=padding_mask)

    @property
    def n_slices(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class LabelStack:
    """Binary masks (0 = background, 1 = mitochondrion) paired with an ImageStack."""

    data: np.ndarray
    name: str = "labels"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise GeometryError(f"expected (n, h, w) array, got shape {arr.shape}")
        values = np.unique(arr)
        if not np.isin(values, (0, 1)).all():
            raise LabelError(f"labels must be binary, found values {values[:8]}")
        self.data = arr.astype(np.uint8)

    @property
    def n_slices(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class AnnotatedDataset:
    """Image stack plus optional labels, partition tag and provenance metadata."""

    images: ImageStack
    labels: LabelStack | None = None
    partition: str = "train"
    modality: str = "unknown"
    pixel_resolution: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.partition not in ("train", "val", "test"):
            raise ValueError(f"unknown partition {self.partition!r}")
        if self.labels is not None and self.labels.data.shape != self.images.data.shape:
            raise GeometryError(
                f"label shape {self.labels.data.shape} does not match "
                f"image shape {self.images.data.shape}"
            )

    @property
    def name(self) -> str:
        return self.images.name


@dataclass(frozen=True)
class PatchSampler:
    """Uniform random square-patch sampling configuration.

    ``count`` patches are drawn per run; the last ``ceil(val_fraction *
    count)`` of them form the validation split.  Identical seeds yield
    identical patches.
    """

    patch_size: int = 256
    count: int = 1000
    val_fraction: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1:
            raise SamplingError("patch_size must be positive")
        if self.count < 1:
            raise SamplingError("count must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise SamplingError("val_fraction must lie in [0, 1)")


@dataclass
class PatchSet:
    """Patches extracted from a dataset, with their source coordinates."""

    images: np.ndarray                 # (n, p, p) float32
    labels: np.ndarray | None          # (n, p, p) uint8 or None
    coords: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_slice(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=np.uint8)
    except OSError as exc:
        raise OSError(f"cannot read slice file {path}: {exc}") from exc


def _slice_files(directory: Path) -> list[Path]:
    files = sorted(
        p for p in directory.iterdir()
        if p.suffix.lower() in _SLICE_EXTENSIONS and p.is_file()
    )
    if not files:
        raise FileNotFoundError(f"no slice files found in {directory}")
    return files


def load_dataset(root, layout: dict | None = None) -> AnnotatedDataset:
    """Load a dataset directory into a validated :class:`AnnotatedDataset`.

    8-bit intensities are normalized to [0, 1]; label values are
    thresholded at >127 so {0, 255} maps to {0, 1} and antialiased mask
    borders stay binary.
    """
    root = Path(root)
    layout = dict(layout or {})
    images_dir = root / layout.get("images_dir", "x")
    labels_dir = root / layout.get("labels_dir", "y")
    manifest_path = root / layout.get("manifest", "dataset.toml")

    if not images_dir.is_dir():
        raise FileNotFoundError(f"image directory {images_dir} does not exist")

    raw = [_read_slice(p) for p in _slice_files(images_dir)]
    shape = raw[0].shape
    for i, s in enumerate(raw):
        if s.shape != shape:
            raise GeometryError(f"slice {i} has shape {s.shape}, expected {shape}")
    images = ImageStack(np.stack(raw).astype(np.float32) / 255.0, name=root.name)

    labels = None
    if labels_dir.is_dir():
        raw_labels = [_read_slice(p) for p in _slice_files(labels_dir)]
        if len(raw_labels) != len(raw):
            raise GeometryError(
                f"{len(raw_labels)} label slices for {len(raw)} image slices"
            )
        for i, s in enumerate(raw_labels):
            if s.shape != shape:
                raise GeometryError(f"label slice {i} has shape {s.shape}, expected {shape}")
        labels = LabelStack((np.stack(raw_labels) > 127).astype(np.uint8), name=root.name)

    meta = {}
    if manifest_path.is_file():
        with open(manifest_path, "rb") as fh:
            meta = tomllib.load(fh).get("dataset", {})
    return AnnotatedDataset(
        images=images,
        labels=labels,
        partition=meta.get("partition", layout.get("partition", "train")),
        modality=meta.get("modality", "unknown"),
        pixel_resolution=tuple(meta.get("resolution", (1.0, 1.0, 1.0))),
    )


def save_dataset(ds: AnnotatedDataset, root) -> Path:
    """Write a dataset back to the on-disk layout (inverse of :func:`load_dataset`)."""
    root = Path(root)
    (root / "x").mkdir(parents=True, exist_ok=True)
    quantized = np.round(np.asarray(ds.images.data, dtype=np.float64) * 255.0).astype(np.uint8)
    for i in range(ds.images.n_slices):
        Image.fromarray(quantized[i], mode="L").save(root / "x" / f"slice_{i:04d}.png")
    if ds.labels is not None:
        (root / "y").mkdir(parents=True, exist_ok=True)
        for i in range(ds.labels.n_slices):
            Image.fromarray(ds.labels.data[i] * 255, mode="L").save(
                root / "y" / f"slice_{i:04d}.png"
            )
    resolution = ", ".join(repr(float(v)) for v in ds.pixel_resolution)
    manifest = (
        "[dataset]\n"
        f'modality = "{ds.modality}"\n'
        f'partition = "{ds.partition}"\n'
        f"resolution = [{resolution}]\n"
    )
    (root / "dataset.toml").write_text(manifest)
    return root


def split_vnc_style(ds: AnnotatedDataset, split_col: int | None = None):
    """Split a volume along the x axis into equal-width train/test halves.

    Requires an even width unless an explicit ``split_col`` is given.
    Labels are split identically, so the foreground pixel count is
    conserved across the two halves.
    """
    width = ds.images.width
    if split_col is None:
        if width % 2 != 0:
            raise SplitError(f"width {width} is odd and no split column was given")
        split_col = width // 2
    if not 0 < split_col < width:
        raise SplitError(f"split column {split_col} outside (0, {width})")

    def half(sl) -> AnnotatedDataset:
        imgs = ImageStack(
            ds.images.data[:, :, sl].copy(),
            name=ds.images.name,
            padding_mask=None if ds.images.padding_mask is None
            else ds.images.padding_mask[:, :, sl].copy(),
        )
        labels = None
        if ds.labels is not None:
            labels = LabelStack(ds.labels.data[:, :, sl].copy(), name=ds.labels.name)
        return replace(ds, images=imgs, labels=labels)

    left = half(slice(None, split_col))
    left.partition = "train"
    left.images.name = f"{ds.images.name}-train"
    right = half(slice(split_col, None))
    right.partition = "test"
    right.images.name = f"{ds.images.name}-test"
    return left, right


def sample_patches(ds: AnnotatedDataset, sampler: PatchSampler):
    """Draw ``sampler.count`` random square patches from a dataset.

    Returns ``(train, val)`` :class:`PatchSet` objects; the validation
    split takes the last ``ceil(val_fraction * count)`` patches.  Pure
    function of ``(ds, sampler)``.
    """
    coords = sample_patch_coords(ds.images, sampler)
    images = extract_patches(ds.images.data, coords, sampler.patch_size)
    labels = None
    if ds.labels is not None:
        labels = extract_patches(ds.labels.data, coords, sampler.patch_size)
    n_val = math.ceil(sampler.val_fraction * sampler.count)
    n_train = sampler.count - n_val

    def subset(lo, hi):
        return PatchSet(
            images=images[lo:hi],
            labels=None if labels is None else labels[lo:hi],
            coords=coords[lo:hi],
        )

    return subset(0, n_train), subset(n_train, sampler.count)


def sample_patch_coords(stack: ImageStack, sampler: PatchSampler) -> np.ndarray:
    """Deterministic (slice, row, col) top-left corners for random patches."""
    p = sampler.patch_size
    if p > min(stack.height, stack.width):
        raise SamplingError(
            f"patch size {p} exceeds stack extent {stack.height}x{stack.width}"
        )
    rng = np.random.default_rng(sampler.rng_seed)
    slices = rng.integers(0, stack.n_slices, size=sampler.count)
    rows = rng.integers(0, stack.height - p + 1, size=sampler.count)
    cols = rng.integers(0, stack.width - p + 1, size=sampler.count)
    return np.stack([slices, rows, cols], axis=1).astype(np.int64)


def extract_patches(data: np.ndarray, coords: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut patches out of a (n, h, w) array at precomputed coordinates."""
    out = np.empty((len(coords), patch_size, patch_size), dtype=data.dtype)
    for i, (s, r, c) in enumerate(coords):
        out[i] = data[s, r:r + patch_size, c:c + patch_size]
    return out


def detect_padding(img: ImageStack) -> np.ndarray:
    """Mark border-connected zero-intensity regions as padding.

    Interior zero-valued regions that do not touch the slice border are
    tissue, not padding, and are left unmarked.  Never marks a pixel
    with intensity > 0.
    """
    mask = np.zeros(img.data.shape, dtype=bool)
    structure = ndimage.generate_binary_structure(2, 1)  # 4-connectivity
    for i in range(img.n_slices):
        zeros = img.data[i] == 0.0
        if not zeros.any():
            continue
        labels, n = ndimage.label(zeros, structure=structure)
        border = np.unique(np.concatenate([
            labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1],
        ]))
        border = border[border != 0]
        if border.size:
            mask[i] = np.isin(labels, border)
    return mask


def make_blob_fixture(
    n_slices: int,
    height: int,
    width: int,
    n_blobs: int,
    rng_seed: int,
    *,
    fg_level: float = 0.28,
    bg_level: float = 0.62,
    noise_sigma: float = 0.03,
    texture_period: float = 24.0,
    texture_amplitude: float = 0.05,
    radius_range: tuple[float, float] = (5.0, 9.0),
    name: str = "blobs",
    partition: str = "train",
) -> AnnotatedDataset:
    """Synthesize a desk-scale EM-like dataset of elliptical organelles.

    Each slice holds ``n_blobs`` randomly placed dark ellipses on a
    textured background, with exact binary masks.  Appearance knobs
    (``fg_level``, ``bg_level``, noise, texture) let callers build
    domain pairs that differ only by an intensity remap and texture.
    Intensities are quantized to the 8-bit grid so the dataset
    round-trips bit-exactly through save/load.  Deterministic per seed.
    """
    r_min, r_max = radius_range
    if 2 * r_max > min(height, width):
        raise SamplingError("blob radius does not fit in the image")
    rng = np.random.default_rng(rng_seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    images = np.empty((n_slices, height, width), dtype=np.float64)
    labels = np.zeros((n_slices, height, width), dtype=np.uint8)
    for s in range(n_slices):
        phase_y, phase_x = rng.uniform(0, 2 * np.pi, size=2)
        texture = texture_amplitude * (
            np.sin(2 * np.pi * yy / texture_period + phase_y)
            * np.cos(2 * np.pi * xx / texture_period + phase_x)
        )
        img = bg_level + texture
        for _ in range(n_blobs):
            a = rng.uniform(r_min, r_max)
            b = rng.uniform(r_min, r_max)
            theta = rng.uniform(0, np.pi)
            cy = rng.uniform(r_max, height - r_max)
            cx = rng.uniform(r_max, width - r_max)
            dy, dx = yy - cy, xx - cx
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
            shade = fg_level + rng.uniform(-0.02, 0.02)
            img[inside] = shade + 0.5 * texture[inside]
            labels[s][inside] = 1
        if noise_sigma > 0:
            img = img + rng.normal(0.0, noise_sigma, size=img.shape)
        images[s] = img

    images = np.round(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
    return AnnotatedDataset(
        images=ImageStack(images.astype(np.float32), name=name),
        labels=LabelStack(labels, name=name),
        partition=partition,
        modality="synthetic",
    )
