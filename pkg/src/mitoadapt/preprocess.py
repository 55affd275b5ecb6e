"""Histogram modeling, padding-aware histogram matching, CLAHE and the
low-resolution degradation used by the self-supervised pretext task.

Zero-padding around tissue puts an artificial spike at intensity zero.
Before matching, the zero bin of each per-image histogram can be
replaced by a linear-regression extrapolation from the first bins, so
the intensity remap is driven by tissue statistics only.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .dataio import ImageStack

N_BINS = 256
DEFAULT_REGRESSION_WINDOW = 10


@dataclass
class HistogramModel:
    """A 256-bin intensity histogram, optionally with a regressed zero bin."""

    counts: np.ndarray
    zero_corrected: bool = False
    regression_window: int = DEFAULT_REGRESSION_WINDOW

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.shape != (N_BINS,):
            raise ValueError(f"expected {N_BINS} bins, got shape {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("histogram counts must be non-negative")


def intensity_levels(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities onto their 8-bit levels."""
    return np.round(np.asarray(img, dtype=np.float64) * (N_BINS - 1)).astype(np.int64)


def slice_histogram(img: np.ndarray) -> np.ndarray:
    """Raw 256-bin count histogram of one slice."""
    return np.bincount(intensity_levels(img).ravel(), minlength=N_BINS).astype(np.float64)


def predict_zero_bin(counts: np.ndarray, window: int = DEFAULT_REGRESSION_WINDOW) -> float:
    """Extrapolate the zero-bin count from a linear fit over bins 1..window.

    Returns 0 when the window holds no counts (nothing to regress on) or
    when the fit predicts a negative count.
    """
    if window < 2:
        raise ValueError("regression window must span at least 2 bins")
    ys = np.asarray(counts, dtype=np.float64)[1:window + 1]
    if not ys.any():
        return 0.0
    xs = np.arange(1, window + 1, dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    return max(float(intercept), 0.0)


def correct_zero_bin(counts: np.ndarray, window: int = DEFAULT_REGRESSION_WINDOW) -> np.ndarray:
    """Replace a nonzero zero-bin by its regression prediction.

    Histograms without zero pixels are returned unchanged, so the
    correction is an identity on padding-free images.
    """
    corrected = np.asarray(counts, dtype=np.float64).copy()
    if corrected[0] > 0:
        corrected[0] = predict_zero_bin(corrected, window)
    return corrected


def mean_target_histogram(
    stacks: list[ImageStack],
    correct_zeros: bool = True,
    window: int = DEFAULT_REGRESSION_WINDOW,
) -> HistogramModel:
    """Average the per-image histograms of one or more stacks.

    With ``correct_zeros`` the zero bin of every per-image histogram is
    regressed away before averaging, mirroring the treatment applied to
    the source side during matching.
    """
    if not stacks:
        raise ValueError("at least one stack is required")
    per_image = []
    for stack in stacks:
        for i in range(stack.n_slices):
            counts = slice_histogram(stack.data[i])
            if correct_zeros:
                counts = correct_zero_bin(counts, window)
            per_image.append(counts)
    mean = np.mean(per_image, axis=0)
    return HistogramModel(mean, zero_corrected=correct_zeros, regression_window=window)


def _midpoint_cdf(counts: np.ndarray) -> np.ndarray:
    """CDF evaluated at the middle of each bin's own mass.

    The midpoint convention makes matching symmetric: a single-level
    image sits at quantile 0.5 and therefore maps to the target median,
    and matching a histogram to itself is the identity.
    """
    p = counts / counts.sum()
    return np.cumsum(p) - p / 2.0


def build_matching_lut(src_counts: np.ndarray, target_counts: np.ndarray) -> np.ndarray:
    """Monotone 256-entry lookup table matching one histogram to another."""
    src_counts = np.asarray(src_counts, dtype=np.float64)
    target_counts = np.asarray(target_counts, dtype=np.float64)
    if src_counts.sum() <= 0 or target_counts.sum() <= 0:
        raise ValueError("histograms must contain mass")
    src_mid = _midpoint_cdf(src_counts)
    occupied = np.flatnonzero(target_counts > 0)
    target_mid = _midpoint_cdf(target_counts)[occupied]

    idx = np.searchsorted(target_mid, src_mid)
    left = np.clip(idx - 1, 0, occupied.size - 1)
    right = np.clip(idx, 0, occupied.size - 1)
    use_left = np.abs(target_mid[left] - src_mid) <= np.abs(target_mid[right] - src_mid)
    return occupied[np.where(use_left, left, right)].astype(np.uint8)


def histogram_match(
    src: ImageStack,
    target_hist: HistogramModel,
    correct_zeros: bool = True,
) -> ImageStack:
    """Remap every slice so its histogram matches the target model.

    Each slice gets its own monotone non-decreasing intensity lookup
    table built by CDF matching.  With ``correct_zeros`` the slice's
    zero bin is regressed away before the table is built, so padding
    spikes do not skew the tissue remap.
    """
    window = target_hist.regression_window
    out = np.empty_like(src.data)
    for i in range(src.n_slices):
        counts = slice_histogram(src.data[i])
        if correct_zeros:
            counts = correct_zero_bin(counts, window)
        if counts.sum() == 0:
            # Nothing but regressed-away padding: no tissue to remap.
            out[i] = src.data[i]
            continue
        lut = build_matching_lut(counts, target_hist.counts)
        out[i] = lut[intensity_levels(src.data[i])].astype(np.float32) / (N_BINS - 1)
    return ImageStack(out, name=src.name, padding_mask=src.padding_mask)


def match_stack(
    src: ImageStack,
    reference: ImageStack,
    correct_zeros: bool = True,
    window: int = DEFAULT_REGRESSION_WINDOW,
) -> ImageStack:
    """Match a stack to the mean histogram of a reference stack."""
    target = mean_target_histogram([reference], correct_zeros=correct_zeros, window=window)
    return histogram_match(src, target, correct_zeros=correct_zeros)


def clahe(img: ImageStack, clip_limit: float = 2.0, tile_grid=(8, 8)) -> ImageStack:
    """Contrast-limited adaptive histogram equalization, slice by slice."""
    if isinstance(tile_grid, int):
        tile_grid = (tile_grid, tile_grid)
    op = cv2.createCLAHE(clipLimit=float(clip_limit), tileGridSize=tuple(tile_grid))
    out = np.empty_like(img.data)
    for i in range(img.n_slices):
        levels = intensity_levels(img.data[i]).astype(np.uint8)
        out[i] = op.apply(levels).astype(np.float32) / (N_BINS - 1)
    return ImageStack(out, name=img.name, padding_mask=img.padding_mask)


@dataclass(frozen=True)
class DegradationConfig:
    """Synthetic resolution-degradation recipe for the pretext task."""

    noise_mean: float = 0.0
    noise_sigma: float = 0.1
    scale_factor: int = 2
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (isinstance(self.scale_factor, int) and self.scale_factor >= 1):
            raise ValueError("scale_factor must be an integer >= 1")
        if self.interpolation != "bilinear":
            raise ValueError(f"unsupported interpolation {self.interpolation!r}")


def _linear_axis(n_out: int, n_in: int):
    # Half-pixel sample positions with clamped borders.
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(x).astype(np.int64)
    t = x - lo
    return np.clip(lo, 0, n_in - 1), np.clip(lo + 1, 0, n_in - 1), t


def resize_bilinear(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resampling in float64."""
    a = np.asarray(a, dtype=np.float64)
    r0, r1, tr = _linear_axis(out_h, a.shape[0])
    c0, c1, tc = _linear_axis(out_w, a.shape[1])
    rows = a[r0] * (1.0 - tr)[:, None] + a[r1] * tr[:, None]
    return rows[:, c0] * (1.0 - tc) + rows[:, c1] * tc


def degrade_for_ssl(patch: np.ndarray, cfg: DegradationConfig, rng_seed) -> np.ndarray:
    """Noise + bilinear down/upsampling, producing the pretext-task input.

    Gaussian noise (sigma as a fraction of the dynamic range) is applied
    first and clamped to [0, 1]; the patch is then bilinearly
    downsampled by ``scale_factor`` and upsampled back to its original
    shape.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2:
        raise ValueError(f"expected a 2D patch, got shape {patch.shape}")
    h, w = patch.shape
    s = cfg.scale_factor
    if h % s != 0 or w % s != 0:
        raise ValueError(f"patch shape {patch.shape} not divisible by scale factor {s}")
    out = patch
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        out = out + rng.normal(cfg.noise_mean, cfg.noise_sigma, size=patch.shape)
    out = np.clip(out, 0.0, 1.0)
    if s > 1:
        out = resize_bilinear(resize_bilinear(out, h // s, w // s), h, w)
        out = np.clip(out, 0.0, 1.0)
    return out
