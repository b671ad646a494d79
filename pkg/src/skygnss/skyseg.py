"""Sky / non-sky segmentation of sky-pointing grayscale images.

Images are ``(height, width)`` uint8 arrays indexed ``img[row, col]``.
Masks carry ``True`` for sky pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyHistogram, EvenKernel

LEVELS = 256


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray
    total: int

    @classmethod
    def from_image(cls, img: np.ndarray) -> "Histogram":
        counts = np.bincount(np.asarray(img, dtype=np.uint8).ravel(), minlength=LEVELS).astype(np.int64)
        return cls(counts, int(counts.sum()))

    @classmethod
    def from_counts(cls, counts) -> "Histogram":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (LEVELS,):
            raise DimensionMismatch(f"histogram needs {LEVELS} bins, got {counts.shape}")
        return cls(counts, int(counts.sum()))

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


@dataclass(frozen=True)
class OtsuResult:
    threshold: int
    between_class_variance: float
    degenerate: bool


@dataclass(frozen=True)
class SkyMask:
    bits: np.ndarray
    threshold: Optional[int] = None
    degenerate: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def to_raster(self) -> np.ndarray:
        return np.where(self.bits, 255, 0).astype(np.uint8)


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionMismatch(f"expected an (H, W, 3) image, got shape {rgb.shape}")
    c = rgb.astype(np.int64)
    # integer weights keep the rounding exact: (299 R + 587 G + 114 B) / 1000
    lum = (299 * c[..., 0] + 587 * c[..., 1] + 114 * c[..., 2] + 500) // 1000
    return lum.astype(np.uint8)


def _box_sum(img: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    padded = np.pad(np.asarray(img, dtype=np.int64), r, mode="edge")
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    integral[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = img.shape
    return integral[k:k + h, k:k + w] - integral[:h, k:k + w] - integral[k:k + h, :w] + integral[:h, :w]


def mean_blur(img: np.ndarray, kernel: int = 5) -> np.ndarray:
    """Box filter with border replication, rounded half-up to uint8."""
    if kernel < 1 or kernel % 2 == 0:
        raise EvenKernel(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return np.asarray(img, dtype=np.uint8).copy()
    area = kernel * kernel
    s = _box_sum(img, kernel)
    return ((s + area // 2) // area).astype(np.uint8)


@dataclass(frozen=True)
class OtsuSweep:
    """Per-threshold class statistics for ``t = 1..255``.

    Entries where one class is empty are NaN.
    """

    t: np.ndarray
    omega0: np.ndarray
    omega1: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    mu_total: float
    var0: np.ndarray
    var1: np.ndarray
    within: np.ndarray
    between: np.ndarray
    total_variance: float


def otsu_sweep(h: Histogram) -> OtsuSweep:
    if h.total <= 0:
        raise EmptyHistogram("histogram has no pixels")
    p = h.probabilities
    levels = np.arange(LEVELS, dtype=float)
    t = np.arange(1, LEVELS)
    cp = np.cumsum(p)
    cm = np.cumsum(levels * p)
    cm2 = np.cumsum(levels * levels * p)
    mu_t = float(cm[-1])
    omega0 = cp[t - 1]
    omega1 = 1.0 - omega0
    m0, m1 = cm[t - 1], mu_t - cm[t - 1]
    s0, s1 = cm2[t - 1], cm2[-1] - cm2[t - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        valid = (h.counts.cumsum()[t - 1] > 0) & (h.counts.cumsum()[t - 1] < h.total)
        mu0 = np.where(valid, m0 / omega0, np.nan)
        mu1 = np.where(valid, m1 / omega1, np.nan)
        var0 = np.where(valid, s0 / omega0 - mu0 * mu0, np.nan)
        var1 = np.where(valid, s1 / omega1 - mu1 * mu1, np.nan)
    within = omega0 * var0 + omega1 * var1
    between = omega0 * omega1 * (mu0 - mu1) ** 2
    total_var = float(cm2[-1] - mu_t * mu_t)
    return OtsuSweep(t, omega0, omega1, mu0, mu1, mu_t, var0, var1, within, between, total_var)


def otsu(h: Histogram) -> OtsuResult:
    """Global threshold maximising the between-class variance.

    Classes are ``{i < t}`` and ``{i >= t}``.  The argmax is taken in exact
    integer arithmetic so ties resolve to the smallest ``t`` deterministically.
    """
    if h.total <= 0:
        raise EmptyHistogram("histogram has no pixels")
    counts = [int(c) for c in h.counts]
    total = h.total
    weighted_total = sum(i * c for i, c in enumerate(counts))
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(1, LEVELS):
        n0 += counts[t - 1]
        s0 += (t - 1) * counts[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        # N^2 * sigma_b^2 = (s0 N - n0 S)^2 / (n0 n1)
        num = (s0 * total - n0 * weighted_total) ** 2
        den = n0 * n1
        if best_t == 0 or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_t == 0:
        return OtsuResult(threshold=1, between_class_variance=0.0, degenerate=True)
    return OtsuResult(best_t, best_num / best_den / (total * total), False)


def apply_threshold(img: np.ndarray, t: int) -> SkyMask:
    if not 0 <= t <= 255:
        raise ValueError(f"threshold {t} outside [0, 255]")
    return SkyMask(np.asarray(img) >= t, threshold=int(t))


def local_threshold(img: np.ndarray, window: int = 31, offset: float = 5) -> SkyMask:
    """Adaptive baseline: sky where a pixel is at least its window mean minus ``offset``."""
    if window < 3 or window % 2 == 0:
        raise EvenKernel(f"window must be odd and >= 3, got {window}")
    mean = _box_sum(img, window) / float(window * window)
    return SkyMask(np.asarray(img, dtype=float) >= mean - offset)


def segment_sky(img: np.ndarray, blur_kernel: int = 5, method: str = "otsu",
                window: int = 31, offset: float = 5) -> tuple[SkyMask, Optional[OtsuResult]]:
    """Blur then threshold; returns the mask and the Otsu result when used."""
    blurred = mean_blur(img, blur_kernel)
    if method == "otsu":
        res = otsu(Histogram.from_image(blurred))
        mask = apply_threshold(blurred, res.threshold)
        return SkyMask(mask.bits, res.threshold, res.degenerate), res
    if method == "local":
        return local_threshold(blurred, window, offset), None
    raise ValueError(f"unknown segmenter {method!r}")


def iou(a: SkyMask, b: SkyMask) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.bits & b.bits) / union


def boundary(mask: SkyMask) -> np.ndarray:
    """Pixels whose 4-neighbourhood contains a different label."""
    bits = mask.bits
    edge = np.zeros_like(bits)
    edge[1:, :] |= bits[1:, :] != bits[:-1, :]
    edge[:-1, :] |= bits[:-1, :] != bits[1:, :]
    edge[:, 1:] |= bits[:, 1:] != bits[:, :-1]
    edge[:, :-1] |= bits[:, :-1] != bits[:, 1:]
    return edge
