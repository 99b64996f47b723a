"""Image quality scores: SSIM, PSNR, worst-patch search and sequence reports."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_image_pair, check_sequences
from .types import QualityReport

__all__ = [
    "Heatmap",
    "gaussian_window",
    "ssim_map",
    "ssim",
    "psnr",
    "patch_min",
    "sequence_report",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
PATCH_WINDOW = 99
PATCH_STRIDE = 33


@dataclass(frozen=True)
class Heatmap:
    metric: str
    data: np.ndarray
    window: int
    stride: int


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    half = len(taps) // 2
    out = ndimage.correlate1d(img, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    return out[half: img.shape[0] - half, half: img.shape[1] - half]


def ssim_map(a, b, dynamic_range: float) -> np.ndarray:
    """Local SSIM at every position where the 11x11 window fits."""
    a, b = check_image_pair(a, b)
    if not dynamic_range > 0:
        raise ValueError("dynamic_range must be positive")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    taps = gaussian_window()
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, dynamic_range: float) -> float:
    """Mean single-scale SSIM (Gaussian 11x11, sigma 1.5, K1=0.01, K2=0.03)."""
    return float(ssim_map(a, b, dynamic_range).mean())


def psnr(a, b, dynamic_range: float) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = check_image_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(dynamic_range**2 / mse))


def _box_sums(values: np.ndarray, size: int, stride: int, n_rows: int, n_cols: int) -> np.ndarray:
    sat = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    sat[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    r = np.arange(n_rows) * stride
    c = np.arange(n_cols) * stride
    return (
        sat[np.ix_(r + size, c + size)] - sat[np.ix_(r, c + size)]
        - sat[np.ix_(r + size, c)] + sat[np.ix_(r, c)]
    )


def patch_min(a, b, metric: str = "ssim", window: int = PATCH_WINDOW, stride: int = PATCH_STRIDE,
              dynamic_range: float = 255.0):
    """Score every ``window``-sized patch at ``stride``; return the worst.

    Returns ``(min_score, (row, col), heatmap)`` where ``(row, col)`` is the
    top-left corner of the worst patch.  Patch SSIM equals :func:`ssim` on
    the cropped patch (the local map is window-local, so it is computed
    once and averaged per patch).
    """
    a, b = check_image_pair(a, b)
    if metric not in ("ssim", "psnr"):
        raise ValueError(f"metric must be 'ssim' or 'psnr', got {metric!r}")
    if window > a.shape[0] or window > a.shape[1]:
        raise ValueError(f"image {a.shape[1]}x{a.shape[0]} is smaller than the {window}x{window} patch window")
    if stride <= 0:
        raise ValueError("stride must be positive")
    n_rows = (a.shape[0] - window) // stride + 1
    n_cols = (a.shape[1] - window) // stride + 1
    if metric == "ssim":
        local = ssim_map(a, b, dynamic_range)
        inner = window - SSIM_WINDOW + 1
        if inner <= 0:
            raise ValueError(f"patch window must be at least {SSIM_WINDOW} for SSIM")
        scores = _box_sums(local, inner, stride, n_rows, n_cols) / float(inner * inner)
    else:
        sse = _box_sums((a - b) ** 2, window, stride, n_rows, n_cols)
        mse = np.maximum(sse, 0.0) / float(window * window)
        with np.errstate(divide="ignore"):
            scores = np.where(mse > 0, 10.0 * np.log10(dynamic_range**2 / np.where(mse > 0, mse, 1.0)), np.inf)
        # summed-area rounding can leave tiny residues where patches are equal
        exact_zero = _box_sums((a != b).astype(np.float64), window, stride, n_rows, n_cols) < 0.5
        scores[exact_zero] = np.inf
    flat = int(np.argmin(scores))
    i, j = divmod(flat, n_cols)
    return float(scores[i, j]), (i * stride, j * stride), Heatmap(metric, scores, window, stride)


def _std(values: np.ndarray) -> float:
    if np.all(values == values[0]):
        return 0.0
    if np.any(np.isinf(values)):
        return float("inf")
    return float(values.std())


def sequence_report(seq_a, seq_b, dynamic_range: float = 255.0, window: int = PATCH_WINDOW,
                    stride: int = PATCH_STRIDE, heatmaps=None) -> QualityReport:
    """Per-frame SSIM/PSNR plus mean/min/std and the worst patch overall.

    PSNR aggregates follow IEEE arithmetic for infinite (identical-frame)
    entries; the standard deviation is 0 when all frames score the same.
    Pass a list as ``heatmaps`` to collect one ``(ssim, psnr)`` heatmap pair
    per frame.
    """
    check_sequences(seq_a, seq_b)
    if not len(seq_a):
        raise ValueError("empty sequences")
    ssims, psnrs, patch_s, patch_p = [], [], [], []
    for a, b in zip(seq_a, seq_b):
        a, b = check_image_pair(a, b)
        ssims.append(ssim(a, b, dynamic_range))
        psnrs.append(psnr(a, b, dynamic_range))
        ws, _, hs = patch_min(a, b, "ssim", window, stride, dynamic_range)
        wp, _, hp = patch_min(a, b, "psnr", window, stride, dynamic_range)
        patch_s.append(ws)
        patch_p.append(wp)
        if heatmaps is not None:
            heatmaps.append((hs, hp))
    s, p = np.array(ssims), np.array(psnrs)
    return QualityReport(
        mean_ssim=float(s.mean()),
        min_ssim=float(s.min()),
        std_ssim=_std(s),
        mean_psnr=float(p.mean()),
        min_psnr=float(p.min()),
        std_psnr=_std(p),
        min_patch_ssim=float(min(patch_s)),
        min_patch_psnr=float(min(patch_p)),
        per_frame=tuple((i, float(x), float(y)) for i, (x, y) in enumerate(zip(ssims, psnrs))),
    )
