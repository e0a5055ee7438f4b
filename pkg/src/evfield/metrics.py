"""Image metrics with affine intensity alignment.

Event supervision fixes intensity only up to a gain in the shifted
domain, so renders are first least-squares fitted (gain + offset) to the
ground truth, clamped to [0, 1], and only then scored.  PSNR uses a unit
dynamic range; SSIM is the standard single-scale form with an 11x11
Gaussian window (sigma 1.5) evaluated on the valid interior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class MetricError(ValueError):
    pass


def normalize_to_gt(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Affine-fit pred to gt (least squares), clamped to [0, 1]."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if np.ptp(gt) == 0.0:
        raise MetricError("ground truth is constant; affine fit is degenerate")
    pm = pred.mean()
    var = np.mean((pred - pm) ** 2)
    if var == 0.0:
        gain, offset = 0.0, gt.mean()   # constant prediction: offset only
    else:
        gain = np.mean((pred - pm) * (gt - gt.mean())) / var
        offset = gt.mean() - gain * pm
    return np.clip(gain * pred + offset, 0.0, 1.0)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    for name, img in (("first", a), ("second", b)):
        if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
            raise MetricError(f"{name} image leaves [0, 1]")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE); +inf for an exact match."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


_SSIM_WIN = 11
_SSIM_SIGMA = 1.5


def _ssim_kernel():
    r = _SSIM_WIN // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / _SSIM_SIGMA) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def _window_means(img, kernel):
    return ndimage.convolve(img, kernel, mode="constant")


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01,
         k2: float = 0.03) -> float:
    a, b = _check_pair(a, b)
    if min(a.shape) < _SSIM_WIN:
        raise MetricError(
            f"image {a.shape} smaller than the {_SSIM_WIN}x{_SSIM_WIN} window")
    kernel = _ssim_kernel()
    mu_a = _window_means(a, kernel)
    mu_b = _window_means(b, kernel)
    var_a = _window_means(a * a, kernel) - mu_a ** 2
    var_b = _window_means(b * b, kernel) - mu_b ** 2
    cov = _window_means(a * b, kernel) - mu_a * mu_b
    c1 = k1 ** 2
    c2 = k2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    r = _SSIM_WIN // 2
    return float(np.mean((num / den)[r:-r, r:-r]))


def depth_mae(pred: np.ndarray, gt: np.ndarray, mask=None) -> float:
    """Mean absolute depth error, optionally over a boolean mask."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    err = np.abs(pred - gt)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.shape:
            raise MetricError("mask shape differs from images")
        if not np.any(mask):
            raise MetricError("empty depth mask")
        err = err[mask]
    return float(err.mean())


@dataclass(frozen=True)
class MetricReport:
    views: tuple            # view identifiers in report order
    psnr_values: tuple
    ssim_values: tuple

    def __post_init__(self):
        if not len(self.views) == len(self.psnr_values) == len(self.ssim_values):
            raise MetricError("per-view metric lists disagree in length")

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))


def format_metric_csv(report: MetricReport) -> str:
    lines = ["view,psnr,ssim"]
    for view, p, s in zip(report.views, report.psnr_values,
                          report.ssim_values):
        lines.append(f"{view},{p:.17g},{s:.17g}")
    lines.append(f"mean,{report.mean_psnr:.17g},{report.mean_ssim:.17g}")
    return "\n".join(lines) + "\n"
