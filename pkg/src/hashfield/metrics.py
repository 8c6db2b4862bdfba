"""Image quality metrics for unit-range images."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 99.0

# standard SSIM constants for luminance range 1
_K1, _K2 = 0.01, 0.03
_C1, _C2 = _K1 ** 2, _K2 ** 2
_WINDOW = 11
_SIGMA = 1.5


def psnr(rendered, reference) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 (the cap also stands
    in for the infinite value of identical images)."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * math.log10(mse), PSNR_CAP)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(rendered, reference) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Color inputs are converted to grayscale by the channel mean.  Valid-mode
    windows only, so the images must be at least as large as the window.
    """
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if min(a.shape) < _WINDOW:
        raise ValueError(f"images must be at least {_WINDOW} pixels across")
    win = _gaussian_window(_WINDOW, _SIGMA)

    def smooth(x):
        return convolve2d(x, win, mode="valid")

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a ** 2
    var_b = smooth(b * b) - mu_b ** 2
    cov = smooth(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _C1) * (2.0 * cov + _C2)
    den = (mu_a ** 2 + mu_b ** 2 + _C1) * (var_a + var_b + _C2)
    return float((num / den).mean())
