"""PSNR and SSIM on the luminance channel."""

import numpy as np
from scipy.signal import convolve2d

from ..errors import DimensionError

__all__ = ["to_luminance", "psnr", "ssim", "gaussian_window", "PSNR_CAP"]

PSNR_CAP = 99.0
BT601 = np.array([0.299, 0.587, 0.114])


def to_luminance(img):
    """BT.601 luma of an ``(H, W, 3)`` image in [0, 1]; single-channel input passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ BT601
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    return img


def psnr(a, b, peak=1.0):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    err = np.mean((a - b) ** 2)
    if err == 0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / err))


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Mean SSIM over all fully-contained Gaussian windows of two single-channel images."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"ssim needs two equal 2-d images, got {a.shape} and {b.shape}")
    if min(a.shape) < size:
        raise DimensionError(f"image {a.shape} smaller than the {size}x{size} window")
    win = gaussian_window(size, sigma)
    filt = lambda x: convolve2d(x, win, mode="valid")  # noqa: E731
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
