"""Synthetic degradations: AWGN, bicubic downsampling and Bayer mosaicing."""

import numpy as np

from ..errors import DimensionError, DomainError

__all__ = ["degrade_awgn", "degrade_bicubic_down", "degrade_mosaic", "cubic_kernel", "resize_matrix"]


def degrade_awgn(clean, sigma, rng):
    """Add N(0, sigma^2) noise per value (``sigma`` on the [0, 1] scale), then clamp."""
    if sigma < 0:
        raise DomainError(f"noise level must be non-negative, got {sigma}")
    clean = np.asarray(clean, dtype=np.float64)
    if sigma == 0:
        return clean.copy()
    return np.clip(clean + rng.normal(0.0, sigma, clean.shape), 0.0, 1.0)


def cubic_kernel(x, a=-0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_matrix(size, scale, a=-0.5):
    """``(size // scale, size)`` anti-aliased bicubic reduction matrix.

    The kernel is stretched by ``scale``; indices past the border are
    reflected symmetrically and each row is normalised to sum to one.
    """
    out = size // scale
    m = np.zeros((out, size))
    width = 4 * scale
    for i in range(out):
        center = (i + 0.5) * scale - 0.5
        left = int(np.floor(center - width / 2))
        taps = np.arange(left, left + width + 2)
        w = cubic_kernel((center - taps) / scale, a) / scale
        idx = taps.copy()
        idx = np.where(idx < 0, -idx - 1, idx)
        idx = np.where(idx >= size, 2 * size - idx - 1, idx)
        np.add.at(m[i], idx, w)
        m[i] /= m[i].sum()
    return m


def degrade_bicubic_down(clean, scale):
    """Bicubic (a = -0.5) anti-aliased downsampling of an ``(H, W[, C])`` image."""
    clean = np.asarray(clean, dtype=np.float64)
    h, w = clean.shape[:2]
    if scale not in (2, 3, 4):
        raise DomainError(f"scale must be 2, 3 or 4, got {scale}")
    if h % scale or w % scale:
        raise DimensionError(f"image {h}x{w} not divisible by scale {scale}")
    rows, cols = resize_matrix(h, scale), resize_matrix(w, scale)
    return np.einsum("ih,hw...,jw->ij...", rows, clean, cols)


BAYER_RGGB = np.array([[0, 1], [1, 2]])


def degrade_mosaic(clean):
    """RGGB Bayer sampling into a zero-filled 3-channel image."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise DimensionError(f"mosaicing needs an (H, W, 3) image, got {clean.shape}")
    h, w = clean.shape[:2]
    channel = BAYER_RGGB[np.arange(h)[:, None] % 2, np.arange(w)[None, :] % 2]
    keep = channel[..., None] == np.arange(3)
    return clean * keep
