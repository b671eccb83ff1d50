"""Bilinear sampling of feature maps at fractional positions.

Positions are in pixel units with the origin at the centre of pixel (0, 0).
Positions outside ``[0, H-1] x [0, W-1]`` are clamped to the border; the
position gradient along a clamped axis is zero.  At an exact interior lattice
line the cell to the right/below is used, so the position gradient there is
the right-hand derivative.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import DimensionError, DomainError
from .tensor import Tensor, as_tensor, record

__all__ = ["sample_bilinear", "sample_point", "bilinear_weights"]


def _cell(pos, size):
    clamped = np.clip(pos, 0.0, size - 1.0)
    inside = (pos >= 0.0) & (pos <= size - 1.0)
    lo = np.floor(clamped).astype(np.int64)
    if size > 1:
        lo = np.minimum(lo, size - 2)
    else:
        lo = np.zeros_like(lo)
    frac = clamped - lo
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, frac, inside


def bilinear_weights(rows, cols, height, width):
    """Corner indices and weights, ordered (r0c0, r0c1, r1c0, r1c1)."""
    r0, r1, fr, _ = _cell(np.asarray(rows, dtype=np.float64), height)
    c0, c1, fc, _ = _cell(np.asarray(cols, dtype=np.float64), width)
    corners = ((r0, c0), (r0, c1), (r1, c0), (r1, c1))
    weights = ((1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc)
    return corners, weights


def sample_bilinear(fmap, rows, cols):
    """Sample a batch of maps ``(B, H, W, C)`` at positions ``rows, cols``.

    ``rows`` and ``cols`` share a shape ``(B, *Q)``; the result has shape
    ``(B, *Q, C)``.  Gradients flow to the map values and both coordinates.
    """
    fmap, rows, cols = as_tensor(fmap), as_tensor(rows), as_tensor(cols)
    md = fmap.data
    if md.ndim != 4 or md.shape[1] == 0 or md.shape[2] == 0:
        raise DimensionError(f"expected a non-empty (B, H, W, C) map, got {md.shape}")
    rd, cd = rows.data, cols.data
    if rd.shape != cd.shape or rd.shape[:1] != md.shape[:1]:
        raise DimensionError(f"position shapes {rd.shape}/{cd.shape} vs map {md.shape}")
    if not (np.all(np.isfinite(rd)) and np.all(np.isfinite(cd))):
        raise DomainError("non-finite sampling position")
    b, h, w, c = md.shape
    r0, r1, fr, in_r = _cell(rd, h)
    c0, c1, fc, in_c = _cell(cd, w)
    base = (np.arange(b) * (h * w)).reshape((b,) + (1,) * (rd.ndim - 1))
    flat = md.reshape(b * h * w, c)
    idx = [base + r0 * w + c0, base + r0 * w + c1, base + r1 * w + c0, base + r1 * w + c1]
    v00, v01, v10, v11 = (flat[i] for i in idx)
    wts = [(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc]
    out = (
        wts[0][..., None] * v00 + wts[1][..., None] * v01
        + wts[2][..., None] * v10 + wts[3][..., None] * v11
    )

    def back(g):
        gmap = None
        if fmap.requires_grad:
            g2 = g.reshape(-1, c)
            n = g2.shape[0]
            cols_ = np.stack([i.reshape(-1) for i in idx], axis=1).reshape(-1)
            vals = np.stack([wt.reshape(-1) for wt in wts], axis=1).reshape(-1)
            gather = sparse.csr_matrix((vals, cols_, np.arange(0, 4 * n + 1, 4)), shape=(n, b * h * w))
            gmap = np.asarray(gather.T @ g2).reshape(md.shape)
        grow = gcol = None
        if rows.requires_grad:
            d_r = (1 - fc)[..., None] * (v10 - v00) + fc[..., None] * (v11 - v01)
            grow = (g * d_r).sum(axis=-1) * in_r
        if cols.requires_grad:
            d_c = (1 - fr)[..., None] * (v01 - v00) + fr[..., None] * (v11 - v10)
            gcol = (g * d_c).sum(axis=-1) * in_c
        return gmap, grow, gcol

    return record(out, (fmap, rows, cols), back, "sample_bilinear")


def sample_point(fmap, row, col):
    """Sample a single ``(H, W, C)`` map at one position; returns a channel vector."""
    fmap = as_tensor(fmap)
    if fmap.ndim != 3:
        raise DimensionError(f"expected an (H, W, C) map, got {fmap.shape}")
    batched = fmap.reshape((1,) + fmap.shape)
    r = row.reshape(1, 1) if isinstance(row, Tensor) else Tensor(np.full((1, 1), row, dtype=np.float64))
    c = col.reshape(1, 1) if isinstance(col, Tensor) else Tensor(np.full((1, 1), col, dtype=np.float64))
    return sample_bilinear(batched, r, c).reshape(fmap.shape[-1])
