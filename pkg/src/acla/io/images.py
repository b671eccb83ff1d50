"""8-bit binary PGM (P5) and PPM (P6) images mapped to float arrays in [0, 1]."""

from pathlib import Path

import numpy as np

__all__ = ["read_image", "write_image", "list_images", "IMAGE_SUFFIXES"]

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


def _tokens(buf):
    """Yield header tokens and the offset just past each one, skipping comments."""
    i, n = 0, len(buf)
    while i < n:
        ch = buf[i:i + 1]
        if ch == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
                j += 1
            yield buf[i:j], j
            i = j


def read_image(path):
    """Return ``(H, W, 1)`` for PGM or ``(H, W, 3)`` for PPM, values / 255."""
    buf = Path(path).read_bytes()
    toks = _tokens(buf)
    try:
        magic, _ = next(toks)
        width, _ = next(toks)
        height, _ = next(toks)
        maxval, end = next(toks)
    except StopIteration:
        raise ValueError(f"{path}: truncated PNM header") from None
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported image type {magic!r}")
    w, h, mx = int(width), int(height), int(maxval)
    if mx != 255:
        raise ValueError(f"{path}: only 8-bit images are supported (maxval {mx})")
    channels = 1 if magic == b"P5" else 3
    body = buf[end + 1:end + 1 + w * h * channels]
    if len(body) != w * h * channels:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, channels).astype(np.float64) / 255.0


def write_image(path, img):
    """Write a ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` float image, clipped and rounded."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise ValueError(f"cannot write {c}-channel image")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def list_images(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
