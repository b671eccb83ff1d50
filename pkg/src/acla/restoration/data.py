"""Training data: synthetic self-similar images, patch sampling and augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DimensionError
from ..io.images import list_images, read_image
from .degrade import degrade_awgn, degrade_bicubic_down, degrade_mosaic
from .model import task_scale

__all__ = [
    "synthetic_image",
    "synthetic_images",
    "dihedral",
    "augment",
    "degrade",
    "Dataset",
    "split_indices",
]


def synthetic_image(size, rng, colors=3, period=8):
    """A random texture tile repeated with ``period``, over a colour ramp, with saturated blobs.

    Every texture pixel has exact copies ``period`` pixels away in each
    direction, which only keys sampled at that distance can exploit.  The
    small saturated blobs (diameter below ``period``) break the repetition
    locally: a key landing on one never matches its query.
    """
    tile = rng.uniform(0.0, 1.0, (period, period, colors))
    reps = size // period + 1
    img = 0.25 + 0.3 * np.tile(tile, (reps, reps, 1))[:size, :size]
    yy, xx = np.mgrid[0:size, 0:size]
    img = img + 0.2 * (yy / size)[..., None] * rng.uniform(-1.0, 1.0, colors)
    for _ in range(int(rng.integers(6, 12))):
        cy, cx = rng.integers(0, size, 2)
        r = rng.uniform(0.3, 0.5) * period
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = rng.integers(0, 2, colors)
    return np.clip(img, 0.0, 1.0)


def synthetic_images(n, size, seed, colors=3, period=8):
    rng = np.random.default_rng(seed)
    return [synthetic_image(size, rng, colors, period) for _ in range(n)]


def dihedral(img, t):
    """One of the 8 rotations/flips; ``t & 3`` quarter turns then a flip if ``t & 4``."""
    out = np.rot90(img, t & 3, axes=(0, 1))
    if t & 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(arrays, rng):
    """Apply the same random dihedral transform to every array of a pair/tuple."""
    if isinstance(arrays, np.ndarray):
        arrays = (arrays,)
    for a in arrays:
        if a.shape[0] != a.shape[1]:
            raise DimensionError(f"rotation augmentation needs square patches, got {a.shape[:2]}")
    t = int(rng.integers(8))
    return tuple(dihedral(a, t) for a in arrays)


def degrade(task, clean, rng, sigma=30 / 255):
    """Degraded input for ``clean`` under ``task`` (pre-degraded tasks return a copy)."""
    if task == "denoise":
        return degrade_awgn(clean, sigma, rng)
    if task == "demosaic":
        return degrade_mosaic(clean)
    if task.startswith("sr"):
        return degrade_bicubic_down(clean, task_scale(task))
    return np.array(clean, dtype=np.float64)


def split_indices(n, fraction, rng):
    """Seeded shuffle split into ``(first, second)`` with ``fraction`` going to ``second``."""
    order = rng.permutation(n)
    k = min(max(int(round(n * fraction)), 1), n - 1) if n > 1 else 0
    return sorted(order[k:].tolist()), sorted(order[:k].tolist())


@dataclass
class Dataset:
    """Training items and fixed validation pairs for one task.

    Training items are clean images, or ``(input, target)`` pairs for
    pre-degraded data.  Validation pairs are degraded once, up front.
    """

    task: str
    train: list
    val: list = field(default_factory=list)
    sigma: float = 30 / 255

    @property
    def paired(self):
        return self.task == "car-precompressed"

    def subset(self, indices, val=None):
        return Dataset(self.task, [self.train[i] for i in indices], self.val if val is None else val, self.sigma)

    def make_val(self, items, seed):
        """Degrade ``items`` deterministically into validation pairs."""
        rng = np.random.default_rng(seed)
        s = task_scale(self.task)
        pairs = []
        for item in items:
            if self.paired:
                pairs.append(item)
                continue
            h, w = item.shape[0] // s * s, item.shape[1] // s * s
            clean = item[:h, :w]
            pairs.append((degrade(self.task, clean, rng, self.sigma), clean))
        return pairs

    def patch_pair(self, item, patch, rng):
        s = task_scale(self.task)
        hr = patch * s
        src = item[1] if self.paired else item
        h, w = src.shape[:2]
        if h < hr or w < hr:
            raise DimensionError(f"image {h}x{w} smaller than patch {hr}")
        y = int(rng.integers(0, h - hr + 1))
        x = int(rng.integers(0, w - hr + 1))
        if self.paired:
            inp, tgt = (a[y:y + hr, x:x + hr] for a in item)
            return augment((inp, tgt), rng)
        (tgt,) = augment(src[y:y + hr, x:x + hr], rng)
        return degrade(self.task, tgt, rng, self.sigma), tgt

    def epoch_batches(self, patch, batch, rng, items=None, per_image=1):
        """One pass over ``items`` (default: all training items) in seeded order.

        Each item contributes ``per_image`` random patches.
        """
        items = self.train if items is None else items
        order = rng.permutation(np.repeat(np.arange(len(items)), per_image))
        pairs = [self.patch_pair(items[i], patch, rng) for i in order]
        for start in range(0, len(pairs), batch):
            chunk = pairs[start:start + batch]
            yield np.stack([p[0] for p in chunk]), np.stack([p[1] for p in chunk])


def load_dataset(task, train_dir=None, val_dir=None, synthetic=10, size=64, val_count=2,
                 seed=0, sigma=30 / 255, colors=3, period=8):
    """Images from directories, or synthetic ones when no directory is given.

    Directory layout for pre-degraded tasks: ``input/`` and ``target/`` with
    matching file names.
    """
    if train_dir:
        train_items = _read_dir(task, train_dir)
        val_items = _read_dir(task, val_dir) if val_dir else []
        if not train_items:
            raise ConfigError("data.train_dir", f"no readable images in {train_dir}")
    else:
        if task == "car-precompressed":
            raise ConfigError("data.train_dir", "pre-compressed inputs need a data directory")
        imgs = synthetic_images(synthetic + val_count, size, seed, colors, period)
        train_items, val_items = imgs[:synthetic], imgs[synthetic:]
    ds = Dataset(task, train_items, sigma=sigma)
    ds.val = ds.make_val(val_items, seed + 1)
    return ds


def _read_dir(task, directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError("data", f"data directory {directory} does not exist")
    if task == "car-precompressed":
        return [(read_image(p), read_image(directory / "target" / p.name))
                for p in list_images(directory / "input")]
    return [read_image(p) for p in list_images(directory)]
