"""Key-selection pictures: where each attention module looked for one query pixel."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError, DomainError
from ..restoration.model import ForwardContext
from .images import write_image

__all__ = ["KEY_COLUMNS", "KeyVisualization", "key_rows", "render_keys", "visualize_keys"]

KEY_COLUMNS = ("module", "layer", "key", "row", "col", "weight", "beta", "mask")
QUERY_COLOUR = np.array([1.0, 0.0, 0.0])


@dataclass
class KeyVisualization:
    rows: list
    images: dict = field(default_factory=dict)
    # (module, layer) -> [(pixel row, pixel col)] of the circle centres drawn
    markers: dict = field(default_factory=dict)
    csv_path: Path = None


def key_rows(info, row, col, feature_shape):
    """CSV rows for the surviving keys (mask 1) of every module at one query.

    Positions are where the value was actually read, i.e. after clamping
    to the map.
    """
    h, w = feature_shape
    rows = []
    for module, trace in sorted(info.traces.items()):
        for rec in trace.records(row, col):
            if rec.mask != 1:
                continue
            r, c = rec.position
            rows.append({
                "module": module, "layer": rec.layer, "key": rec.key,
                "row": float(np.clip(r, 0, h - 1)), "col": float(np.clip(c, 0, w - 1)),
                "weight": rec.weight, "beta": rec.beta, "mask": rec.mask,
            })
    return rows


def _circle(canvas, cy, cx, radius, colour):
    h, w = canvas.shape[:2]
    angles = np.linspace(0, 2 * np.pi, max(16, int(8 * radius)), endpoint=False)
    ys = np.clip(np.round(cy + radius * np.sin(angles)).astype(int), 0, h - 1)
    xs = np.clip(np.round(cx + radius * np.cos(angles)).astype(int), 0, w - 1)
    canvas[ys, xs] = colour


def _cross(canvas, cy, cx, arm, colour):
    h, w = canvas.shape[:2]
    canvas[max(cy - arm, 0):min(cy + arm + 1, h), cx] = colour
    canvas[cy, max(cx - arm, 0):min(cx + arm + 1, w)] = colour


def render_keys(background, query, keys, scale=4):
    """Grey, dimmed, upscaled ``background`` with the query cross and one circle per key.

    ``keys`` are ``(row, col, weight)``; circle brightness grows with the
    weight relative to the largest one.  Returns ``(image, centres)``.
    """
    grey = np.asarray(background, dtype=np.float64)
    grey = grey.mean(axis=-1) if grey.ndim == 3 else grey
    canvas = np.repeat(np.repeat(0.5 * grey, scale, axis=0), scale, axis=1)
    canvas = np.repeat(canvas[..., None], 3, axis=-1)
    half = scale // 2
    top = max((wt for _, _, wt in keys), default=1.0) or 1.0
    centres = []
    for r, c, wt in keys:
        cy, cx = int(round(r * scale)) + half, int(round(c * scale)) + half
        _circle(canvas, cy, cx, 1.5 * scale, np.array([0.0, 0.3 + 0.7 * wt / top, 0.0]))
        centres.append((cy, cx))
    qy, qx = query[0] * scale + half, query[1] * scale + half
    _cross(canvas, qy, qx, scale, QUERY_COLOUR)
    return canvas, centres


def visualize_keys(model, image, row, col, out_dir, force_masks_on=False, scale=4):
    """Run ``model`` on ``image`` and draw the keys of query ``(row, col)`` for every module/layer.

    Writes ``keys_m{module}_l{layer}.ppm`` and ``keys.csv`` into ``out_dir``.
    """
    if not model.attention or model.spec.variant not in ("cla", "acla"):
        raise ContractError("the model has no CLA/ACLA module to visualise")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if not (0 <= row < h and 0 <= col < w):
        raise DomainError(f"query ({row}, {col}) outside the {h}x{w} image")
    _, info = model.forward(image[None], ForwardContext(force_masks_on=force_masks_on))
    rows = key_rows(info, row, col, (h, w))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = KeyVisualization(rows=rows, csv_path=out_dir / "keys.csv")
    with open(result.csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=KEY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    for module, trace in sorted(info.traces.items()):
        for layer in trace.layers:
            keys = [(r["row"], r["col"], r["weight"]) for r in rows if r["module"] == module and r["layer"] == layer]
            canvas, centres = render_keys(image, (row, col), keys, scale)
            path = out_dir / f"keys_m{module}_l{layer}.ppm"
            write_image(path, canvas)
            result.images[module, layer] = path
            result.markers[module, layer] = centres
    return result
