"""Train a small ACLA model briefly, then draw the keys it picks for a few query pixels.

    python3 demos/key_maps.py --out key_maps --epochs 30

Writes one PPM per (module, layer) and a keys.csv under a folder per query.
"""

import argparse
from pathlib import Path

import numpy as np

from acla.cli import model_spec, train_settings
from acla.io.config import preset
from acla.io.visualize import visualize_keys
from acla.restoration.data import load_dataset
from acla.restoration.model import RestorationNet
from acla.restoration.train import train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="key_maps")
    parser.add_argument("--epochs", type=int, default=30)
    args = parser.parse_args()

    cfg = preset("desk-denoise-acla")
    cfg.train.epochs = args.epochs
    data = load_dataset("denoise")
    model = RestorationNet(model_spec(cfg), np.random.default_rng(0))
    train(model, data, train_settings(cfg), seed=0)

    noisy = data.val[0][0]
    h, w = noisy.shape[:2]
    for row, col in [(h // 4, w // 4), (h // 2, w // 2), (3 * h // 4, w // 3)]:
        out = Path(args.out) / f"query_{row}_{col}"
        result = visualize_keys(model, noisy, row, col, out)
        kept = {key: len(c) for key, c in result.markers.items()}
        print(f"query ({row}, {col}): keys kept per (module, layer) {kept} -> {out}")


if __name__ == "__main__":
    main()
