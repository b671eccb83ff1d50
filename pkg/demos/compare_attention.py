"""Train the plain backbone, CLA and ACLA on the synthetic denoising set and compare validation PSNR.

    python3 demos/compare_attention.py --seed 0 --epochs 120

A full run takes about eight minutes on one core.
"""

import argparse
import time

import numpy as np

from acla.cli import model_spec, train_settings
from acla.io.config import preset
from acla.restoration.data import load_dataset
from acla.restoration.model import RestorationNet
from acla.restoration.train import mean_occupancy, train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=120)
    args = parser.parse_args()

    data = load_dataset("denoise")
    print(f"{len(data.train)} training images, {len(data.val)} validation images")
    for variant in ("baseline", "cla", "acla"):
        cfg = preset(f"desk-denoise-{variant}")
        cfg.train.epochs = args.epochs
        model = RestorationNet(model_spec(cfg), np.random.default_rng(args.seed))
        start = time.perf_counter()
        state = train(model, data, train_settings(cfg), seed=args.seed)
        last = state.trace[-1]
        line = f"{variant:>8}: PSNR {last['val_psnr']:.3f} dB  SSIM {last['val_ssim']:.4f}"
        if variant == "acla":
            line += f"  mask occupancy {mean_occupancy(model, data.val):.3f}"
        print(f"{line}  ({time.perf_counter() - start:.0f} s)")


if __name__ == "__main__":
    main()
