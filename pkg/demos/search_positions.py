"""Search ACLA insert positions on the synthetic denoising set for a few cost weights.

    python3 demos/search_positions.py --lambdas 0 0.35 1000
"""

import argparse

import numpy as np

from acla.cli import model_spec, search_settings
from acla.io.config import preset
from acla.restoration.data import load_dataset
from acla.search import build_supernet, run_search


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.35, 1000.0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stage-epochs", type=int, default=20, help="epochs in each of the two stages (at least 1)")
    args = parser.parse_args()

    cfg = preset("desk-denoise-search")
    cfg.search.stage1_epochs = cfg.search.stage2_epochs = args.stage_epochs
    data = load_dataset("denoise")
    for lam in args.lambdas:
        net = build_supernet(model_spec(cfg), np.random.default_rng(args.seed))
        result = run_search(net, data, search_settings(cfg), lam, seed=args.seed)
        last = result.trace[-1]
        gates = ", ".join(f"{g:.2f}" for g in last["gates"])
        print(f"lambda {lam:g}: final gates [{gates}], cost {last['cost']:.0f},"
              f" kept {result.derived or 'none'} of {list(net.arch.positions)}")


if __name__ == "__main__":
    main()
