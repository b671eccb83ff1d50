"""Command-line harness: search, train, eval, visualize-keys.

Exit codes: 0 success, 2 usage or configuration problem, 3 checkpoint
state or version problem.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ContractError, DomainError
from .io.checkpoint import Checkpoint, load_checkpoint, restore_rng, rng_state, save_checkpoint
from .io.config import dump_config, load_config, parse_config, preset, PRESETS
from .io.images import list_images, read_image
from .io.visualize import visualize_keys
from .restoration.data import degrade, load_dataset
from .restoration.metrics import psnr, ssim, to_luminance
from .restoration.model import ForwardContext, ModelSpec, RestorationNet
from .restoration.train import METRIC_COLUMNS, TrainSettings, TrainState, train
from .search import (
    SEARCH_LOG_COLUMNS, SearchSettings, SearchState, build_supernet, cross_validate_lambda, derived_model,
    run_search,
)

__all__ = ["main", "cmd_search", "cmd_train", "cmd_eval", "cmd_visualize_keys", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_STATE = 0, 2, 3


# config helpers ------------------------------------------------------------------
def _config(args):
    if args.config and args.preset:
        raise ConfigError("config", "give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = parse_config("")
    if args.seed is not None:
        cfg.experiment.seed = args.seed
    return cfg


def model_spec(cfg, positions=None):
    a = cfg.attention
    if positions is None:
        positions = a.insert if isinstance(a.insert, tuple) else ()
    return ModelSpec(
        task=cfg.experiment.task, colors=cfg.model.colors, channels=cfg.model.channels, blocks=cfg.model.blocks,
        variant=a.variant if positions or a.insert == "search" else "none", k=a.k, positions=tuple(positions),
        max_refs=a.max_refs, offset_init=a.offset_init, offset_spread=a.offset_spread, mask_bias=a.mask_bias)


def _dataset(cfg):
    d = cfg.data
    return load_dataset(cfg.experiment.task, d.train_dir, d.val_dir, d.synthetic, d.size, d.val_count,
                        d.seed, d.sigma, cfg.model.colors, d.period)


def train_settings(cfg):
    t = cfg.train
    return TrainSettings(epochs=t.epochs, batch=t.batch, patch=t.patch, lr=t.lr, key_tau=t.key_tau,
                         patches_per_image=t.patches_per_image)


def search_settings(cfg):
    s = cfg.search
    return SearchSettings(stage1_epochs=s.stage1_epochs, stage2_epochs=s.stage2_epochs, batch=s.batch,
                          patch=s.patch, lr=s.lr, arch_lr=s.arch_lr, tau_start=s.tau_start, tau_end=s.tau_end,
                          patches_per_image=s.patches_per_image, arch_noise=s.arch_noise,
                          corrected_cost=s.corrected_cost)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(_cell(v) for v in value)
    return str(value)


def _arrays(model):
    return {name: t.data for name, t in {**model.weights(), **model.arch_params()}.items()}


def _model_from_checkpoint(ckpt):
    model = RestorationNet(ModelSpec.from_dict(ckpt.spec))
    try:
        model.load_arrays(ckpt.params)
    except Exception as exc:
        raise CheckpointError(f"checkpoint parameters do not fit the stored model: {exc}") from None
    return model


# commands -------------------------------------------------------------------------
def cmd_search(cfg, out_dir, resume=None):
    """Search insert positions; writes ``derived.txt``, ``search_log.csv`` and ``search.ckpt``."""
    if cfg.attention.variant != "acla" or cfg.attention.insert != "search":
        raise ConfigError("attention.insert", "search needs attention.variant = acla and attention.insert = search")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.experiment.seed
    data = _dataset(cfg)
    settings = search_settings(cfg)
    spec = model_spec(cfg)

    lam, scores = cfg.search.lam, {}
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.kind != "search":
            raise CheckpointError(f"{resume} is a {ckpt.kind} checkpoint, not a search checkpoint")
        supernet = _model_from_checkpoint(ckpt)
        lam = ckpt.extra["lambda"]
        scores = {float(k): v for k, v in ckpt.extra["lambda_scores"].items()}
        state = SearchState(weight_adam=ckpt.optimizers["weights"], arch_adam=ckpt.optimizers["arch"],
                            rngs={k: restore_rng(v) for k, v in ckpt.rngs.items()}, epoch=ckpt.epoch,
                            trace=ckpt.extra["trace"], isolation_checks=ckpt.extra["isolation_checks"])
    else:
        if lam == "cv":
            lam, scores = cross_validate_lambda(cfg.search.lambda_candidates, data, spec, settings,
                                                train_settings(cfg), seed)
        supernet = build_supernet(spec, np.random.default_rng(seed))
        state = None

    def checkpoint(state, derived=None):
        save_checkpoint(out_dir / "search.ckpt", Checkpoint(
            kind="search", config=dump_config(cfg), spec=supernet.spec.as_dict(), params=_arrays(supernet),
            epoch=state.epoch, optimizers={"weights": state.weight_adam, "arch": state.arch_adam},
            rngs={k: rng_state(r) for k, r in state.rngs.items()},
            extra={"lambda": lam, "lambda_scores": {repr(k): v for k, v in scores.items()},
                   "trace": state.trace, "isolation_checks": state.isolation_checks, "derived": derived}))

    every = cfg.search.save_every
    on_epoch = (lambda st: checkpoint(st) if st.epoch % every == 0 else None) if every else None
    result = run_search(supernet, data, settings, lam, seed, state, on_epoch)
    checkpoint(result.state, result.derived)
    (out_dir / "derived.txt").write_text(", ".join(str(p) for p in result.derived) + "\n", encoding="utf-8")
    _write_csv(out_dir / "search_log.csv", SEARCH_LOG_COLUMNS, result.trace)
    print(f"lambda {lam}: kept positions {result.derived or 'none'} of {supernet.spec.positions}")
    return result


def cmd_train(cfg, out_dir, resume=None, from_search=None):
    """Train the configured model; writes ``train.ckpt`` and ``metrics.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.experiment.seed
    data = _dataset(cfg)
    settings = train_settings(cfg)
    state = None
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.kind != "train":
            raise CheckpointError(f"{resume} is a {ckpt.kind} checkpoint, not a training checkpoint")
        model = _model_from_checkpoint(ckpt)
        state = TrainState(adam=ckpt.optimizers["weights"], rngs={k: restore_rng(v) for k, v in ckpt.rngs.items()},
                           epoch=ckpt.epoch, trace=ckpt.extra["trace"])
    elif cfg.attention.insert == "search":
        if from_search is None:
            raise ConfigError("attention.insert", "positions are 'search': pass --from-search with a search checkpoint")
        source = load_checkpoint(from_search)
        if source.kind != "search" or source.extra.get("derived") is None:
            raise CheckpointError(f"{from_search} is not a finished search checkpoint")
        supernet = _model_from_checkpoint(source)
        model = derived_model(supernet, source.extra["derived"], np.random.default_rng(seed))
    else:
        model = RestorationNet(model_spec(cfg), np.random.default_rng(seed))

    def checkpoint(st):
        save_checkpoint(out_dir / "train.ckpt", Checkpoint(
            kind="train", config=dump_config(cfg), spec=model.spec.as_dict(), params=_arrays(model),
            epoch=st.epoch, optimizers={"weights": st.adam}, rngs={k: rng_state(r) for k, r in st.rngs.items()},
            extra={"trace": st.trace}))

    every = cfg.train.save_every
    on_epoch = (lambda st: checkpoint(st) if st.epoch % every == 0 else None) if every else None
    state = train(model, data, settings, seed, state, on_epoch)
    checkpoint(state)
    _write_csv(out_dir / "metrics.csv", METRIC_COLUMNS, state.trace)
    if state.trace:
        last = state.trace[-1]
        print(f"epoch {last['epoch']}: val PSNR {last['val_psnr']:.3f} dB, SSIM {last['val_ssim']:.4f}")
    return model, state


def _eval_pairs(data_dir, task, seed, sigma):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ConfigError("data", f"data directory {data_dir} does not exist")
    paired = (data_dir / "input").is_dir() and (data_dir / "target").is_dir()
    files = list_images(data_dir / "target" if paired else data_dir)
    rng = np.random.default_rng(seed)
    pairs = []
    for path in files:
        try:
            target = read_image(path)
            inp = read_image(data_dir / "input" / path.name) if paired else degrade(task, target, rng, sigma)
        except (OSError, ValueError) as exc:
            warnings.warn(f"skipping {path.name}: {exc}", stacklevel=2)
            continue
        pairs.append((path.name, inp, target))
    return pairs


def cmd_eval(cfg, out_dir, data_dir, checkpoint=None):
    """Luminance PSNR/SSIM over a directory; without a checkpoint the input itself is scored."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = _model_from_checkpoint(load_checkpoint(checkpoint)) if checkpoint else None
    task = model.spec.task if model else cfg.experiment.task
    pairs = _eval_pairs(data_dir, task, cfg.experiment.seed, cfg.data.sigma)
    if not pairs:
        raise ConfigError("data", f"no readable images in {data_dir}")
    rows = []
    for name, inp, target in pairs:
        if model is not None:
            pred = np.clip(model.predict(inp[None], ForwardContext())[0], 0.0, 1.0)
        elif inp.shape == target.shape:
            pred = inp
        else:
            raise ConfigError("checkpoint", f"task {task} changes the image size; a model checkpoint is needed")
        a, b = to_luminance(pred), to_luminance(target)
        rows.append({"image": name, "psnr": psnr(a, b), "ssim": ssim(a, b) if min(a.shape) >= 11 else float("nan")})
    summary = {"image": "mean", "psnr": float(np.mean([r["psnr"] for r in rows])),
               "ssim": float(np.mean([r["ssim"] for r in rows]))}
    _write_csv(out_dir / "eval.csv", ("image", "psnr", "ssim"), rows + [summary])
    print(f"{len(rows)} images: PSNR {summary['psnr']:.3f} dB, SSIM {summary['ssim']:.4f}")
    return rows, summary


def cmd_visualize_keys(out_dir, checkpoint, image, row, col, force_masks_on=False):
    model = _model_from_checkpoint(load_checkpoint(checkpoint))
    try:
        img = read_image(image)
    except (OSError, ValueError) as exc:
        raise ConfigError("image", f"cannot read {image}: {exc}") from None
    result = visualize_keys(model, img, row, col, out_dir, force_masks_on)
    print(f"{len(result.rows)} keys drawn into {len(result.images)} images; table in {result.csv_path}")
    return result


# entry point -------------------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (section.key = value lines)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="start from a shipped preset instead")
    common.add_argument("--seed", type=int, help="overrides experiment.seed")
    common.add_argument("--out-dir", default="runs", help="output directory (default: runs)")

    parser = argparse.ArgumentParser(prog="acla", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("search", parents=[common], help="search attention insert positions")
    p.add_argument("--resume", help="continue from a search checkpoint")
    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--resume", help="continue from a training checkpoint")
    p.add_argument("--from-search", help="search checkpoint giving positions and warm-start weights")
    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM over an image directory")
    p.add_argument("--checkpoint", help="trained model; omitted: score the degraded input itself")
    p.add_argument("--data", required=True, help="clean images, or input/ and target/ subdirectories")
    p = sub.add_parser("visualize-keys", parents=[common], help="draw the keys chosen for one query pixel")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="model input image (PGM/PPM)")
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--col", type=int, required=True)
    p.add_argument("--force-masks-on", action="store_true", help="draw all K keys, ignoring the masks")
    p = sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "search":
            cmd_search(cfg, args.out_dir, args.resume)
        elif args.command == "train":
            cmd_train(cfg, args.out_dir, args.resume, args.from_search)
        elif args.command == "eval":
            cmd_eval(cfg, args.out_dir, args.data, args.checkpoint)
        elif args.command == "visualize-keys":
            cmd_visualize_keys(args.out_dir, args.checkpoint, args.image, args.row, args.col, args.force_masks_on)
        else:
            sys.stdout.write(dump_config(cfg))
    except (ConfigError, DomainError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE
    return EXIT_OK
