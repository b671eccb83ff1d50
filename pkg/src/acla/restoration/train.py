"""MSE training loop with Adam, the step schedule and per-epoch validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError
from ..tensor import backward, mse
from .metrics import psnr, ssim, to_luminance
from .model import ForwardContext
from .optim import AdamState, adam_step, lr_schedule

__all__ = ["TrainSettings", "TrainState", "train", "evaluate", "mean_occupancy", "METRIC_COLUMNS"]

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "val_psnr", "val_ssim")


@dataclass
class TrainSettings:
    epochs: int = 120
    batch: int = 8
    patch: int = 32
    lr: float = 1e-4
    key_tau: float = 1.0
    patches_per_image: int = 1


@dataclass
class TrainState:
    """Everything that evolves during training besides the weights."""

    adam: AdamState = field(default_factory=AdamState)
    rngs: dict = field(default_factory=dict)
    epoch: int = 0
    trace: list = field(default_factory=list)

    @classmethod
    def fresh(cls, seed):
        ss = np.random.SeedSequence(seed)
        data, keys = ss.spawn(2)
        return cls(rngs={"data": np.random.default_rng(data), "keys": np.random.default_rng(keys)})


def evaluate(model, pairs, ctx=None):
    """Mean luminance PSNR/SSIM of clipped predictions over ``(input, target)`` pairs."""
    ctx = ForwardContext() if ctx is None else ctx
    ps, ss = [], []
    for inp, tgt in pairs:
        pred = np.clip(model.predict(inp[None], ctx)[0], 0.0, 1.0)
        a, b = to_luminance(pred), to_luminance(tgt)
        ps.append(psnr(a, b))
        ss.append(ssim(a, b) if min(a.shape) >= 11 else float("nan"))
    return float(np.mean(ps)), float(np.mean(ss))


def mean_occupancy(model, pairs):
    """Fraction of hard key masks equal to 1 over all queries, keys and layers (inference mode)."""
    total = count = 0.0
    for inp, _ in pairs:
        _, info = model.forward(inp[None], ForwardContext())
        for trace in info.traces.values():
            total += trace.mask.sum()
            count += trace.mask.size
    return total / count if count else 1.0


def train(model, data, settings, seed=0, state=None, on_epoch=None):
    """Train ``model`` in place; returns the :class:`TrainState` (its ``trace`` holds metric rows).

    Resuming from ``state`` continues at ``state.epoch`` with the saved RNG
    streams and optimizer moments, so the trajectory matches an
    uninterrupted run.
    """
    state = TrainState.fresh(seed) if state is None else state
    weights = model.weights()
    while state.epoch < settings.epochs:
        epoch = state.epoch
        lr = lr_schedule(epoch, "train", settings.epochs, settings.lr)
        ctx = ForwardContext(train=True, key_tau=settings.key_tau, key_rng=state.rngs["keys"])
        losses = []
        for inp, tgt in data.epoch_batches(
                settings.patch, settings.batch, state.rngs["data"], per_image=settings.patches_per_image):
            model.zero_grad()
            out, _ = model.forward(inp, ctx)
            loss = mse(out, tgt)
            if not np.isfinite(loss.data):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            backward(loss)
            adam_step(weights, {k: t.grad for k, t in weights.items()}, state.adam, lr)
            losses.append(float(loss.data))
        vp, vs = evaluate(model, data.val) if data.val else (float("nan"), float("nan"))
        state.trace.append({"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
                            "val_psnr": vp, "val_ssim": vs})
        state.epoch += 1
        if on_epoch is not None:
            on_epoch(state)
    return state
