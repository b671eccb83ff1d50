"""Adam with bias correction and the search/train learning-rate schedules."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError

__all__ = ["AdamState", "adam_step", "lr_schedule"]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """Update ``params`` (name -> array or Tensor) in place; missing grads count as zero."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        data = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def lr_schedule(epoch, phase, total, base=1e-4):
    """Learning rate at ``epoch``.

    ``search``: cosine from ``base`` at epoch 0 to 0 at ``epoch == total``.
    ``train``: ``base`` halved every ``total / 5`` epochs (every 200 of 1000).
    """
    if total < 1 or epoch < 0 or epoch > total:
        raise DomainError(f"epoch {epoch} outside [0, {total}]")
    if phase == "search":
        return base * 0.5 * (1.0 + math.cos(math.pi * epoch / total))
    if phase == "train":
        step = max(1.0, total * 200.0 / 1000.0)
        return base * 2.0 ** (-math.floor(epoch / step))
    raise DomainError(f"unknown schedule phase {phase!r}")
