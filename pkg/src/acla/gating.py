"""Binary Gumbel-Softmax gates with straight-through hardening.

Two gate families share one functional form ``sigmoid((logit + e1 - e2) / tau)``:
per-key masks whose logit comes from a mask unit applied to the sampled key
feature, and per-position architecture gates whose logit is a free
parameter.  Noise is drawn only in training mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .tensor import Tensor, as_tensor, conv1x1, sigmoid, straight_through

__all__ = [
    "GateState",
    "ArchState",
    "TemperatureSchedule",
    "gumbel_pair",
    "soft_mask",
    "harden",
    "mask_unit",
    "arch_gate",
    "temperature",
]


def gumbel_pair(rng, shape=()):
    """Two independent standard Gumbel draws of ``shape`` by inverse CDF, ``-ln(-ln u)``."""
    # u is drawn from [tiny, 1) so both logarithms stay finite
    tiny = np.finfo(np.float64).tiny
    u1 = rng.uniform(tiny, 1.0, size=shape)
    u2 = rng.uniform(tiny, 1.0, size=shape)
    return -np.log(-np.log(u1)), -np.log(-np.log(u2))


def _relaxed(logit, tau, train, rng, noise):
    if tau <= 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    shape = logit.shape if isinstance(logit, Tensor) else np.shape(logit)
    if noise is not None:
        e1, e2 = noise
    elif train:
        if rng is None:
            raise ValueError("training-mode gates need a random generator")
        e1, e2 = gumbel_pair(rng, shape)
    else:
        e1 = e2 = 0.0
    delta = np.asarray(e1, dtype=np.float64) - np.asarray(e2, dtype=np.float64)
    if isinstance(logit, Tensor):
        return sigmoid((logit + delta) * (1.0 / tau))
    return sigmoid((np.asarray(logit, dtype=np.float64) + delta) / tau)


def soft_mask(beta, tau, train=False, rng=None, noise=None):
    """Relaxed key mask in (0, 1).

    ``noise`` overrides the Gumbel draw with an explicit ``(e1, e2)`` pair.
    """
    return _relaxed(beta, tau, train, rng, noise)


def arch_gate(alpha, tau, train=False, rng=None, noise=None):
    """Continuous insert-position gate; never hardened during search."""
    return _relaxed(alpha, tau, train, rng, noise)


def harden(soft):
    """1 where ``soft > 0.5`` else 0; backward passes gradients straight through."""
    if isinstance(soft, Tensor):
        return straight_through(soft, 0.5)
    out = (np.asarray(soft, dtype=np.float64) > 0.5).astype(np.float64)
    return float(out) if out.ndim == 0 else out


def mask_unit(value, weight, bias):
    """Scalar-output 1x1 convolution on sampled key features: ``value . weight + bias``."""
    if isinstance(value, Tensor) or isinstance(weight, Tensor):
        w = as_tensor(weight)
        w2 = w.reshape(w.shape[0], 1) if w.ndim == 1 else w
        b = as_tensor(bias).reshape(1)
        out = conv1x1(as_tensor(value), w2, b)
        return out.reshape(out.shape[:-1])
    value = np.asarray(value, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64).reshape(-1)
    if value.shape[-1] != weight.shape[0]:
        raise DimensionError(f"mask unit expects {weight.shape[0]} channels, got {value.shape[-1]}")
    out = value @ weight + float(bias)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class GateState:
    """A single evaluated gate."""

    soft: float
    hard: int
    tau: float
    noise: tuple = (0.0, 0.0)

    @classmethod
    def evaluate(cls, logit, tau, train=False, rng=None):
        noise = tuple(float(e) for e in gumbel_pair(rng)) if train else (0.0, 0.0)
        soft = float(soft_mask(float(logit), tau, noise=noise))
        return cls(soft=soft, hard=int(soft > 0.5), tau=tau, noise=noise)


@dataclass
class ArchState:
    """Architecture logits, one per candidate insert position (1-based positions)."""

    positions: list
    alpha: Tensor = field(default=None)

    def __post_init__(self):
        self.positions = [int(p) for p in self.positions]
        if self.alpha is None:
            self.alpha = Tensor(np.zeros(len(self.positions)), requires_grad=True)
        elif not isinstance(self.alpha, Tensor):
            self.alpha = Tensor(self.alpha, requires_grad=True)
        if self.alpha.shape != (len(self.positions),):
            raise DimensionError("one alpha per candidate position required")

    def gates(self, tau, train=False, rng=None):
        """Continuous gates as a Tensor (differentiable w.r.t. alpha)."""
        return arch_gate(self.alpha, tau, train, rng)

    def soft_values(self, tau=1.0):
        return np.asarray(arch_gate(self.alpha.data, tau))

    def derived(self):
        """Positions whose noise-free gate exceeds 0.5, i.e. ``alpha > 0``."""
        return [p for p, a in zip(self.positions, self.alpha.data) if a > 0]


@dataclass(frozen=True)
class TemperatureSchedule:
    """Constant ``tau_start`` in stage 1, exponential decay to ``tau_end`` over stage 2."""

    stage1_epochs: int
    stage2_epochs: int
    tau_start: float = 1.0
    tau_end: float = 0.1


def temperature(epoch, schedule):
    if epoch < 0:
        raise DomainError("epoch must be non-negative")
    e2 = epoch - schedule.stage1_epochs
    if e2 <= 0:
        return schedule.tau_start
    last = schedule.stage2_epochs - 1
    if last <= 0 or e2 >= last:
        return schedule.tau_end
    ratio = schedule.tau_end / schedule.tau_start
    return schedule.tau_start * math.exp(math.log(ratio) * e2 / last)
