"""EDSR-style residual trunk with optional attention blocks after residual blocks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..attention import (
    AttentionParams, KeyGating, LayerBank, acla_forward, block_wrap, cla_forward, clnl_forward, nl_forward,
)
from ..cost import backbone_flops, module_cost_terms
from ..errors import ConfigError, DimensionError
from ..gating import ArchState
from ..tensor import Tensor, as_tensor, concat, conv3x3, pixel_shuffle, relu

__all__ = ["TASKS", "ModelSpec", "ForwardContext", "ForwardInfo", "RestorationNet", "task_scale"]

TASKS = ("sr2", "sr3", "sr4", "denoise", "demosaic", "car-precompressed")


def task_scale(task):
    if task not in TASKS:
        raise ConfigError("experiment.task", f"unknown task {task!r}")
    return int(task[2]) if task.startswith("sr") else 1


@dataclass
class ModelSpec:
    """Everything needed to rebuild a network; ``positions`` are 1-based block indices."""

    task: str = "denoise"
    colors: int = 3
    channels: int = 16
    blocks: int = 4
    variant: str = "none"
    k: int = 8
    positions: tuple = ()
    supernet: bool = False
    max_refs: int = None
    embed: int = None
    offset_init: str = "grid"
    offset_spread: float = 1.0
    mask_bias: float = 0.0

    def __post_init__(self):
        self.positions = tuple(int(p) for p in self.positions)
        if self.supernet:
            self.positions = tuple(range(1, self.blocks + 1))
        if self.variant == "none":
            self.positions = ()

    @property
    def scale(self):
        return task_scale(self.task)

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ForwardContext:
    """Mode, temperatures and noise streams for one forward pass."""

    train: bool = False
    key_tau: float = 1.0
    key_rng: object = None
    arch_tau: float = 1.0
    arch_rng: object = None
    arch_noise: bool = True
    force_masks_on: bool = False


@dataclass
class ForwardInfo:
    gates: Tensor = None
    occupancy: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    bank: LayerBank = None
    feature_size: tuple = ()


class RestorationNet:
    """Head conv, ``blocks`` residual blocks (conv-ReLU-conv + skip), task tail.

    Restoration tasks (denoise, demosaic, car) predict a residual that is added
    to the input; SR tasks upsample with a sub-pixel shuffle.
    """

    def __init__(self, spec, rng=None):
        self.spec = spec
        rng = np.random.default_rng(0) if rng is None else rng
        c, colors, s = spec.channels, spec.colors, spec.scale
        he = lambda cin, cout, gain=1.0: Tensor(  # noqa: E731
            rng.normal(0, gain * np.sqrt(2.0 / (9 * cin)), (3, 3, cin, cout)), requires_grad=True)
        zeros = lambda n: Tensor(np.zeros(n), requires_grad=True)  # noqa: E731
        self.params = {"head.w": he(colors, c), "head.b": zeros(c)}
        for i in range(1, spec.blocks + 1):
            self.params[f"block{i}.conv1.w"] = he(c, c)
            self.params[f"block{i}.conv1.b"] = zeros(c)
            self.params[f"block{i}.conv2.w"] = he(c, c, 0.1)
            self.params[f"block{i}.conv2.b"] = zeros(c)
        if s > 1:
            self.params["tail.up.w"] = he(c, c * s * s)
            self.params["tail.up.b"] = zeros(c * s * s)
        self.params["tail.out.w"] = he(c, colors, 0.1)
        self.params["tail.out.b"] = zeros(colors)

        for p in spec.positions:
            if not 1 <= p <= spec.blocks:
                raise ConfigError("attention.insert", f"position {p} outside 1..{spec.blocks}")
        if list(spec.positions) != sorted(set(spec.positions)):
            raise ConfigError("attention.insert", "positions must be strictly increasing")
        self.attention = {}
        for j in spec.positions:
            refs = [p for p in spec.positions if p <= j]
            if spec.max_refs is not None:
                refs = refs[-spec.max_refs:]
            self.attention[j] = AttentionParams(
                spec.variant, c, refs, k=spec.k, embed=spec.embed, rng=rng,
                offset_init=spec.offset_init, offset_spread=spec.offset_spread, mask_bias=spec.mask_bias)
        self.arch = ArchState(list(spec.positions)) if spec.supernet else None

    # parameters ------------------------------------------------------------
    def weights(self):
        """Network weights by name (architecture logits excluded)."""
        out = dict(self.params)
        for j, att in self.attention.items():
            for name, t in att.named().items():
                out[f"attn{j}.{name}"] = t
        return out

    def arch_params(self):
        return {"arch.alpha": self.arch.alpha} if self.arch is not None else {}

    def zero_grad(self):
        for t in list(self.weights().values()) + list(self.arch_params().values()):
            t.grad = None

    def load_arrays(self, arrays, strict=True):
        """Copy arrays into parameters with matching names and shapes; return copied names."""
        targets = {**self.weights(), **self.arch_params()}
        copied = []
        for name, t in targets.items():
            if name in arrays and np.shape(arrays[name]) == t.shape:
                t.data[...] = arrays[name]
                copied.append(name)
            elif strict:
                raise DimensionError(f"missing or mis-shaped parameter {name}")
        return copied

    # forward ----------------------------------------------------------------
    def forward(self, x, ctx=None):
        """Run on ``(B, H, W, colors)`` input; returns ``(output, ForwardInfo)``."""
        ctx = ForwardContext() if ctx is None else ctx
        spec, p = self.spec, self.params
        x = as_tensor(x)
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        if x.shape[-1] != spec.colors:
            raise DimensionError(f"model expects {spec.colors} colour channels, got {x.shape[-1]}")
        info = ForwardInfo(bank=LayerBank(), feature_size=x.shape[1:3])
        gates = None
        if self.arch is not None:
            gates = self.arch.gates(ctx.arch_tau, ctx.train and ctx.arch_noise, ctx.arch_rng)
            info.gates = gates
        gate_of = {pos: gates[i] for i, pos in enumerate(spec.positions)} if gates is not None else {}
        key_gating = KeyGating(tau=ctx.key_tau, train=ctx.train, rng=ctx.key_rng, force_on=ctx.force_masks_on)

        feat = conv3x3(x, p["head.w"], p["head.b"])
        for i in range(1, spec.blocks + 1):
            r = relu(conv3x3(feat, p[f"block{i}.conv1.w"], p[f"block{i}.conv1.b"]))
            feat = conv3x3(r, p[f"block{i}.conv2.w"], p[f"block{i}.conv2.b"]) + feat
            if not self.attention:
                continue
            info.bank.append(feat, i, active=i in self.attention)
            if i not in self.attention:
                continue
            att = self.attention[i]
            if spec.variant == "nl":
                y = nl_forward(feat, att)
            elif spec.variant == "clnl":
                y = clnl_forward(info.bank, i, att, spec.max_refs)
            else:
                layer_gates = {q: gate_of[q] for q in att.refs} if gate_of else None
                if spec.variant == "cla":
                    y, trace = cla_forward(info.bank, i, att, spec.k, spec.max_refs, layer_gates)
                else:
                    y, trace = acla_forward(info.bank, i, att, key_gating, layer_gates, max_refs=spec.max_refs)
                info.traces[i] = trace
                info.occupancy[i] = trace.occupancy
            feat = block_wrap(feat, y, att, gate_of.get(i))

        if spec.scale > 1:
            up = conv3x3(feat, p["tail.up.w"], p["tail.up.b"])
            feat = pixel_shuffle(up, spec.scale)
            return conv3x3(feat, p["tail.out.w"], p["tail.out.b"]), info
        out = conv3x3(feat, p["tail.out.w"], p["tail.out.b"]) + x
        return out, info

    __call__ = forward

    def predict(self, x, ctx=None):
        out, _ = self.forward(x, ctx)
        return out.data

    # costs ----------------------------------------------------------------------
    def attention_cost(self, info, gates=None, corrected=False):
        """Gated cost of all attention modules from one forward pass.

        Uses the relaxed gates and the straight-through mask occupancies so
        the result is differentiable; returns ``(total, per_module)``.
        """
        spec = self.spec
        h, w = info.feature_size
        n, c, k = h * w, spec.channels, spec.k
        if gates is None:
            gates = info.gates
        gate_of = {pos: (gates[i] if gates is not None else 1.0) for i, pos in enumerate(spec.positions)}
        total, per_module = 0.0, {}
        for j, att in self.attention.items():
            if spec.variant not in ("cla", "acla"):
                continue
            occ = info.occupancy[j]
            layer_gates = [gate_of[q] for q in att.refs]
            if isinstance(gates, Tensor):
                lg = concat([g.reshape(1) for g in layer_gates], axis=0)
            else:
                lg = np.asarray(layer_gates, dtype=np.float64)
            mask_term, proj_term = module_cost_terms(lg, occ, n, c, k, corrected)
            cost_j = (mask_term + proj_term).sum()
            per_module[j] = cost_j
            total = total + gate_of[j] * cost_j
        return total, per_module

    def backbone_layers(self):
        spec = self.spec
        c = spec.channels
        layers = [(spec.colors, c, 3)] + [(c, c, 3)] * (2 * spec.blocks)
        sizes = [1.0] * len(layers)
        if spec.scale > 1:
            layers.append((c, c * spec.scale ** 2, 3))
            sizes.append(1.0)
        layers.append((c, spec.colors, 3))
        sizes.append(float(spec.scale ** 2))
        return layers, sizes

    def backbone_flops(self, height, width):
        layers, sizes = self.backbone_layers()
        n = height * width
        return backbone_flops(layers, [n * s for s in sizes])

    def derive(self, positions, variant=None):
        """A fresh spec with attention only at ``positions``."""
        return replace(self.spec, supernet=False, positions=tuple(positions),
                       variant=variant or self.spec.variant)
