"""Non-local, cross-layer non-local, cross-layer and adaptive cross-layer attention.

All variants read their keys from a :class:`LayerBank` of feature maps taken
at candidate insert positions.  A query at position ``j`` refers to the
active bank entries at positions ``<= j``.

* ``nl``/``clnl``: embedded-Gaussian affinities (softmax of dot products of
  two learned 1x1 projections) over every position of every referred layer.
* ``cla``: ``K`` keys per referred layer sampled bilinearly at learned
  offsets from the query position; weights come from the query alone via one
  1x1 conv per referred layer and a softmax taken jointly over all layers.
* ``acla``: ``cla`` plus a per-key hard mask from a mask unit on the sampled
  key feature, and optional per-layer architecture gates.  Masked keys are
  dropped without renormalising the remaining weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .gating import harden, soft_mask
from .sampler import sample_bilinear
from .tensor import Tensor, as_tensor, concat, conv1x1, softmax

__all__ = [
    "VARIANTS",
    "LayerBank",
    "AttentionParams",
    "KeyGating",
    "KeySample",
    "KeyTrace",
    "nl_forward",
    "clnl_forward",
    "cla_forward",
    "acla_forward",
    "block_wrap",
    "initial_offsets",
    "OFFSET_LAYOUTS",
]

VARIANTS = ("nl", "clnl", "cla", "acla")


@dataclass
class LayerBank:
    """Feature maps ``x^1..x^L`` (all ``(B, H, W, C)``) keyed by 1-based position."""

    maps: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    active: list = field(default_factory=list)

    def append(self, fmap, position=None, active=True):
        fmap = as_tensor(fmap)
        if self.maps and fmap.shape != self.maps[0].shape:
            raise DimensionError(f"bank entries must share a shape: {fmap.shape} vs {self.maps[0].shape}")
        position = len(self.maps) + 1 if position is None else int(position)
        if self.positions and position <= self.positions[-1]:
            raise ContractError("bank positions must increase with depth")
        self.maps.append(fmap)
        self.positions.append(position)
        self.active.append(bool(active))

    def __len__(self):
        return len(self.maps)

    def at(self, position):
        return self.maps[self.positions.index(position)]

    def referred(self, j, max_refs=None):
        """Active ``(position, map)`` pairs with position ``<= j``, shallowest first."""
        if not self.maps:
            raise ContractError("empty layer bank")
        if j not in self.positions:
            raise ContractError(f"position {j} is not in the bank")
        refs = [(p, m) for p, m, a in zip(self.positions, self.maps, self.active) if p <= j and (a or p == j)]
        if max_refs is not None:
            refs = refs[-max_refs:]
        return refs


OFFSET_LAYOUTS = ("zero", "grid")


def initial_offsets(k, layout="grid", spread=1.0):
    """Starting key offsets ``(K, 2)`` in pixels.

    ``grid`` fills the square rings of the integer lattice around the query
    (the 8 neighbours first, then the 16 at distance 2, ...) scaled by
    ``spread``; ``zero`` puts every key on the query.
    """
    if layout not in OFFSET_LAYOUTS:
        raise ContractError(f"unknown offset layout {layout!r}")
    out = np.zeros((k, 2))
    if layout == "zero":
        return out
    points = []
    ring = 1
    while len(points) < k:
        points += [(dr, dc) for dr in range(-ring, ring + 1) for dc in range(-ring, ring + 1)
                   if max(abs(dr), abs(dc)) == ring]
        ring += 1
    out[:] = points[:k]
    return out * spread


class AttentionParams:
    """Learnable projections for one attention block.

    ``refs`` lists the bank positions this block may refer to; offset and
    weight projections are kept per referred position so blocks can be
    sliced when positions are dropped.
    """

    def __init__(self, variant, channels, refs, k=8, embed=None, rng=None,
                 offset_init="grid", offset_spread=1.0, mask_bias=0.0, weight_std=None):
        if variant not in VARIANTS:
            raise ContractError(f"unknown attention variant {variant!r}")
        if variant in ("cla", "acla") and k < 1:
            raise ContractError("K must be at least 1")
        rng = np.random.default_rng(0) if rng is None else rng
        self.variant = variant
        self.channels = c = int(channels)
        self.k = int(k)
        self.refs = [int(p) for p in refs]
        self.embed = e = int(embed or max(c // 2, 1))
        std = (1.0 / np.sqrt(c)) if weight_std is None else weight_std
        t = lambda a: Tensor(a, requires_grad=True)  # noqa: E731
        self.g_w = t(rng.normal(0, std, (c, c)))
        self.g_b = t(np.zeros(c))
        self.h_w = t(np.zeros((c, c)))
        self.h_b = t(np.zeros(c))
        self.theta_w = self.phi_w = None
        self.off_w, self.off_b, self.f_w, self.f_b = {}, {}, {}, {}
        self.m_w = self.m_b = None
        if variant in ("nl", "clnl"):
            self.theta_w = t(rng.normal(0, std, (c, e)))
            self.phi_w = t(rng.normal(0, std, (c, e)))
            return
        init = initial_offsets(k, offset_init, offset_spread).reshape(-1)
        for p in self.refs:
            self.off_w[p] = t(np.zeros((c, 2 * k)))
            self.off_b[p] = t(init.copy())
            self.f_w[p] = t(rng.normal(0, 0.1 * std, (c, k)))
            self.f_b[p] = t(np.zeros(k))
        if variant == "acla":
            self.m_w = t(rng.normal(0, 0.1 * std, (c,)))
            self.m_b = t(np.array([float(mask_bias)]))

    def named(self):
        """Parameters by stable name; per-layer blocks carry their bank position."""
        out = {"g.w": self.g_w, "g.b": self.g_b, "h.w": self.h_w, "h.b": self.h_b}
        if self.theta_w is not None:
            out["theta.w"] = self.theta_w
            out["phi.w"] = self.phi_w
        for p in self.off_w:
            out[f"off.{p}.w"] = self.off_w[p]
            out[f"off.{p}.b"] = self.off_b[p]
            out[f"f.{p}.w"] = self.f_w[p]
            out[f"f.{p}.b"] = self.f_b[p]
        if self.m_w is not None:
            out["m.w"] = self.m_w
            out["m.b"] = self.m_b
        return out


@dataclass
class KeyGating:
    """How ACLA key masks are evaluated for one forward pass."""

    tau: float = 1.0
    train: bool = False
    rng: object = None
    force_on: bool = False


@dataclass
class KeySample:
    """One sampled key for one query."""

    layer: int
    key: int
    offset: tuple
    position: tuple
    weight: float
    beta: float
    mask: int
    value: np.ndarray = None


@dataclass
class KeyTrace:
    """Per-key arrays of one CLA/ACLA forward pass, each indexed ``[b, h, w, layer, k]``."""

    layers: list
    offsets: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    beta: np.ndarray
    soft: np.ndarray
    mask: np.ndarray
    occupancy: Tensor = None

    def records(self, row, col, batch=0, bank=None):
        """KeySample records for one query; sampled values need the bank."""
        out = []
        for li, layer in enumerate(self.layers):
            for k in range(self.weights.shape[-1]):
                r = float(self.rows[batch, row, col, li, k])
                c = float(self.cols[batch, row, col, li, k])
                value = None
                if bank is not None:
                    fmap = _batched(bank.at(layer))[0].data[batch:batch + 1]
                    value = sample_bilinear(fmap, np.array([[r]]), np.array([[c]])).data[0, 0]
                out.append(KeySample(
                    layer=layer, key=k,
                    offset=tuple(self.offsets[batch, row, col, li, k]),
                    position=(r, c),
                    weight=float(self.weights[batch, row, col, li, k]),
                    beta=float(self.beta[batch, row, col, li, k]),
                    mask=int(self.mask[batch, row, col, li, k]),
                    value=value,
                ))
        return out


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected (H, W, C) or (B, H, W, C), got {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return y.reshape(y.shape[1:]) if squeeze else y


def _embedded_gaussian(query, maps, params):
    b, h, w, c = query.shape
    n = h * w
    e = params.embed
    theta = conv1x1(query, params.theta_w).reshape(b, n, e)
    phi = concat([conv1x1(m, params.phi_w).reshape(b, n, e) for m in maps], axis=1)
    g = concat([conv1x1(m, params.g_w, params.g_b).reshape(b, n, c) for m in maps], axis=1)
    attn = softmax(theta @ phi.transpose(0, 2, 1), axis=-1)
    return (attn @ g).reshape(b, h, w, c)


def nl_forward(x, params):
    """Non-local attention of a map onto itself."""
    xb, squeeze = _batched(x)
    return _unbatch(_embedded_gaussian(xb, [xb], params), squeeze)


def clnl_forward(bank, j, params, max_refs=None):
    """Query layer ``j`` attends to every position of every referred layer."""
    refs = bank.referred(j, max_refs)
    squeeze = bank.at(j).ndim == 3
    maps = [_batched(m)[0] for _, m in refs]
    query = _batched(bank.at(j))[0]
    return _unbatch(_embedded_gaussian(query, maps, params), squeeze)


def _sampled_attention(bank, j, params, k, gating=None, arch=None, max_refs=None):
    if k < 1:
        raise ContractError("K must be at least 1")
    if k != params.k:
        raise DimensionError(f"params were built for K={params.k}, got K={k}")
    refs = bank.referred(j, max_refs)
    query, squeeze = _batched(bank.at(j))
    b, h, w, c = query.shape
    n_ref = len(refs)
    adaptive = gating is not None
    for p, _ in refs:
        if p not in params.off_w:
            raise ContractError(f"no projections for referred position {p}")

    logits = concat([conv1x1(query, params.f_w[p], params.f_b[p]) for p, _ in refs], axis=-1)
    weights = softmax(logits, axis=-1).reshape(b, h, w, n_ref, k)
    grid_r = np.arange(h, dtype=np.float64).reshape(1, h, 1, 1)
    grid_c = np.arange(w, dtype=np.float64).reshape(1, 1, w, 1)

    y = None
    offs, rows_all, cols_all, betas, softs, masks, occ = [], [], [], [], [], [], []
    for li, (p, xl) in enumerate(refs):
        xl = _batched(xl)[0]
        off = conv1x1(query, params.off_w[p], params.off_b[p]).reshape(b, h, w, k, 2)
        rows = off[..., 0] + grid_r
        cols = off[..., 1] + grid_c
        vmap = conv1x1(xl, params.g_w, params.g_b)
        if adaptive:
            beta_map = conv1x1(xl, params.m_w.reshape(c, 1), params.m_b)
            vmap = concat([vmap, beta_map], axis=-1)
        sampled = sample_bilinear(vmap, rows, cols)
        wl = weights[:, :, :, li, :]
        if adaptive:
            values = sampled[..., :c]
            beta = sampled[..., c]
            if gating.force_on:
                m_soft = Tensor(np.ones(beta.shape))
                m = m_soft
            else:
                m_soft = soft_mask(beta, gating.tau, gating.train, gating.rng)
                m = harden(m_soft)
            wl = wl * m
            betas.append(beta.data)
            softs.append(m_soft.data)
            masks.append(m.data)
            occ.append(m.mean(axis=(0, 1, 2)).reshape(1, k))
        else:
            values = sampled
        contrib = (wl.reshape(b, h, w, k, 1) * values).sum(axis=3)
        if arch is not None and arch.get(p) is not None:
            contrib = contrib * arch[p]
        y = contrib if y is None else y + contrib
        offs.append(off.data)
        rows_all.append(rows.data)
        cols_all.append(cols.data)

    stack = lambda arrs: np.stack(arrs, axis=3)  # noqa: E731
    ones = np.ones((b, h, w, n_ref, k))
    trace = KeyTrace(
        layers=[p for p, _ in refs],
        offsets=stack(offs),
        rows=stack(rows_all),
        cols=stack(cols_all),
        weights=weights.data,
        beta=stack(betas) if adaptive else np.full_like(ones, np.nan),
        soft=stack(softs) if adaptive else ones,
        mask=stack(masks) if adaptive else ones,
        occupancy=concat(occ, axis=0) if adaptive else Tensor(np.ones((n_ref, k))),
    )
    return _unbatch(y, squeeze), trace


def cla_forward(bank, j, params, k, max_refs=None, arch=None):
    """Cross-layer attention with ``k`` sampled keys per referred layer.

    Returns ``(output, KeyTrace)``; trace arrays always carry a batch axis.
    """
    return _sampled_attention(bank, j, params, k, None, arch, max_refs)


def acla_forward(bank, j, params, gating, arch=None, k=None, max_refs=None):
    """Adaptive cross-layer attention.

    ``arch`` maps referred positions to layer gates ``s_l`` (floats or
    scalar tensors); missing entries mean an ungated layer.
    """
    if params.variant != "acla":
        raise ContractError("acla_forward needs ACLA parameters (with a mask unit)")
    return _sampled_attention(bank, j, params, params.k if k is None else k, gating, arch, max_refs)


def block_wrap(x, y, params, gate=None):
    """Residual wrapper ``x + h(y)``, optionally scaled ``x + gate * h(y)``."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"block input {x.shape} and attention output {y.shape} differ")
    hy = conv1x1(y, params.h_w, params.h_b)
    if gate is not None:
        hy = hy * gate
    return hy + x
