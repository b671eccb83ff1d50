"""FLOPs accounting for inserted attention modules and the backbone.

The per-module count follows the search regularizer literally: for every
referred layer ``l`` and every key slot ``k``

    2*m*N*C^2 + 2*N*C^2 + 6*K*N*C

where ``m`` is the (mean) key-mask occupancy.  ``corrected=True`` moves the
two projection terms out of the key sum so they are counted once per layer.
Every function accepts plain numbers/arrays or :class:`~acla.tensor.Tensor`
gates and masks; tensors keep the result differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .tensor import Tensor

__all__ = ["CostReport", "module_cost", "module_cost_terms", "total_cost", "backbone_flops"]


def _check_sizes(n, c, k):
    for name, v in (("N", n), ("C", c), ("K", k)):
        if v < 1:
            raise DomainError(f"{name} must be >= 1, got {v}")


def _sum(x, axis=None):
    if isinstance(x, Tensor):
        return x.sum(axis=axis)
    return np.sum(x, axis=axis)


def module_cost_terms(gates, masks, n, c, k, corrected=False):
    """Mask-conv and projection parts of one module's cost, before summation.

    ``gates`` has one entry per referred layer; ``masks`` is ``(layers, K)``.
    """
    _check_sizes(n, c, k)
    if not isinstance(masks, Tensor):
        masks = np.asarray(masks, dtype=np.float64)
    if not isinstance(gates, Tensor):
        gates = np.asarray(gates, dtype=np.float64)
    if masks.shape[-1] != k or masks.shape[0] != gates.shape[0]:
        raise DimensionError(f"masks {masks.shape} vs gates {gates.shape} and K={k}")
    nc2 = float(n * c * c)
    proj = 2.0 * nc2 + 6.0 * k * n * c
    mask_term = _sum(masks * (2.0 * nc2), axis=-1) * gates
    proj_term = gates * (proj if corrected else proj * k)
    return mask_term, proj_term


def module_cost(gates, masks, n, c, k, corrected=False):
    mask_term, proj_term = module_cost_terms(gates, masks, n, c, k, corrected)
    return _sum(mask_term + proj_term)


def total_cost(gates, costs):
    """``sum_j s_j * cost_j``."""
    if len(gates) != len(costs):
        raise DimensionError("one cost per gate required")
    total = 0.0
    for j in range(len(costs)):
        total = total + gates[j] * costs[j]
    return total


def backbone_flops(layers, n):
    """``sum 2*N*C_in*C_out*k^2`` over ``(c_in, c_out, kernel)`` conv layers.

    ``n`` is the spatial size each conv runs at, either one value for all
    layers or one per layer.
    """
    ns = [n] * len(layers) if np.isscalar(n) else list(n)
    return float(sum(2 * nn * ci * co * ks * ks for (ci, co, ks), nn in zip(layers, ns)))


@dataclass
class CostReport:
    """Per-position costs and their gated total (FLOPs)."""

    positions: list
    gates: list
    module_costs: list
    mask_flops: list
    projection_flops: list
    backbone: float = 0.0
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(total_cost(self.gates, self.module_costs))
        if min([self.backbone, *self.module_costs, *self.mask_flops, *self.projection_flops], default=0) < 0:
            raise DomainError("cost components must be non-negative")

    def as_rows(self):
        rows = [
            {"position": p, "gate": g, "cost": c, "mask_flops": m, "projection_flops": q}
            for p, g, c, m, q in zip(
                self.positions, self.gates, self.module_costs, self.mask_flops, self.projection_flops
            )
        ]
        rows.append({"position": "total", "gate": "", "cost": self.total, "mask_flops": "", "projection_flops": ""})
        rows.append({"position": "backbone", "gate": "", "cost": self.backbone, "mask_flops": "", "projection_flops": ""})
        return rows
