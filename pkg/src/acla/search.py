"""Two-stage cost-regularised search for attention insert positions.

Stage 1 trains only the supernet weights on MSE.  Stage 2 alternates, batch
by batch, one weight step on the train split and one architecture step on
the validation split, both on ``MSE + lam * ln(cost)``, while the gate
temperature decays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError
from .gating import TemperatureSchedule, temperature
from .restoration.data import split_indices
from .restoration.model import ForwardContext, RestorationNet
from .restoration.optim import AdamState, adam_step, lr_schedule
from .restoration.train import TrainSettings, evaluate, train
from .tensor import as_tensor, backward, floor_min, log, mse

__all__ = [
    "COST_FLOOR",
    "SearchSettings",
    "SearchState",
    "SearchResult",
    "build_supernet",
    "search_loss",
    "run_search",
    "derive_arch",
    "derived_model",
    "warm_start",
    "cross_validate_lambda",
    "SEARCH_LOG_COLUMNS",
]

COST_FLOOR = 1.0
SEARCH_LOG_COLUMNS = ("epoch", "step", "tau", "lr", "gates", "cost", "train_loss", "val_loss")


@dataclass
class SearchSettings:
    stage1_epochs: int = 20
    stage2_epochs: int = 20
    batch: int = 8
    patch: int = 32
    lr: float = 1e-4
    arch_lr: float = 1e-2
    tau_start: float = 1.0
    tau_end: float = 0.1
    val_fraction: float = 0.2
    patches_per_image: int = 1
    arch_noise: bool = True
    corrected_cost: bool = False

    @property
    def total_epochs(self):
        return self.stage1_epochs + self.stage2_epochs

    @property
    def schedule(self):
        return TemperatureSchedule(self.stage1_epochs, self.stage2_epochs, self.tau_start, self.tau_end)


@dataclass
class SearchState:
    """Optimizer moments, RNG streams and logs; enough to resume a search mid-way."""

    weight_adam: AdamState = field(default_factory=AdamState)
    arch_adam: AdamState = field(default_factory=AdamState)
    rngs: dict = field(default_factory=dict)
    epoch: int = 0
    trace: list = field(default_factory=list)
    isolation_checks: int = 0

    @classmethod
    def fresh(cls, seed):
        names = ("data", "keys", "arch")
        streams = np.random.SeedSequence(seed).spawn(len(names))
        return cls(rngs={n: np.random.default_rng(s) for n, s in zip(names, streams)})


@dataclass
class SearchResult:
    supernet: RestorationNet
    state: SearchState
    derived: list
    train_indices: list
    val_indices: list

    @property
    def trace(self):
        return self.state.trace


def build_supernet(spec, rng=None):
    """An ACLA module after every residual block, one zero architecture logit each."""
    if spec.blocks < 1:
        raise ConfigError("model.blocks", "a supernet needs at least one candidate position")
    spec = replace(spec, variant="acla", supernet=True)
    return RestorationNet(spec, rng)


def search_loss(pred, target, cost, lam):
    """``MSE + lam * ln(max(cost, 1))``; plain MSE when ``lam == 0``."""
    loss = mse(pred, target)
    if lam == 0:
        return loss
    return loss + float(lam) * log(floor_min(as_tensor(cost), COST_FLOOR))


def derive_arch(arch):
    """Kept positions: noise-free gate above 0.5, i.e. positive logit."""
    return arch.derived()


def _signature(params):
    return [p.data.copy() for p in params.values()]


def _unchanged(before, params):
    return all(np.array_equal(b, p.data) for b, p in zip(before, params.values()))


def _step(model, inp, tgt, ctx, lam, corrected):
    model.zero_grad()
    out, info = model.forward(inp, ctx)
    cost, _ = model.attention_cost(info, corrected=corrected)
    loss = search_loss(out, tgt, cost, lam)
    if not np.isfinite(loss.data):
        raise DivergenceError(f"non-finite search loss {float(loss.data)}")
    backward(loss)
    return float(loss.data), float(as_tensor(cost).data)


def run_search(supernet, data, settings, lam, seed=0, state=None, on_epoch=None):
    """Search on ``data.train`` split 80/20 into weight and architecture halves.

    Returns a :class:`SearchResult` whose ``trace`` holds one record per
    stage-2 step.  Parameter isolation between the two optimizers is checked
    after every step and a :class:`ContractError` is raised if it breaks.
    """
    if supernet.arch is None:
        raise ContractError("run_search needs a supernet")
    state = SearchState.fresh(seed) if state is None else state
    # the split depends on the seed alone so a resumed search sees the same halves
    train_idx, val_idx = split_indices(len(data.train), settings.val_fraction, np.random.default_rng(seed))
    if not train_idx or not val_idx:
        raise ConfigError("data", "search needs at least two training images for its train/val split")
    train_items = [data.train[i] for i in train_idx]
    val_items = [data.train[i] for i in val_idx]
    weights, arch = supernet.weights(), supernet.arch_params()
    total = settings.total_epochs
    sched = settings.schedule

    while state.epoch < total:
        epoch = state.epoch
        tau = temperature(epoch, sched)
        lr = lr_schedule(epoch, "search", total, settings.lr)
        arch_lr = lr_schedule(epoch, "search", total, settings.arch_lr)
        ctx = ForwardContext(train=True, key_tau=tau, key_rng=state.rngs["keys"], arch_tau=tau,
                             arch_rng=state.rngs["arch"], arch_noise=settings.arch_noise)
        batches = data.epoch_batches(settings.patch, settings.batch, state.rngs["data"], train_items,
                                     settings.patches_per_image)
        if epoch < settings.stage1_epochs:
            for inp, tgt in batches:
                before = _signature(arch)
                _step(supernet, inp, tgt, ctx, 0.0, settings.corrected_cost)
                adam_step(weights, {k: t.grad for k, t in weights.items()}, state.weight_adam, lr)
                if not _unchanged(before, arch):
                    raise ContractError("architecture logits moved during stage 1")
                state.isolation_checks += 1
        else:
            val_batches = list(data.epoch_batches(settings.patch, settings.batch, state.rngs["data"], val_items,
                                                  settings.patches_per_image))
            for i, (inp, tgt) in enumerate(batches):
                before = _signature(arch)
                train_loss, cost = _step(supernet, inp, tgt, ctx, lam, settings.corrected_cost)
                adam_step(weights, {k: t.grad for k, t in weights.items()}, state.weight_adam, lr)
                if not _unchanged(before, arch):
                    raise ContractError("a weight step changed the architecture logits")

                vin, vtgt = val_batches[i % len(val_batches)]
                before = _signature(weights)
                val_loss, _ = _step(supernet, vin, vtgt, ctx, lam, settings.corrected_cost)
                adam_step(arch, {k: t.grad for k, t in arch.items()}, state.arch_adam, arch_lr)
                if not _unchanged(before, weights):
                    raise ContractError("an architecture step changed the weights")
                state.isolation_checks += 2

                state.trace.append({
                    "epoch": epoch, "step": len(state.trace), "tau": tau, "lr": lr,
                    "gates": supernet.arch.soft_values(tau).tolist(), "cost": cost,
                    "train_loss": train_loss, "val_loss": val_loss,
                })
        state.epoch += 1
        if on_epoch is not None:
            on_epoch(state)
    return SearchResult(supernet, state, derive_arch(supernet.arch), train_idx, val_idx)


def warm_start(model, source):
    """Copy every parameter of ``source`` whose name and shape match one in ``model``."""
    arrays = {name: t.data for name, t in source.weights().items()}
    return model.load_arrays(arrays, strict=False)


def derived_model(supernet, positions, rng=None, warm=True):
    """A fresh network with attention only at ``positions``, optionally warm-started."""
    spec = supernet.derive(positions)
    if not positions:
        spec = replace(spec, variant="none")
    model = RestorationNet(spec, rng)
    if warm:
        warm_start(model, supernet)
    return model


def cross_validate_lambda(candidates, data, spec, search_settings, train_settings=None, seed=0):
    """Pick the cost weight whose derived, retrained model scores best on a held-out slice.

    The search uses 20% of the training images and scoring a further 10%
    (at least one image each, and two for the search so it can split).
    Ties go to the larger weight.  Returns ``(best, scores)``.
    """
    candidates = sorted(float(c) for c in candidates)
    if not candidates:
        raise ConfigError("search.lambda_candidates", "no candidates given")
    if len(candidates) == 1:
        return candidates[0], {}
    n = len(data.train)
    if n < 3:
        raise ConfigError("data", "cross-validation needs at least three training images")
    order = np.random.default_rng(seed).permutation(n)
    n_search = max(2, int(round(0.2 * n)))
    n_eval = max(1, int(round(0.1 * n)))
    search_part = data.subset(sorted(order[:n_search].tolist()))
    held_out = data.make_val([data.train[i] for i in sorted(order[n_search:n_search + n_eval].tolist())], seed)
    search_part.val = held_out
    train_settings = TrainSettings() if train_settings is None else train_settings

    scores = {}
    for lam in candidates:
        supernet = build_supernet(spec, np.random.default_rng(seed))
        result = run_search(supernet, search_part, search_settings, lam, seed)
        model = derived_model(supernet, result.derived, np.random.default_rng(seed))
        train(model, search_part, train_settings, seed)
        scores[lam] = evaluate(model, held_out)[0]
    best = max(candidates, key=lambda lam: (scores[lam], lam))
    return best, scores

