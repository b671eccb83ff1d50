"""Acceptance criteria, one test each.

The fast criteria rerun the same checks as the unit tests at the stated
tolerances.  Criteria 5, 6, 7 and 10 run desk-scale experiments through the
CLI commands and take tens of minutes on one core; run them alone with
``pytest tests/test_acceptance.py -m slow``.

A summary line per criterion is printed at the end of the pytest report.
"""

import csv
import statistics
import time
from collections import defaultdict

import numpy as np
import pytest

import test_attention
import test_cli
import test_cost
import test_gating
import test_io
import test_restoration
import test_sampler
import test_search
import test_tensor
from acla.attention import KeyGating, acla_forward, cla_forward, clnl_forward, nl_forward
from acla.cli import cmd_search, cmd_train, cmd_visualize_keys
from acla.cost import module_cost
from acla.gating import ArchState, gumbel_pair, harden
from acla.io.checkpoint import load_checkpoint
from acla.io.config import preset
from acla.io.images import read_image, write_image
from acla.restoration.data import load_dataset
from acla.restoration.metrics import psnr, ssim
from acla.restoration.model import ModelSpec, RestorationNet
from acla.restoration.train import mean_occupancy

DESK_SEEDS = (0, 1, 2)
DESK_VARIANTS = ("baseline", "cla", "acla")


def criterion(number, title):
    return pytest.mark.criterion(number, title)


# fast criteria -----------------------------------------------------------------------


@criterion(1, "finite-difference gradient suite, 20 instances per op, under 2 min")
def test_gradient_suite():
    checks = {
        "conv1x1": test_tensor.test_grad_conv1x1,
        "conv3x3": test_tensor.test_grad_conv3x3,
        "softmax": test_tensor.test_grad_softmax,
        "sigmoid": test_tensor.test_grad_sigmoid,
        "bilinear sampling": test_sampler.test_gradients_away_from_kinks,
        "soft mask": test_gating.test_soft_mask_gradient,
        "acla end to end": test_attention.test_acla_end_to_end_gradient,
        "search loss": test_search.TestSearchLoss().test_gradient,
    }
    start = time.perf_counter()
    for check in checks.values():
        for seed in range(20):
            check(seed)
    elapsed = time.perf_counter() - start
    print(f"gradient suite: {len(checks)} ops x 20 instances in {elapsed:.1f} s")
    assert elapsed < 120


@criterion(2, "NL/CLNL/CLA oracles within 1e-10, ACLA all-on equals CLA within 1e-12")
def test_oracle_equivalence():
    ta = test_attention
    for seed, shape in enumerate([(3, 3, 2), (4, 5, 3), (6, 6, 4)]):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=shape)
        p = ta.AttentionParams("nl", shape[2], [1], rng=rng)
        p.g_b.data[...] = rng.normal(size=shape[2])
        assert np.abs(nl_forward(x, p).data - ta.nl_oracle(x, [x], p)).max() < 1e-10

        bank = ta.make_bank(rng, shape, layers=3)
        p = ta.AttentionParams("clnl", shape[2], [1, 2, 3], rng=rng)
        maps = [bank.at(q).data for q in (1, 2, 3)]
        assert np.abs(clnl_forward(bank, 3, p).data - ta.nl_oracle(maps[2], maps, p)).max() < 1e-10

        bank = ta.make_bank(rng, shape, layers=2)
        p = ta.sampled_params(rng, "cla", shape[2], [1, 2], 3)
        y, _ = cla_forward(bank, 2, p, 3)
        maps = {q: bank.at(q).data for q in (1, 2)}
        assert np.abs(y.data - ta.sampled_oracle(maps, maps[2], p)).max() < 1e-10

        pa = ta.acla_params(rng, shape[2], [1, 2], 3)
        y_acla, trace = acla_forward(bank, 2, pa, KeyGating(force_on=True), arch={1: 1.0, 2: 1.0})
        y_cla, _ = cla_forward(bank, 2, ta.copy_sampled(pa, "cla", rng), 3)
        assert trace.mask.min() == 1.0
        assert np.abs(y_acla.data - y_cla.data).max() <= 1e-12


@criterion(3, "integer cost on 10 random cases and 320/256/0, monotone in masks and gates")
def test_cost_exactness():
    assert (module_cost([1], [[1, 1]], 4, 2, 2), module_cost([1], [[0, 0]], 4, 2, 2),
            module_cost([0], [[1, 1]], 4, 2, 2)) == (320, 256, 0)
    cases = test_cost.TestModuleCost()
    for seed in range(10):
        cases.test_random_integer_cases(seed)
    cases.test_exhaustive_monotonicity()


@criterion(4, "harden boundary, derive set at three temperatures, Gumbel mean")
def test_gate_semantics():
    assert harden(0.5) == 0.0 and harden(0.5 + 1e-12) == 1.0
    arch = ArchState([1, 2, 3, 4], np.array([2.0, -1.5, 0.3, -1e-3]))
    for tau in (1.0, 0.5, 0.1):
        kept = [p for p, s in zip(arch.positions, arch.soft_values(tau)) if s > 0.5]
        assert kept == arch.derived() == [1, 3]
    e1, e2 = gumbel_pair(np.random.default_rng(0), (100_000,))
    assert abs(e1.mean() - 0.5772) < 0.02 and abs(e2.mean() - 0.5772) < 0.02


@criterion(8, "PSNR closed form, SSIM identity and reference within 1e-9")
def test_metric_correctness():
    assert psnr(np.zeros((8, 8)), np.full((8, 8), 0.1)) == 20.0
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(20, 20))
    assert abs(ssim(a, a) - 1.0) < 1e-9
    for seed in range(10):
        test_restoration.TestMetrics().test_ssim_reference(seed)


@criterion(9, "bit-identical seeded runs, checkpoint round trip, resume equals uninterrupted")
def test_reproducibility(tmp_path, monkeypatch):
    cli_cases = test_cli.TestSearchAndTrain()
    (tmp_path / "runs").mkdir()
    cli_cases.test_seeded_runs_bit_identical(tmp_path / "runs")
    (tmp_path / "resume").mkdir()
    cli_cases.test_resume_equals_uninterrupted(tmp_path / "resume", monkeypatch)
    (tmp_path / "search_resume").mkdir()
    cli_cases.test_search_resume(tmp_path / "search_resume", monkeypatch)
    (tmp_path / "ckpt").mkdir()
    test_io.TestCheckpoint().test_round_trip_bit_identical(tmp_path / "ckpt", np.random.default_rng(0))


# desk-scale experiments --------------------------------------------------------------


@pytest.fixture(scope="session")
def desk_training(tmp_path_factory):
    """Train baseline, CLA and ACLA on the desk denoising preset for three seeds."""
    root = tmp_path_factory.mktemp("desk")
    runs = {}
    start = time.perf_counter()
    for seed in DESK_SEEDS:
        for variant in DESK_VARIANTS:
            cfg = preset(f"desk-denoise-{variant}")
            cfg.experiment.seed = seed
            out = root / f"{variant}_{seed}"
            t0 = time.perf_counter()
            _, state = cmd_train(cfg, out)
            runs[variant, seed] = {"psnr": state.trace[-1]["val_psnr"], "dir": out,
                                   "seconds": time.perf_counter() - t0}
    return runs, time.perf_counter() - start


@pytest.mark.slow
@criterion(5, "search isolation, lambda 1e3 keeps <=1 and lambda 0 keeps >=half over 3 seeds, <20 min each")
def test_search_mechanics(tmp_path):
    for lam in (1e3, 0.0):
        for seed in DESK_SEEDS:
            cfg = preset("desk-denoise-search")
            cfg.experiment.seed = seed
            cfg.search.lam = lam
            t0 = time.perf_counter()
            result = cmd_search(cfg, tmp_path / f"lam{lam:g}_{seed}")
            elapsed = time.perf_counter() - t0
            steps = len(result.trace) // cfg.search.stage2_epochs
            expected_checks = steps * (cfg.search.stage1_epochs + 2 * cfg.search.stage2_epochs)
            print(f"lambda {lam:g} seed {seed}: kept {result.derived}, {elapsed:.0f} s")
            assert result.state.isolation_checks == expected_checks
            candidates = len(result.supernet.arch.positions)
            if lam == 0.0:
                assert 2 * len(result.derived) >= candidates, f"lambda 0 seed {seed} kept {result.derived}"
            else:
                assert len(result.derived) <= 1, f"lambda {lam:g} seed {seed} kept {result.derived}"
            assert elapsed < 20 * 60


@pytest.mark.slow
@criterion(6, "desk denoising median PSNR: ACLA >= CLA - 0.02 dB, CLA >= baseline + 0.05 dB, <45 min")
def test_desk_efficacy(desk_training):
    runs, total = desk_training
    median = {v: statistics.median(runs[v, s]["psnr"] for s in DESK_SEEDS) for v in DESK_VARIANTS}
    for seed in DESK_SEEDS:
        print(f"seed {seed}: " + ", ".join(f"{v} {runs[v, seed]['psnr']:.3f}" for v in DESK_VARIANTS))
    print("median: " + ", ".join(f"{v} {median[v]:.3f}" for v in DESK_VARIANTS) + f"; {total / 60:.1f} min")
    assert median["acla"] >= median["cla"] - 0.02
    assert median["cla"] >= median["baseline"] + 0.05
    assert total < 45 * 60


def _load(run_dir):
    ckpt = load_checkpoint(run_dir / "train.ckpt")
    model = RestorationNet(ModelSpec.from_dict(ckpt.spec))
    model.load_arrays(ckpt.params)
    return model


@pytest.mark.slow
@criterion(7, "mean hard-mask occupancy after desk ACLA training is below 1")
def test_adaptivity(desk_training):
    runs, _ = desk_training
    val = load_dataset("denoise").val
    for seed in DESK_SEEDS:
        occupancy = mean_occupancy(_load(runs["acla", seed]["dir"]), val)
        print(f"seed {seed}: occupancy {occupancy:.4f}")
        assert occupancy < 1.0


@pytest.mark.slow
@criterion(10, "key CSV has <=K rows per module/layer, weights sum <=1, markers match rows")
def test_visualization_contract(desk_training, tmp_path):
    runs, _ = desk_training
    ckpt = runs["acla", 0]["dir"] / "train.ckpt"
    k = load_checkpoint(ckpt).spec["k"]
    image = tmp_path / "query.ppm"
    write_image(image, load_dataset("denoise").val[0][0].clip(0, 1))
    h, w = read_image(image).shape[:2]
    for i, (row, col) in enumerate([(0, 0), (h // 2, w // 3), (h - 1, w - 1)]):
        for forced in (False, True):
            out = tmp_path / f"q{i}_{forced}"
            result = cmd_visualize_keys(out, ckpt, image, row, col, force_masks_on=forced)
            with open(out / "keys.csv", newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
            assert len(rows) == len(result.rows)
            groups, per_module = defaultdict(list), defaultdict(float)
            for r in rows:
                groups[int(r["module"]), int(r["layer"])].append(r)
                per_module[int(r["module"])] += float(r["weight"])
            assert all(len(g) <= k for g in groups.values())
            if forced:
                assert all(len(result.markers[key]) == k for key in result.images)
            assert all(total <= 1 + 1e-6 for total in per_module.values())
            for key, centres in result.markers.items():
                drawn = groups.get(key, [])
                assert len(centres) == len(drawn)
                picture = read_image(result.images[key])
                for (cy, cx), r in zip(centres, drawn):
                    assert (cy, cx) == (int(round(float(r["row"]) * 4)) + 2, int(round(float(r["col"]) * 4)) + 2)
                    # the circle around each centre is drawn in green
                    ring = picture[max(cy - 6, 0):cy + 7, max(cx - 6, 0):cx + 7]
                    assert np.any((ring[..., 1] > 0.25) & (ring[..., 0] == 0) & (ring[..., 2] == 0))
