import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import correlate

from acla.errors import DimensionError, DomainError
from acla.restoration.data import Dataset, augment, dihedral, load_dataset, split_indices, synthetic_image
from acla.restoration.degrade import BAYER_RGGB, cubic_kernel, degrade_awgn, degrade_bicubic_down, degrade_mosaic
from acla.restoration.metrics import PSNR_CAP, psnr, ssim, to_luminance
from acla.restoration.model import ForwardContext, ModelSpec, RestorationNet
from acla.restoration.optim import AdamState, adam_step, lr_schedule
from acla.restoration.train import TrainSettings, TrainState, evaluate, train
from acla.tensor import conv3x3, pixel_shuffle


# degradations ------------------------------------------------------------------

class TestAwgn:
    def test_zero_sigma_is_identity(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        assert np.array_equal(degrade_awgn(img, 0.0, rng), img)

    def test_noise_std(self):
        flat = np.full((400, 250), 0.5)
        sigma = 30 / 255
        noisy = degrade_awgn(flat, sigma, np.random.default_rng(0))
        assert abs((noisy - flat).std() / sigma - 1) < 0.05

    def test_clamped(self, rng):
        out = degrade_awgn(np.ones((50, 50)), 0.5, rng)
        assert out.max() <= 1.0 and out.min() >= 0.0

    def test_negative_sigma(self, rng):
        with pytest.raises(DomainError):
            degrade_awgn(np.zeros(3), -0.1, rng)


class TestBicubic:
    def test_constant(self):
        out = degrade_bicubic_down(np.full((12, 8, 3), 0.3), 2)
        assert out.shape == (6, 4, 3) and np.allclose(out, 0.3, atol=1e-14)

    @pytest.mark.parametrize("scale", [2, 3, 4])
    def test_shape(self, scale):
        assert degrade_bicubic_down(np.zeros((12 * scale, 6 * scale)), scale).shape == (12, 6)

    def test_indivisible(self):
        with pytest.raises(DimensionError):
            degrade_bicubic_down(np.zeros((7, 8)), 2)

    def test_interior_matches_kernel_evaluation(self, rng):
        """Interior outputs against a direct sum of the stretched a = -0.5 kernel."""
        img = rng.uniform(size=(24, 24))
        out = degrade_bicubic_down(img, 2)
        for i, j in [(4, 5), (6, 6), (7, 3)]:
            ci, cj = 2 * i + 0.5, 2 * j + 0.5
            taps = np.arange(-4, 5)
            wi = np.array([keys_cubic((ci - (round(ci) + t)) / 2) for t in taps]) / 2
            wj = np.array([keys_cubic((cj - (round(cj) + t)) / 2) for t in taps]) / 2
            rows, cols = round(ci) + taps, round(cj) + taps
            expected = wi @ img[np.ix_(rows, cols)] @ wj
            assert out[i, j] == pytest.approx(expected / (wi.sum() * wj.sum()), abs=1e-12)

    def test_linear_ramp_preserved_in_interior(self):
        yy, xx = np.mgrid[0:32, 0:32]
        ramp = 0.01 * yy + 0.02 * xx
        out = degrade_bicubic_down(ramp, 2)
        yi, xi = np.mgrid[0:16, 0:16]
        expected = 0.01 * (2 * yi + 0.5) + 0.02 * (2 * xi + 0.5)
        assert np.allclose(out[3:-3, 3:-3], expected[3:-3, 3:-3], atol=1e-12)

    def test_kernel_values(self):
        assert cubic_kernel(0.0) == 1.0
        assert cubic_kernel(1.0) == 0.0 and cubic_kernel(2.0) == 0.0
        assert cubic_kernel(0.5) == pytest.approx(0.5625)


def keys_cubic(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


class TestMosaic:
    def test_pattern(self, rng):
        img = rng.uniform(0.1, 1.0, (4, 4, 3))
        out = degrade_mosaic(img)
        assert out[0, 0, 0] == img[0, 0, 0] and np.all(out[0, 0, 1:] == 0)
        assert out[0, 1, 1] == img[0, 1, 1] and out[1, 0, 1] == img[1, 0, 1]
        assert out[1, 1, 2] == img[1, 1, 2] and np.all(out[1, 1, :2] == 0)

    def test_one_channel_per_pixel(self, rng):
        out = degrade_mosaic(rng.uniform(0.1, 1.0, (6, 6, 3)))
        assert np.all((out != 0).sum(axis=-1) == 1)

    def test_grey_round_trip(self, rng):
        grey = rng.uniform(size=(8, 8))
        img = np.repeat(grey[..., None], 3, axis=-1)
        mosaic = degrade_mosaic(img)
        # naive bilinear demosaic of a grey scene: every channel reads the one sample present
        recovered = mosaic.sum(axis=-1)
        assert np.array_equal(recovered[1:-1, 1:-1], grey[1:-1, 1:-1])
        channels = BAYER_RGGB[np.arange(8)[:, None] % 2, np.arange(8) % 2]
        assert np.array_equal(np.argmax(mosaic > 0, axis=-1)[grey > 0], channels[grey > 0])

    def test_wrong_channels(self):
        with pytest.raises(DimensionError):
            degrade_mosaic(np.zeros((4, 4, 1)))


# metrics -------------------------------------------------------------------------

def reference_ssim(a, b):
    """SSIM from explicit window sums with a separately built Gaussian."""
    ax = np.arange(11) - 5.0
    g = np.exp(-ax ** 2 / 4.5)
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestMetrics:
    def test_psnr_cap(self, rng):
        a = rng.uniform(size=(8, 8))
        assert psnr(a, a) == PSNR_CAP == 99.0

    @pytest.mark.parametrize("err, expected", [(0.1, 20.0), (np.sqrt(0.001), 30.0)])
    def test_psnr_closed_form(self, err, expected):
        a = np.zeros((10, 10))
        assert psnr(a, a + err) == pytest.approx(expected, abs=1e-12)

    def test_psnr_exact_twenty(self):
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == 20.0

    def test_psnr_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros(3), np.zeros(4))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(size=(14, 13)), rng.uniform(size=(14, 13))
        assert psnr(a, b) == psnr(b, a)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)

    def test_ssim_identical(self, rng):
        a = rng.uniform(size=(20, 20))
        assert abs(ssim(a, a) - 1.0) < 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_ssim_reference(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=(16, 18))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert abs(ssim(a, b) - reference_ssim(a, b)) < 1e-9

    def test_ssim_constant_shift(self):
        a, b = np.full((12, 12), 0.2), np.full((12, 12), 0.7)
        assert abs(ssim(a, b) - reference_ssim(a, b)) < 1e-9

    def test_ssim_inverted(self, rng):
        a = 0.25 + 0.5 * rng.uniform(size=(24, 24))
        assert ssim(a, 1 - a) < 0.5

    def test_ssim_too_small(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))

    def test_luminance(self):
        assert to_luminance(np.array([[[1.0, 0.0, 0.0]]]))[0, 0] == pytest.approx(0.299)
        assert to_luminance(np.ones((2, 2, 3))) == pytest.approx(np.ones((2, 2)))


# optimizer and schedules ----------------------------------------------------------

class TestAdam:
    def test_zero_gradient(self, rng):
        p = {"w": rng.normal(size=4)}
        before = p["w"].copy()
        adam_step(p, {"w": np.zeros(4)}, AdamState(), 1e-3)
        assert np.array_equal(p["w"], before)

    def test_zero_lr(self, rng):
        p = {"w": rng.normal(size=4)}
        before = p["w"].copy()
        adam_step(p, {"w": rng.normal(size=4)}, AdamState(), 0.0)
        assert np.array_equal(p["w"], before)

    def test_first_step(self):
        g = np.array([0.5, -2.0, 1e-3])
        p = {"w": np.zeros(3)}
        adam_step(p, {"w": g}, AdamState(), 0.1)
        assert np.allclose(p["w"], -0.1 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_two_step_hand_trace(self):
        g, lr = 0.3, 0.01
        p = {"w": np.array([1.0])}
        state = AdamState()
        adam_step(p, {"w": np.array([g])}, state, lr)
        adam_step(p, {"w": np.array([g])}, state, lr)
        w = 1.0
        m = v = 0.0
        for t in (1, 2):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(p["w"][0] - w) < 1e-12


class TestSchedule:
    def test_search(self):
        assert lr_schedule(0, "search", 40) == 1e-4
        assert lr_schedule(40, "search", 40) == pytest.approx(0.0, abs=1e-20)
        assert lr_schedule(20, "search", 40) == pytest.approx(5e-5)

    def test_train(self):
        assert lr_schedule(199, "train", 1000) == 1e-4
        assert lr_schedule(200, "train", 1000) == 5e-5
        assert lr_schedule(24, "train", 120) == 5e-5
        assert lr_schedule(23, "train", 120) == 1e-4

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            lr_schedule(41, "search", 40)


class TestAugment:
    def test_identity(self, rng):
        a = rng.normal(size=(5, 5, 2))
        assert np.array_equal(dihedral(a, 0), a)

    def test_rotation_order_four(self, rng):
        a = rng.normal(size=(5, 5, 2))
        b = a
        for _ in range(4):
            b = dihedral(b, 1)
        assert np.array_equal(b, a)

    def test_flip_involution(self, rng):
        a = rng.normal(size=(5, 5, 2))
        assert np.array_equal(dihedral(dihedral(a, 4), 4), a)

    def test_eight_distinct(self, rng):
        a = rng.normal(size=(4, 4))
        assert len({dihedral(a, t).tobytes() for t in range(8)}) == 8

    def test_pair_transformed_together(self, rng):
        a = rng.normal(size=(6, 6, 3))
        x, y = augment((a, a.copy()), rng)
        assert np.array_equal(x, y)

    def test_non_square(self, rng):
        with pytest.raises(DimensionError):
            augment(np.zeros((4, 5)), rng)


# data ---------------------------------------------------------------------------------

def test_synthetic_image_range_and_period():
    img = synthetic_image(32, np.random.default_rng(0))
    assert img.shape == (32, 32, 3) and img.min() >= 0 and img.max() <= 1
    # most pixels repeat one period away up to the vertical ramp
    diff = np.abs(img[:, 8:] - img[:, :-8]).max(axis=-1)
    assert np.mean(diff < 1e-9) > 0.5


def test_split_is_seeded_and_disjoint():
    a, b = split_indices(10, 0.2, np.random.default_rng(4))
    assert len(b) == 2 and not set(a) & set(b) and sorted(a + b) == list(range(10))
    assert (a, b) == split_indices(10, 0.2, np.random.default_rng(4))


def test_dataset_batches_consistent():
    ds = load_dataset("sr2", synthetic=3, size=32, val_count=1)
    inp, tgt = next(ds.epoch_batches(8, 2, np.random.default_rng(0)))
    assert inp.shape == (2, 8, 8, 3) and tgt.shape == (2, 16, 16, 3)
    assert ds.val[0][0].shape == (16, 16, 3)


# backbone and training ------------------------------------------------------------------

def tiny_spec(**kw):
    base = dict(channels=4, blocks=2, colors=1)
    base.update(kw)
    return ModelSpec(**base)


class TestBackbone:
    def test_trunk_identity(self, rng):
        model = RestorationNet(tiny_spec(), rng)
        for i in (1, 2):
            model.params[f"block{i}.conv2.w"].data[...] = 0.0
        x = rng.uniform(size=(1, 6, 6, 1))
        p = model.params
        head = conv3x3(x, p["head.w"].data, p["head.b"].data)
        expected = conv3x3(head, p["tail.out.w"].data, p["tail.out.b"].data).data + x
        assert np.allclose(model.predict(x), expected, atol=1e-13)

    @pytest.mark.parametrize("task, scale", [("sr2", 2), ("sr3", 3), ("denoise", 1), ("demosaic", 1)])
    def test_output_size(self, rng, task, scale):
        model = RestorationNet(tiny_spec(task=task, colors=3), rng)
        assert model.predict(rng.uniform(size=(1, 5, 4, 3))).shape == (1, 5 * scale, 4 * scale, 3)

    def test_sr_trunk_identity(self, rng):
        model = RestorationNet(tiny_spec(task="sr2"), rng)
        for i in (1, 2):
            model.params[f"block{i}.conv2.w"].data[...] = 0.0
        x = rng.uniform(size=(1, 4, 4, 1))
        p = {k: t.data for k, t in model.params.items()}
        feat = conv3x3(x, p["head.w"], p["head.b"])
        feat = pixel_shuffle(conv3x3(feat, p["tail.up.w"], p["tail.up.b"]), 2)
        assert np.allclose(model.predict(x), conv3x3(feat, p["tail.out.w"], p["tail.out.b"]).data, atol=1e-13)

    def test_attention_blocks_start_as_identity(self, rng):
        plain = RestorationNet(tiny_spec(), np.random.default_rng(1))
        with_att = RestorationNet(tiny_spec(variant="cla", positions=(1, 2), k=2), np.random.default_rng(1))
        with_att.load_arrays({k: t.data for k, t in plain.weights().items()}, strict=False)
        x = rng.uniform(size=(1, 6, 6, 1))
        assert np.array_equal(with_att.predict(x), plain.predict(x))

    def test_bad_positions(self, rng):
        from acla.errors import ConfigError
        with pytest.raises(ConfigError):
            RestorationNet(tiny_spec(variant="acla", positions=(3,)), rng)


def overfit_data():
    # averaging over the dihedral group makes augmentation a no-op, so every step sees the same patch
    base = synthetic_image(16, np.random.default_rng(2), colors=1)
    img = np.mean([dihedral(base, t) for t in range(8)], axis=0)
    return Dataset("denoise", [img], val=[(img, img)], sigma=0.0)


class TestTrain:
    def test_zero_epochs(self, rng):
        model = RestorationNet(tiny_spec(), rng)
        before = {k: t.data.copy() for k, t in model.weights().items()}
        state = train(model, overfit_data(), TrainSettings(epochs=0))
        assert state.trace == []
        assert all(np.array_equal(before[k], t.data) for k, t in model.weights().items())

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            model = RestorationNet(tiny_spec(variant="acla", positions=(1, 2), k=2), np.random.default_rng(0))
            train(model, load_dataset("denoise", synthetic=2, size=16, val_count=1, colors=1),
                  TrainSettings(epochs=2, batch=2, patch=8), seed=3)
            runs.append({k: t.data.copy() for k, t in model.weights().items()})
        assert all(np.array_equal(runs[0][k], runs[1][k]) for k in runs[0])

    def test_resume_matches_uninterrupted(self):
        data = load_dataset("denoise", synthetic=2, size=16, val_count=1, colors=1)
        settings = TrainSettings(epochs=4, batch=2, patch=8)
        full = RestorationNet(tiny_spec(), np.random.default_rng(0))
        full_state = train(full, data, settings, seed=1)
        part = RestorationNet(tiny_spec(), np.random.default_rng(0))
        stopped = train(part, data, TrainSettings(epochs=2, batch=2, patch=8), seed=1)
        resumed = train(part, data, settings, seed=1, state=stopped)
        assert resumed.trace == full_state.trace
        assert all(np.array_equal(full.weights()[k].data, t.data) for k, t in part.weights().items())

    @pytest.mark.slow
    def test_overfit_single_patch(self):
        model = RestorationNet(tiny_spec(channels=8), np.random.default_rng(0))
        data = overfit_data()
        # one 16x16 patch per epoch, no noise: 500 steps of plain fitting
        state = train(model, data, TrainSettings(epochs=500, batch=1, patch=16, lr=1e-3), seed=0)
        losses = np.array([r["train_loss"] for r in state.trace])
        smooth = np.convolve(losses, np.ones(20) / 20, mode="valid")
        assert evaluate(model, data.val)[0] > 40.0
        assert np.all(np.diff(smooth) <= 0)
