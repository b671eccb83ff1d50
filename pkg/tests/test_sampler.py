import numpy as np
import pytest
from hypothesis import given, strategies as st

from acla.errors import DimensionError, DomainError
from acla.sampler import sample_bilinear, sample_point
from acla.tensor import Tensor, backward

from conftest import assert_grad_close, numeric_grad


def sample(fmap, r, c):
    return sample_point(fmap, r, c).data


def test_lattice_point_exact(rng):
    m = rng.normal(size=(4, 5, 3))
    for r in range(4):
        for c in range(5):
            assert np.array_equal(sample(m, float(r), float(c)), m[r, c])


def test_cell_centre_is_mean(rng):
    m = rng.normal(size=(3, 3, 2))
    expected = m[1:3, 0:2].mean(axis=(0, 1))
    assert np.allclose(sample(m, 1.5, 0.5), expected, atol=1e-15)


def test_closed_form_value():
    m = np.array([[0.0, 1.0], [2.0, 3.0]])[..., None]
    assert sample(m, 0.25, 0.75)[0] == pytest.approx(1.25, abs=1e-15)


def test_clamped_outside():
    m = np.array([[0.0, 1.0], [2.0, 3.0]])[..., None]
    assert sample(m, -3.0, 0.5)[0] == pytest.approx(0.5)
    assert sample(m, 7.0, 9.0)[0] == 3.0


def test_single_pixel_map():
    m = np.full((1, 1, 2), 4.0)
    assert np.array_equal(sample(m, 0.3, -2.0), [4.0, 4.0])


def test_non_finite_position():
    with pytest.raises(DomainError):
        sample(np.zeros((2, 2, 1)), np.nan, 0.0)


def test_empty_map():
    with pytest.raises(DimensionError):
        sample_bilinear(np.zeros((1, 0, 3, 1)), np.zeros((1, 1)), np.zeros((1, 1)))


@given(st.floats(-2, 6), st.floats(-2, 6), st.integers(0, 2**31))
def test_convex_combination(r, c, seed):
    m = np.random.default_rng(seed).normal(size=(5, 5, 1))
    v = sample(m, r, c)[0]
    rr, cc = np.clip(r, 0, 4), np.clip(c, 0, 4)
    r0, c0 = min(int(np.floor(rr)), 3), min(int(np.floor(cc)), 3)
    corners = m[r0:r0 + 2, c0:c0 + 2, 0]
    assert corners.min() - 1e-12 <= v <= corners.max() + 1e-12


@given(st.integers(0, 4), st.integers(0, 3), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_piecewise_linear_between_columns(r, c, t1, t2, seed):
    m = np.random.default_rng(seed).normal(size=(5, 5, 2))
    pts = [(c + t, sample(m, float(r), c + t)) for t in (0.0, t1, t2, 1.0)]
    (x0, y0), (x1, y1) = pts[0], pts[-1]
    for x, y in pts[1:-1]:
        assert np.allclose(y, y0 + (x - x0) * (y1 - y0), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gradients_away_from_kinks(seed):
    rng = np.random.default_rng(seed)
    b, h, w, c, q = 2, 5, 6, 3, 4
    fmap = rng.normal(size=(b, h, w, c))
    # fractional part in [0.25, 0.75] keeps every position away from lattice lines and borders
    rows = rng.integers(0, h - 1, (b, q)) + rng.uniform(0.25, 0.75, (b, q))
    cols = rng.integers(0, w - 1, (b, q)) + rng.uniform(0.25, 0.75, (b, q))
    up = rng.normal(size=(b, q, c))

    def loss(m, r, cc):
        return float((sample_bilinear(m, r, cc).data * up).sum())

    ts = [Tensor(a, requires_grad=True) for a in (fmap, rows, cols)]
    backward((sample_bilinear(*ts) * up).sum())
    for i, t in enumerate(ts):
        assert_grad_close(t.grad, numeric_grad(loss, [fmap, rows, cols], i))


def test_clamped_axis_has_zero_position_gradient(rng):
    fmap = Tensor(rng.normal(size=(1, 4, 4, 2)))
    rows = Tensor(np.array([[-1.5, 1.3]]), requires_grad=True)
    cols = Tensor(np.array([[2.4, 7.0]]), requires_grad=True)
    backward(sample_bilinear(fmap, rows, cols).sum())
    assert rows.grad[0, 0] == 0.0 and rows.grad[0, 1] != 0.0
    assert cols.grad[0, 1] == 0.0 and cols.grad[0, 0] != 0.0


def test_map_gradient_is_bilinear_weights():
    fmap = Tensor(np.zeros((1, 2, 2, 1)), requires_grad=True)
    backward(sample_bilinear(fmap, np.array([[0.25]]), np.array([[0.75]])).sum())
    assert np.allclose(fmap.grad[0, :, :, 0], [[0.75 * 0.25, 0.75 * 0.75], [0.25 * 0.25, 0.25 * 0.75]])
