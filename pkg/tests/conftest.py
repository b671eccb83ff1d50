import numpy as np
import pytest

from acla.tensor import Tensor, backward

FD_STEP = 1e-5
FD_RTOL = 1e-4


def numeric_grad(fn, arrays, index, step=FD_STEP):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat, gflat = target.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = fn(*base)
        flat[i] = old - step
        lo = fn(*base)
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def analytic_grads(build, arrays):
    """Gradients of the scalar Tensor ``build(*tensors)`` for every input."""
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    backward(build(*tensors))
    return [t.grad for t in tensors]


def assert_grad_close(analytic, numeric, rtol=FD_RTOL):
    """Relative error against the larger gradient scale, so tiny entries don't blow up."""
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    err = np.abs(analytic - numeric).max() / scale
    assert err < rtol, f"relative gradient error {err:.2e}"


def check_gradients(build, arrays, rtol=FD_RTOL):
    """Compare analytic and central-difference gradients for every input of ``build``."""
    grads = analytic_grads(build, arrays)
    scalar = lambda *xs: float(build(*[Tensor(x) for x in xs]).data)  # noqa: E731
    for i, g in enumerate(grads):
        assert_grad_close(g, numeric_grad(scalar, arrays, i), rtol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one pass/fail line per criterion in the terminal summary

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.failed and report.when == "setup"):
        _criteria[number] = (title, report.passed)
    elif report.skipped and report.when == "setup":
        _criteria[number] = (title, None)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
