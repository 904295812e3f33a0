import numpy as np
import pytest

from picolor import autograd as ag
from picolor import kernels
from picolor.synthetic import make_dataset


def fd_gradients(fn, arrays, step=1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each array (mutated in place, restored)."""
    grads = []
    for x in arrays:
        g = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = x[idx]
            x[idx] = old + step
            up = fn(*arrays)
            x[idx] = old - step
            down = fn(*arrays)
            x[idx] = old
            g[idx] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def rel_error(a, b):
    """Norm-relative error ``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def check_op_gradient(op, arrays, seed=0, step=1e-5):
    """Analytic vs numeric gradient of ``sum(w * op(*tensors))`` for a fixed random ``w``.

    Returns the worst relative error over all inputs.
    """
    out_shape = np.shape(op(*[ag.Tensor(a) for a in arrays]).data)
    w = np.random.default_rng(seed).normal(size=out_shape)

    def scalar(*xs):
        return float(np.sum(w * op(*[ag.Tensor(x) for x in xs]).data))

    with ag.Tape() as tape:
        ts = [ag.Tensor(a, requires_grad=True) for a in arrays]
        g = tape.backward(ag.tsum(op(*ts) * ag.Tensor(w)))
    numeric = fd_gradients(scalar, arrays, step)
    return max(rel_error(g[t], n) for t, n in zip(ts, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run a test once per available kernel backend, restoring the default afterwards."""
    previous = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(previous)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Twelve 16x16 synthetic scenes at factor 2 with a 25% heldout split."""
    return make_dataset(12, size=16, factor=2, seed=3, heldout_fraction=0.25)


@pytest.fixture(scope="session")
def overfit_dataset():
    """The 8-image, 16x16 noise-free fixture used by the overfit checks."""
    return make_dataset(8, size=16, factor=2, seed=0, noise=0.0, heldout_fraction=0.0)
