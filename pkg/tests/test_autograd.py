import zlib

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picolor import autograd as ag

from conftest import check_op_gradient, fd_gradients, rel_error


# ---------------------------------------------------------------- elementwise

def test_sigmoid_at_zero_is_half():
    assert ag.sigmoid(ag.Tensor(0.0)).item() == 0.5


def test_tanh_gradient_at_zero_is_one():
    with ag.Tape() as tape:
        x = ag.Tensor(0.0, requires_grad=True)
        g = tape.backward(ag.tanh(x))
    assert g[x] == 1.0


@pytest.mark.parametrize("x", [-3.0, 0.7, 5.0])
def test_softplus_odd_part_is_identity(x):
    t = ag.Tensor(x)
    assert abs((ag.softplus(t) - ag.softplus(-t)).item() - x) < 1e-12


@given(st.floats(-700, 700))
def test_softplus_is_finite_and_positive(x):
    y = ag.softplus(ag.Tensor(x)).item()
    assert np.isfinite(y) and y >= 0.0


def test_broadcast_add_of_bias_map():
    x = ag.Tensor(np.zeros((2, 3, 4, 4)))
    bias = ag.Tensor(np.arange(3.0).reshape(1, 3, 1, 1))
    out = (x + bias).data
    assert out.shape == (2, 3, 4, 4)
    assert np.array_equal(out[1, 2], np.full((4, 4), 2.0))


def test_non_broadcastable_shapes_are_rejected():
    with pytest.raises(ValueError, match="not broadcastable"):
        ag.add(ag.Tensor(np.zeros((2, 3))), ag.Tensor(np.zeros((4,))))


# ---------------------------------------------------------------- log_sum_exp

def test_log_sum_exp_of_equal_logits():
    assert ag.log_sum_exp(ag.Tensor([0.0, 0.0])).item() == pytest.approx(np.log(2.0), abs=1e-15)


def test_log_sum_exp_is_stable_under_large_shift():
    out = ag.log_sum_exp(ag.Tensor([1000.0, 1000.0])).item()
    assert np.isfinite(out)
    assert out == pytest.approx(1000.0 + np.log(2.0), rel=1e-15)


@pytest.mark.parametrize("scale", [1.0, 1e4])
def test_log_sum_exp_no_overflow(scale):
    x = np.array([scale, -scale, 0.5 * scale])
    assert np.isfinite(ag.log_sum_exp(ag.Tensor(x)).item())


@pytest.mark.parametrize("seed", range(5))
def test_log_sum_exp_matches_extended_precision(seed):
    x = np.random.default_rng(seed).normal(0, 3, 7)
    with mpmath.workdps(50):
        ref = float(mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in x)))
    got = ag.log_sum_exp(ag.Tensor(x)).item()
    assert abs(got - ref) / abs(ref) < 1e-13


# ------------------------------------------------------------------- backward

def test_gradient_of_sum_of_squares():
    x0 = np.random.default_rng(0).normal(size=(3, 4))
    with ag.Tape() as tape:
        x = ag.Tensor(x0, requires_grad=True)
        g = tape.backward(ag.tsum(ag.square(x)))
    assert np.array_equal(g[x], 2.0 * x0)


def test_five_op_chain_matches_finite_differences():
    rng = np.random.default_rng(7)
    a0, b0 = rng.uniform(0.5, 1.5, (3, 4)), rng.normal(size=(4,))

    def f(a, b):
        t = ag.tanh(ag.Tensor(a) * ag.Tensor(b))
        return ag.tsum(ag.log(ag.exp(t) + ag.sigmoid(ag.Tensor(a)))).item()

    with ag.Tape() as tape:
        a, b = ag.Tensor(a0, requires_grad=True), ag.Tensor(b0, requires_grad=True)
        t = ag.tanh(a * b)
        g = tape.backward(ag.tsum(ag.log(ag.exp(t) + ag.sigmoid(a))))
    na, nb = fd_gradients(f, [a0, b0])
    assert rel_error(g[a], na) < 1e-6
    assert rel_error(g[b], nb) < 1e-6


def test_unreachable_parameter_gets_zero_gradient():
    with ag.Tape() as tape:
        used = ag.Tensor(np.ones(3), requires_grad=True)
        unused = ag.Tensor(np.ones((2, 2)), requires_grad=True)
        g = tape.backward(ag.tsum(used * 3.0))
    assert g[unused].shape == (2, 2)
    assert not np.any(g[unused])


def test_non_scalar_loss_is_rejected():
    with ag.Tape() as tape:
        x = ag.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(x * 2.0)


def test_tape_is_cleared_after_backward():
    with ag.Tape() as tape:
        x = ag.Tensor(np.ones(2), requires_grad=True)
        tape.backward(ag.tsum(x * x))
        assert tape.records == []


def test_records_are_topologically_ordered():
    with ag.Tape() as tape:
        x = ag.Tensor(np.ones(2), requires_grad=True)
        y = ag.exp(x)
        ag.tsum(y * x)
        seen = set()
        for inputs, output, _ in tape.records:
            for t in inputs:
                if t.node is not None:
                    assert t.node in seen
            seen.add(output.node)


def test_no_recording_outside_a_tape():
    x = ag.Tensor(np.ones(2), requires_grad=True)
    y = ag.exp(x)
    assert y.node is None


def test_shared_input_accumulates_gradient():
    with ag.Tape() as tape:
        x = ag.Tensor(np.array([2.0]), requires_grad=True)
        g = tape.backward(ag.tsum(x * x + x))
    assert g[x][0] == 5.0


# ------------------------------------------------- randomized gradient sweeps

def _shape(rng, ndim=None):
    ndim = ndim or int(rng.integers(1, 4))
    return tuple(int(s) for s in rng.integers(1, 4, ndim))


def _positive(rng, shape):
    return rng.uniform(0.3, 2.0, shape)


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(0.1, 2.0, shape)


UNARY = {
    "neg": (ag.neg, lambda r, s: r.normal(size=s)),
    "square": (ag.square, lambda r, s: r.normal(size=s)),
    "sqrt": (ag.sqrt, _positive),
    "exp": (ag.exp, lambda r, s: r.normal(size=s)),
    "log": (ag.log, _positive),
    "sigmoid": (ag.sigmoid, lambda r, s: r.normal(0, 2, s)),
    "tanh": (ag.tanh, lambda r, s: r.normal(size=s)),
    "softplus": (ag.softplus, lambda r, s: r.normal(0, 2, s)),
    "elu": (ag.elu, _away_from_zero),
    "clamp_min": (lambda t: ag.clamp_min(t, 0.0), _away_from_zero),
    "sum_axis0": (lambda t: ag.tsum(t, axis=0), lambda r, s: r.normal(size=s)),
    "mean": (ag.mean, lambda r, s: r.normal(size=s)),
    "log_sum_exp": (lambda t: ag.log_sum_exp(t, axis=-1), lambda r, s: r.normal(0, 2, s)),
    "reshape": (lambda t: ag.reshape(t, (-1,)), lambda r, s: r.normal(size=s)),
    "getitem": (lambda t: t[..., :1], lambda r, s: r.normal(size=s)),
}

BINARY = {
    "add": ag.add,
    "sub": ag.sub,
    "mul": ag.mul,
    "div": ag.div,
}

SHAPE_TRIALS = 20


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name):
    op, draw = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = max(check_op_gradient(op, [draw(rng, _shape(rng))], seed=t) for t in range(SHAPE_TRIALS))
    assert worst < 1e-5


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_op_gradients_with_broadcasting(name):
    rng = np.random.default_rng(len(name))
    worst = 0.0
    for t in range(SHAPE_TRIALS):
        a_shape = _shape(rng, 3)
        b_shape = tuple(1 if rng.random() < 0.4 else s for s in a_shape)[int(rng.integers(0, 3)):]
        a = rng.normal(size=a_shape)
        b = _positive(rng, b_shape) if name == "div" else rng.normal(size=b_shape)
        worst = max(worst, check_op_gradient(BINARY[name], [a, b], seed=t))
    assert worst < 1e-5


@pytest.mark.parametrize("name", ["concat", "split", "pad2d", "shift_down", "shift_right"])
def test_structural_op_gradients(name):
    rng = np.random.default_rng(99)
    worst = 0.0
    for t in range(SHAPE_TRIALS):
        n, c, h, w = (int(v) for v in rng.integers(1, 4, 4))
        x = rng.normal(size=(n, 2 * c, h, w))
        if name == "concat":
            y = rng.normal(size=(n, c, h, w))
            err = check_op_gradient(lambda p, q: ag.concat([p, q], axis=1), [x, y], seed=t)
        elif name == "split":
            err = check_op_gradient(lambda p: ag.split(p, 2, axis=1)[1] * 2.0, [x], seed=t)
        elif name == "pad2d":
            pads = tuple(int(v) for v in rng.integers(0, 3, 4))
            err = check_op_gradient(lambda p: ag.pad2d(p, pads), [x], seed=t)
        else:
            err = check_op_gradient(getattr(ag, name), [x], seed=t)
        worst = max(worst, err)
    assert worst < 1e-5


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_mul_then_sum_gradient_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(rows, cols)), rng.normal(size=(cols,))
    assert check_op_gradient(ag.mul, [a, b], seed=seed) < 1e-5


def test_float32_tensors_stay_float32():
    x = ag.Tensor(np.ones((2, 2), dtype=np.float32))
    assert (ag.exp(x) * 2.0 + 1.0).dtype == np.float32
