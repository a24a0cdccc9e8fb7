import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alkt import tensor as T
from alkt.optim import SGD, SgdConfig
from alkt.tensor import ShapeError, Tensor

from helpers import conv2d_reference, finite_difference, rel_err


def test_softmax_symmetric():
    np.testing.assert_allclose(T.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_relu():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])


def test_mse_hand_value():
    assert T.mse(Tensor([1.0, 0.0]), Tensor([0.5, 0.5])).item() == pytest.approx(0.25, abs=1e-15)


def test_l1_value():
    assert T.l1(Tensor([1.0, 0.0]), Tensor([0.5, 0.5])).item() == pytest.approx(0.5)


def test_square_backward():
    x = Tensor(3.0, requires_grad=True)
    T.square(x).backward()
    assert x.grad == pytest.approx(6.0)


def test_relu_sum_backward():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    T.sum(T.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_grads_accumulate_until_zeroed():
    x = Tensor(2.0, requires_grad=True)
    T.square(x).backward()
    T.square(x).backward()
    assert x.grad == pytest.approx(8.0)
    x.zero_grad()
    T.square(x).backward()
    assert x.grad == pytest.approx(4.0)


def test_shared_subexpression():
    x = Tensor(1.5, requires_grad=True)
    y = x * x
    (y + y * x).backward()  # d/dx (x^2 + x^3)
    assert x.grad == pytest.approx(2 * 1.5 + 3 * 1.5**2)


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ShapeError, match="mse"):
        T.mse(Tensor(np.ones(3)), Tensor(np.ones(2)))


def test_no_grad_skips_graph():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with T.no_grad():
        y = T.matmul(Tensor(np.ones((1, 2))), w)
    assert not y.requires_grad and y.is_leaf


def test_check_finite():
    T.check_finite(Tensor([1.0]))
    with pytest.raises(FloatingPointError):
        T.check_finite(Tensor([np.nan]))


def test_log_softmax_cross_entropy_value():
    z = Tensor([[1.0, 2.0, 0.5]])
    ce = T.cross_entropy(T.log_softmax(z), [1])
    expect = -np.log(np.exp(2.0) / np.exp([1.0, 2.0, 0.5]).sum())
    assert ce.item() == pytest.approx(expect, rel=1e-14)


def test_softmax_stable_for_large_logits():
    p = T.softmax(Tensor([[1000.0, 1000.0, -1000.0]])).data
    np.testing.assert_allclose(p, [[0.5, 0.5, 0.0]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 5), elements=st.floats(-50, 50)),
    st.floats(-100, 100),
)
def test_softmax_rows_and_shift_invariance(z, c):
    p = T.softmax(Tensor(z)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(T.softmax(Tensor(z + c)).data, p, atol=1e-9)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_nested_loops_exactly(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    # small integers keep every partial sum exact in float64
    x = rng.integers(-3, 4, size=(2, 3, 6, 5)).astype(float)
    k = rng.integers(-2, 3, size=(4, 3, 3, 3)).astype(float)
    out = T.conv2d(Tensor(x), Tensor(k), stride, pad).data
    np.testing.assert_array_equal(out, conv2d_reference(x, k, stride, pad))


def test_conv2d_rejects_bad_stride_and_shapes():
    x, k = Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 2, 3, 3)))
    with pytest.raises(ValueError):
        T.conv2d(x, k, stride=3)
    with pytest.raises(ShapeError, match="conv2d"):
        T.conv2d(x, Tensor(np.ones((1, 3, 3, 3))))


def _gradcheck(build, params, h=1e-5, tol=1e-5):
    for p in params:
        p.zero_grad()
    build().backward()
    for p in params:
        fd = finite_difference(lambda: build().item(), p.data, h)
        assert rel_err(p.grad, fd) <= tol, p.name


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_ops(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True, name="x")
    w = Tensor(rng.normal(size=(5, 3)), requires_grad=True, name="w")
    b = Tensor(rng.normal(size=3), requires_grad=True, name="b")
    t = rng.normal(size=(4, 3))

    def build():
        h = T.add_bias(T.matmul(x, w), b)
        a = T.log_softmax(h)
        p = T.softmax(h)
        n = T.l2_normalize(T.square(h) + 0.1)
        return (
            T.cross_entropy(a, [0, 2, 1, 1])
            + T.mse(p, Tensor(t))
            + T.sum(T.l2_norm(n - Tensor(np.abs(t)), axis=1)) * 0.3
            + T.sum(T.sum(h * h, axis=0)) / 7.0
            + 1.0 / (T.mean(T.square(x)) + 2.0)
        )

    _gradcheck(build, [x, w, b])


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1)])
def test_gradcheck_conv_pool(stride, pad):
    rng = np.random.default_rng(stride)
    x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True, name="x")
    k = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True, name="k")
    b = Tensor(rng.normal(size=3), requires_grad=True, name="b")

    def build():
        h = T.relu(T.add_bias(T.conv2d(x, k, stride, pad), b))
        return T.sum(T.square(T.global_avg_pool(h))) + T.mean(T.flatten(h))

    _gradcheck(build, [x, k, b])


def test_l2_normalize_zero_row_sentinel():
    x = Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]), requires_grad=True)
    y = T.l2_normalize(x)
    np.testing.assert_allclose(y.data, [[0.0, 0.0], [0.6, 0.8]])
    T.sum(y).backward()
    np.testing.assert_array_equal(x.grad[0], [0.0, 0.0])


def test_sgd_two_steps_by_hand():
    w = Tensor([1.0], requires_grad=True)
    opt = SGD([w], SgdConfig(lr=0.1, momentum=0.9, weight_decay=0.0))
    w.grad = np.array([0.5])
    opt.step(0, 10)
    assert opt.velocity[0][0] == pytest.approx(0.5)
    assert w.data[0] == pytest.approx(0.95)
    assert w.grad is None
    w.grad = np.array([0.5])
    opt.step(1, 10)
    assert opt.velocity[0][0] == pytest.approx(0.95)
    assert w.data[0] == pytest.approx(0.855)


def test_sgd_weight_decay_enters_velocity():
    w = Tensor([2.0], requires_grad=True)
    opt = SGD([w], SgdConfig(lr=0.1, momentum=0.0, weight_decay=0.5))
    w.grad = np.array([0.0])
    opt.step(0, 10)
    assert w.data[0] == pytest.approx(2.0 - 0.1 * 1.0)


def test_lr_schedule_decays_once():
    cfg = SgdConfig(lr=0.1, decay_fraction=0.8, decay_factor=0.1)
    lrs = [cfg.lr_at(e, 100) for e in range(100)]
    assert all(lr == 0.1 for lr in lrs[:80])
    assert all(lr == pytest.approx(0.01) for lr in lrs[80:])


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(lr=0.0)
    with pytest.raises(ValueError):
        SgdConfig(momentum=1.0)


def test_relu_propagates_nan():
    assert np.isnan(T.relu(Tensor([np.nan])).data[0])
