import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normkit.errors import ContractError, DomainError, GradCheckError, NonFiniteError, ShapeMismatchError
from normkit.regions import NormRegion
from normkit.tensor import (
    Tape,
    Tensor,
    abs_,
    add,
    avg_pool2d,
    backward,
    concat,
    conv2d,
    div,
    elementwise,
    grad_check,
    log_softmax,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    region_mean,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    sqrt,
    square,
    sub,
    tanh,
)

from oracles import brute_conv2d, brute_region_mean


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(AttributeError):
        t.data = np.zeros(2)
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_tensor_rejects_non_finite_and_empty():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(ContractError):
        Tensor(np.zeros((0, 3)))


def test_elementwise_examples():
    np.testing.assert_array_equal(elementwise("add", Tensor([1, 2]), Tensor([0, 0])).data, [1, 2])
    np.testing.assert_array_equal(elementwise("mul", Tensor([3, 4]), Tensor([2, 2])).data, [6, 8])
    with pytest.raises(DomainError):
        elementwise("sqrt", Tensor([-1.0]))
    with pytest.raises(DomainError):
        elementwise("div", Tensor([1.0, 2.0]), Tensor([1.0, 0.0]))
    with pytest.raises(ContractError):
        elementwise("add", Tensor([1.0]))


def test_broadcasting_limited_to_unit_extents():
    a = Tensor(np.ones((2, 3)))
    assert add(a, Tensor(np.ones((1, 3)))).shape == (2, 3)
    assert add(a, Tensor(2.0)).shape == (2, 3)
    with pytest.raises(ShapeMismatchError):
        add(a, Tensor(np.ones((2, 2))))
    with pytest.raises(ShapeMismatchError):
        add(a, Tensor(np.ones(3)))


def test_matmul_examples():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
    np.testing.assert_array_equal(matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11.0]])
    with pytest.raises(ShapeMismatchError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_conv2d_identity_kernel():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 1, 5, 5)))
    out = conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_box_kernel_on_constant_image():
    c = 1.7
    out = conv2d(Tensor(np.full((1, 1, 5, 5), c)), Tensor(np.ones((1, 1, 3, 3))), pad=1)
    np.testing.assert_allclose(out.data[0, 0, 1:-1, 1:-1], 9 * c, rtol=0, atol=1e-12)
    # corners only see four in-bounds taps under zero padding
    assert out.data[0, 0, 0, 0] == pytest.approx(4 * c)


def test_conv2d_matches_loop_reference_random():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), pad=1)
    np.testing.assert_allclose(out.data, brute_conv2d(x, w, 1, 1), rtol=0, atol=1e-12)


def test_conv2d_kernel_too_large():
    with pytest.raises(ShapeMismatchError):
        conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), pad=0)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 3), c=st.integers(1, 3), f=st.integers(1, 3),
    h=st.integers(1, 7), w=st.integers(1, 7), k=st.sampled_from([1, 3]),
    pad=st.integers(0, 2), stride=st.integers(1, 2), seed=st.integers(0, 2**16),
)
def test_conv2d_property_vs_loops(n, c, f, h, w, k, pad, stride, seed):
    if k > h + 2 * pad or k > w + 2 * pad:
        return
    rng = np.random.default_rng(seed)
    x, wt = rng.normal(size=(n, c, h, w)), rng.normal(size=(f, c, k, k))
    np.testing.assert_allclose(conv2d(Tensor(x), Tensor(wt), pad, stride).data,
                               brute_conv2d(x, wt, pad, stride), rtol=0, atol=1e-12)


def test_region_mean_examples():
    whole = NormRegion(over_channels="all")
    np.testing.assert_array_equal(region_mean(Tensor([[1.0, 2.0, 3.0]]), whole).data, [[2.0, 2.0, 2.0]])
    const = np.full((2, 3, 4, 4), 0.3)
    for region in (NormRegion(True, "none", "all"), NormRegion(False, 3, (3, 3)), NormRegion(False, "all", "all")):
        np.testing.assert_allclose(region_mean(Tensor(const), region).data, const, rtol=0, atol=1e-15)


def test_region_mean_bn_region_vs_loops():
    x = np.random.default_rng(2).normal(size=(2, 3, 4, 4))
    region = NormRegion(over_batch=True, over_channels="none", over_space="all")
    np.testing.assert_allclose(region_mean(Tensor(x), region).data, brute_region_mean(x, region), rtol=0, atol=1e-12)


def test_backward_examples():
    tape = Tape()
    x = tape.leaf(np.random.default_rng(3).normal(size=(2, 3)))
    np.testing.assert_array_equal(backward(tape, reduce_sum(x))[x.node].data, np.ones((2, 3)))

    tape = Tape()
    x = tape.leaf(np.arange(5.0))
    np.testing.assert_allclose(backward(tape, reduce_mean(x))[x.node].data, np.full(5, 0.2))

    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    np.testing.assert_array_equal(backward(tape, reduce_sum(square(x)))[x.node].data, [2.0, 4.0])


def test_backward_rejects_non_scalar_loss():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        backward(tape, square(x))


def test_backward_fan_out_sums_branches():
    # L = sum(x * x) + sum(3 * x) + sum(tanh(x)) -> 2x + 3 + (1 - tanh^2 x)
    tape = Tape()
    xv = np.array([0.3, -1.2, 2.0])
    x = tape.leaf(xv)
    loss = add(add(reduce_sum(mul(x, x)), reduce_sum(mul(x, 3.0))), reduce_sum(tanh(x)))
    g = backward(tape, loss)[x.node].data
    np.testing.assert_allclose(g, 2 * xv + 3 + 1 - np.tanh(xv) ** 2, rtol=0, atol=1e-14)


def test_backward_visits_nodes_once_and_unreached_leaves_get_zero():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    unused = tape.leaf([[5.0]])
    loss = reduce_sum(square(x))
    grads = backward(tape, loss)
    np.testing.assert_array_equal(grads[unused.node].data, [[0.0]])
    ids = [n.id for n in tape.nodes]
    assert ids == sorted(ids)
    assert all(i < n.id for n in tape.nodes for i in n.inputs if i is not None)


def test_mixing_tapes_is_an_error():
    a = Tape().leaf([1.0])
    b = Tape().leaf([2.0])
    with pytest.raises(ContractError):
        add(a, b)


def test_grad_check_examples():
    assert grad_check(lambda x: reduce_sum(square(x)), Tensor([1.0]), 1e-5) < 1e-8

    def nan_above_one(x):
        if x.data[0] > 1.0:
            return float("nan")
        return reduce_sum(square(x))

    with pytest.raises(GradCheckError) as info:
        grad_check(nan_above_one, Tensor([1.0]), 1e-5)
    assert info.value.coordinate == 0
    with pytest.raises(ContractError):
        grad_check(lambda x: reduce_sum(x), Tensor([1.0]), 0.1)


def test_grad_check_bn_sum_of_squares():
    from normkit.normalizers import normalize_forward, spec_preset

    spec = spec_preset("BN", 3, sigma=0.5, ndim=2)
    z = Tensor(np.random.default_rng(4).normal(size=(4, 3)))
    assert grad_check(lambda x: reduce_sum(square(normalize_forward(x, spec)[0])), z, 1e-5) < 1e-6


def _unary_inputs(rng, shape, kind):
    if kind == "sqrt":
        return rng.uniform(0.5, 2.0, size=shape)
    x = rng.normal(size=shape)
    if kind in ("abs", "relu"):
        x = np.where(np.abs(x) < 0.1, 0.5, x)
    return x


UNARY = {"abs": abs_, "sqrt": sqrt, "tanh": tanh, "sigmoid": sigmoid, "relu": relu, "square": square,
         "log_softmax": log_softmax}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(10))
def test_unary_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_unary_inputs(rng, (3, 4), name))
    w = Tensor(rng.normal(size=(3, 4)))
    op = UNARY[name]
    assert grad_check(lambda t: reduce_sum(mul(op(t), w)), x, 1e-5) <= 1e-6


BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("seed", range(10))
def test_binary_primitive_gradients_with_broadcast(name, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.uniform(0.5, 2.0, size=(1, 4)) * rng.choice([-1, 1], size=(1, 4)))
    w = Tensor(rng.normal(size=(3, 4)))
    op = BINARY[name]
    assert grad_check(lambda t: reduce_sum(mul(op(t, b), w)), a, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(mul(op(a, t), w)), b, 1e-5) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_structural_primitive_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 3, 5, 5)))
    k = Tensor(rng.normal(size=(2, 3, 3, 3)))
    m = Tensor(rng.normal(size=(4, 3)))
    wm = Tensor(rng.normal(size=(3, 2)))
    assert grad_check(lambda t: reduce_sum(mul(conv2d(t, k, 1, 2), conv2d(x, k, 1, 2))), x, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(square(conv2d(x, t, 1, 1))), k, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(square(matmul(t, wm))), m, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(square(matmul(m, t))), wm, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(mul(avg_pool2d(t, 2), avg_pool2d(x, 2))), x, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(square(reshape(t, (2, -1)))), m, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(square(slice_axis(t, 1, 1, 3))), m, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(square(concat([t, mul(t, 2.0)], axis=0))), m, 1e-5) <= 1e-6
    assert grad_check(lambda t: reduce_sum(square(reduce_sum(t, axis=1, keepdims=True))), m, 1e-5) <= 1e-6


@pytest.mark.parametrize("region", [
    NormRegion(True, "none", "all"),
    NormRegion(False, "all", "all"),
    NormRegion(False, 3, (3, 3)),
    NormRegion(True, 1, (5, 1)),
])
@pytest.mark.parametrize("seed", range(10))
def test_region_mean_gradient(region, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)))
    w = Tensor(rng.normal(size=(2, 3, 4, 4)))
    assert grad_check(lambda t: reduce_sum(mul(region_mean(t, region), w)), x, 1e-5) <= 1e-6


def test_log_softmax_is_stable_for_large_logits():
    out = log_softmax(Tensor([[1000.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.0, -1000.0]])
