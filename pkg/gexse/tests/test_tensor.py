# pragma pylint: disable=missing-docstring,C0103
import math

import numpy as np
import pytest

from gexse.misc import NumericError, ShapeError
from gexse.tensor import (
    NormState, Tape, Tensor, affine, backward, batch_norm1d, concat, concat_channels, conv1d,
    gelu, global_avg_pool, log_softmax, matmul, mse, no_grad, relu, softmax_cross_entropy,
    split_channels
)
from gexse.tensor.gradcheck import gradcheck, numeric_gradient


def loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def loop_conv1d(x, kernel, bias, padding):
    batch, _, length = x.shape
    out_channels, in_channels, k = kernel.shape
    padded = np.zeros((batch, in_channels, length + 2 * padding))
    padded[:, :, padding:padding + length] = x
    out_length = length + 2 * padding - k + 1
    out = np.zeros((batch, out_channels, out_length))
    for b in range(batch):
        for o in range(out_channels):
            for t in range(out_length):
                total = bias[o]
                for c in range(in_channels):
                    for j in range(k):
                        total += padded[b, c, t + j] * kernel[o, c, j]
                out[b, o, t] = total
    return out


def test_tensor_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_tensor_node_ids_unique():
    ids = {Tensor(0.0).node_id for _ in range(50)}
    assert len(ids) == 50


def test_tensor_dtype_and_copy():
    source = np.array([1, 2, 3])
    t = Tensor(source)
    source[0] = 10
    assert t.data.dtype == np.float64
    assert t.data[0] == 1.0


def test_matmul_identity_and_zero():
    a = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), a).data, a.data)
    assert np.array_equal(matmul(a, Tensor(np.zeros((2, 2)))).data, np.zeros((2, 2)))


def test_matmul_vs_loop(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).data - loop_matmul(a, b))) < 1e-12
    assert np.allclose((Tensor(a) @ Tensor(b)).data, a @ b)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError, match=r'\(3, 4\).*\(3, 2\)'):
        matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))


def test_affine_trivial():
    out = affine(Tensor([1.0, 2.0]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    assert np.array_equal(out.data, [1.0, 2.0])

    out = affine(Tensor(np.ones((5, 3))), Tensor(np.zeros((3, 1))), Tensor([7.5]))
    assert np.array_equal(out.data, np.full((5, 1), 7.5))


def test_affine_vs_loop(rng):
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((3, 5))
    b = rng.standard_normal(5)
    expected = loop_matmul(x, w) + b
    assert np.max(np.abs(affine(x, w, b).data - expected)) < 1e-12


def test_affine_bad_bias():
    with pytest.raises(ShapeError):
        affine(np.zeros((2, 3)), np.zeros((3, 4)), np.zeros(3))


def test_gelu_values():
    assert gelu(Tensor(0.0)).item() == 0.0
    assert abs(gelu(Tensor(10.0)).item() - 10.0) < 1e-6
    # 1 · Φ(1) = (1 + erf(1/√2)) / 2
    expected = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
    assert abs(gelu(Tensor(1.0)).item() - expected) < 1e-12


def test_relu_values_and_subgradient():
    assert relu(Tensor(-1.0)).item() == 0.0
    assert relu(Tensor(2.0)).item() == 2.0

    x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
    backward(relu(x).sum())
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_numpy_has_sliding_window_view():
    major, minor = (int(part) for part in np.__version__.split('.')[:2])
    assert (major, minor) >= (1, 20)
    assert hasattr(np.lib.stride_tricks, 'sliding_window_view')


def test_conv1d_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 7))
    kernel = np.eye(3)[:, :, None]
    out = conv1d(Tensor(x), Tensor(kernel), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x)


def test_conv1d_zero_kernel_bias(rng):
    x = rng.standard_normal((2, 3, 7))
    out = conv1d(x, np.zeros((4, 3, 3)), np.full(4, 1.25), padding=1)
    assert out.shape == (2, 4, 7)
    assert np.all(out.data == 1.25)


@pytest.mark.parametrize('k,padding', [(1, 0), (3, 1), (5, 2), (3, 0)])
def test_conv1d_vs_loop(rng, k, padding):
    x = rng.standard_normal((2, 3, 9))
    kernel = rng.standard_normal((4, 3, k))
    bias = rng.standard_normal(4)
    out = conv1d(x, kernel, bias, padding=padding)
    assert np.max(np.abs(out.data - loop_conv1d(x, kernel, bias, padding))) < 1e-12


def test_conv1d_channel_mismatch():
    with pytest.raises(ShapeError, match='channels'):
        conv1d(np.zeros((1, 2, 5)), np.zeros((4, 3, 1)))


def test_batch_norm_constant_channel():
    x = Tensor(np.full((1, 2, 6), 3.0))
    shift = np.array([0.5, -2.0])
    out = batch_norm1d(x, np.ones(2), shift, NormState.fresh(2), training=True)
    assert np.allclose(out.data, shift[None, :, None] * np.ones((1, 2, 6)))
    assert np.all(np.isfinite(out.data))


def test_batch_norm_standardized_input(rng):
    x = rng.standard_normal((4, 3, 16))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    # variance 1 − eps so that var + eps == 1
    x = x * math.sqrt(1.0 - 1e-5)
    out = batch_norm1d(x, np.ones(3), np.zeros(3), NormState.fresh(3), training=True)
    assert np.max(np.abs(out.data - x)) < 1e-6


def test_batch_norm_running_statistics(rng):
    x = rng.standard_normal((4, 3, 10)) * 2.0 + 1.0
    state = NormState.fresh(3)
    batch_norm1d(x, np.ones(3), np.zeros(3), state, training=True)

    mean = x.mean(axis=(0, 2))
    var = x.var(axis=(0, 2), ddof=1)
    assert np.max(np.abs(state.running_mean - 0.1 * mean)) < 1e-12
    assert np.max(np.abs(state.running_var - (0.9 + 0.1 * var))) < 1e-12


def test_batch_norm_eval_is_pure(rng):
    x = rng.standard_normal((2, 3, 5))
    state = NormState(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
    before = state.copy()
    first = batch_norm1d(x, np.ones(3), np.zeros(3), state, training=False)
    second = batch_norm1d(x, np.ones(3), np.zeros(3), state, training=False)
    assert np.array_equal(first.data, second.data)
    assert np.array_equal(state.running_mean, before.running_mean)
    assert np.array_equal(state.running_var, before.running_var)


def test_global_avg_pool():
    assert global_avg_pool(np.full((2, 3, 4), 1.5)).data.tolist() == [[1.5] * 3] * 2
    assert global_avg_pool(np.array([[[1.0, 2.0, 3.0, 4.0]]])).item() == 2.5
    with pytest.raises(ShapeError):
        global_avg_pool(np.zeros((2, 3, 0)))


def test_concat_split_round_trip(rng):
    parts = [rng.standard_normal((2, c, 5)) for c in (1, 3, 2)]
    joined = concat_channels(parts)
    assert joined.shape == (2, 6, 5)
    for original, piece in zip(parts, split_channels(joined, [1, 3, 2])):
        assert np.array_equal(original, piece.data)

    single = concat_channels([parts[1]])
    assert np.array_equal(single.data, parts[1])


def test_split_channels_size_mismatch():
    with pytest.raises(ShapeError, match='sizes'):
        split_channels(np.zeros((1, 4, 2)), [1, 2])


def test_split_channels_gradient_routing(rng):
    x = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True)
    first, second = split_channels(x, [2, 3])
    backward((first * 2.0).sum() + (second * 3.0).sum())
    expected = np.concatenate([np.full((2, 2, 3), 2.0), np.full((2, 3, 3), 3.0)], axis=1)
    assert np.array_equal(x.grad, expected)


def test_softmax_cross_entropy_values():
    uniform = softmax_cross_entropy(np.zeros((3, 4)), np.eye(4)[[0, 1, 3]])
    assert abs(uniform.item() - math.log(4)) < 1e-12

    confident = softmax_cross_entropy([[50.0, 0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0, 0.0]])
    assert 0.0 <= confident.item() < 1e-12


def test_softmax_cross_entropy_direct(rng):
    logits = rng.standard_normal((5, 3))
    labels = rng.integers(0, 3, 5)
    one_hot = np.eye(3)[labels]
    expected = 0.0
    for row, label in zip(logits, labels):
        expected -= row[label] - math.log(sum(math.exp(v) for v in row))
    expected /= 5
    assert abs(softmax_cross_entropy(logits, one_hot).item() - expected) < 1e-12


def test_softmax_cross_entropy_needs_two_classes():
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.zeros((2, 1)), np.ones((2, 1)))


def test_log_softmax_normalizes(rng):
    out = log_softmax(rng.standard_normal((4, 6)))
    assert np.allclose(np.exp(out.data).sum(axis=1), 1.0)


def test_mse_values():
    assert mse([1.0, 2.0], [1.0, 2.0]).item() == 0.0
    assert mse([1.0, 0.0], [0.0, 0.0]).item() == 0.5
    with pytest.raises(ShapeError):
        mse(np.zeros(2), np.zeros(3))


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_independent_leaf_is_zero():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([3.0, 4.0], requires_grad=True)
    backward((x * 2.0).sum())
    assert np.array_equal(y.grad_or_zero(), np.zeros(2))
    assert y.grad is None


def test_backward_accumulates():
    x = Tensor([1.0, -2.0], requires_grad=True)
    backward((x * x).sum())
    backward((x * x).sum())
    assert np.array_equal(x.grad, [4.0, -8.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError, match='scalar'):
        backward(x * 2.0)


def test_tape_topological_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * 2.0
    z = y + y * y
    loss = z.sum()
    tape = Tape.record(loss)

    ids = [node.node_id for node in tape.nodes]
    assert len(ids) == len(set(ids))
    position = {node_id: i for i, node_id in enumerate(ids)}
    for node in tape.nodes:
        for parent in node._parents:
            if parent.requires_grad:
                assert position[parent.node_id] < position[node.node_id]
    assert tape.nodes[-1] is loss

    backward(loss, tape)
    # dz/dx = 2 + 8x
    assert np.array_equal(x.grad, [10.0, 18.0])


def test_broadcast_gradients():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    backward((a * b).sum())
    assert b.grad.shape == (4,)
    assert np.array_equal(b.grad, np.full(4, 3.0))
    assert np.array_equal(a.grad, np.tile(np.arange(4.0), (3, 1)))


def test_getitem_gradient():
    x = Tensor(np.arange(5.0), requires_grad=True)
    backward(x[np.array([0, 0, 3])].sum())
    assert np.array_equal(x.grad, [2.0, 0.0, 0.0, 1.0, 0.0])


def test_no_grad_skips_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad
    assert (x * 3.0).requires_grad


def test_non_finite_raises():
    with pytest.raises(NumericError, match='mul'):
        Tensor([1e308]) * 10.0
    with pytest.raises(NumericError):
        Tensor([1.0]) / 0.0


def test_numeric_gradient_square():
    grad = numeric_gradient(lambda t: (t * t).sum(), [np.array([1.0, -3.0])], 0)
    assert np.allclose(grad, [2.0, -6.0], atol=1e-8)


@pytest.mark.parametrize('shape', [(3, 4), (2, 3, 5), (7,)])
def test_gradcheck_elementwise(rng, shape):
    x = rng.standard_normal(shape)
    assert gradcheck(gelu, [x]).passed
    assert gradcheck(relu, [x]).passed
    assert gradcheck(lambda t: t.mean(axis=0), [x]).passed


@pytest.mark.parametrize('shape', [((2, 3), (3, 4)), ((4, 5), (5, 1)), ((2, 3, 2), (2, 3))])
def test_gradcheck_matmul_affine(rng, shape):
    a = rng.standard_normal(shape[0])
    b = rng.standard_normal(shape[1])
    bias = rng.standard_normal(shape[1][1])
    assert gradcheck(matmul, [a, b]).passed
    assert gradcheck(affine, [a, b, bias]).passed


@pytest.mark.parametrize('k', [1, 3, 5])
def test_gradcheck_conv1d(rng, k):
    x = rng.standard_normal((2, 3, 6))
    kernel = rng.standard_normal((2, 3, k))
    bias = rng.standard_normal(2)
    result = gradcheck(lambda a, w, b: conv1d(a, w, b, padding=(k - 1) // 2), [x, kernel, bias])
    assert result.passed, result.errors


@pytest.mark.parametrize('training', [True, False])
def test_gradcheck_batch_norm(rng, training):
    x = rng.standard_normal((3, 2, 4))
    gamma = rng.uniform(0.5, 1.5, 2)
    shift = rng.standard_normal(2)
    state = NormState(np.array([0.1, -0.2]), np.array([0.9, 1.3]))

    def fn(a, g, s):
        return batch_norm1d(a, g, s, state.copy(), training=training)

    result = gradcheck(fn, [x, gamma, shift])
    assert result.passed, result.errors


def test_gradcheck_pool_concat_losses(rng):
    assert gradcheck(global_avg_pool, [rng.standard_normal((2, 3, 4))]).passed
    assert gradcheck(lambda a, b: concat([a, b], axis=1),
                     [rng.standard_normal((2, 1, 3)), rng.standard_normal((2, 2, 3))]).passed
    assert gradcheck(lambda a: split_channels(a, [1, 2])[1],
                     [rng.standard_normal((2, 3, 2))]).passed
    assert gradcheck(log_softmax, [rng.standard_normal((3, 5))]).passed

    one_hot = np.eye(4)[[0, 2, 3]]
    assert gradcheck(lambda z: softmax_cross_entropy(z, one_hot),
                     [rng.standard_normal((3, 4))]).passed
    assert gradcheck(mse, [rng.standard_normal((3, 2)), rng.standard_normal((3, 2))]).passed


def test_gradcheck_reshape_transpose_div(rng):
    x = rng.standard_normal((2, 3, 4))
    assert gradcheck(lambda t: t.reshape(6, 4).transpose(), [x]).passed
    assert gradcheck(lambda t: t.transpose(0, 2, 1), [x]).passed
    assert gradcheck(lambda a, b: a / b, [x, rng.uniform(1.0, 2.0, (3, 4))]).passed
