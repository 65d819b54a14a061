"""
Differentiable neural network ops on gexse tensors
"""
import logging
from typing import List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from gexse.misc import ShapeError
from gexse.tensor.core import Tensor, TensorLike, as_tensor, make_node

logger = logging.getLogger(__name__)

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """
    Matrix product of a (..., n) with b (n, m)
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError('matmul: shapes {} and {} do not align'.format(a.shape, b.shape))

    def backward(g: np.ndarray):
        flat_a = a.data.reshape(-1, a.shape[-1])
        flat_g = g.reshape(-1, b.shape[1])
        return g @ b.data.T, flat_a.T @ flat_g

    return make_node(a.data @ b.data, (a, b), backward, 'matmul')


def affine(x: TensorLike, w: TensorLike, b: TensorLike) -> Tensor:
    """
    x·w + b over the last axis of x
    :param x: (..., n)
    :param w: (n, m)
    :param b: (m,)
    :return: (..., m)
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError('affine: input {} does not fit weight {} and bias {}'.format(
            x.shape, w.shape, b.shape))

    def backward(g: np.ndarray):
        flat_x = x.data.reshape(-1, w.shape[0])
        flat_g = g.reshape(-1, w.shape[1])
        return g @ w.data.T, flat_x.T @ flat_g, flat_g.sum(axis=0)

    return make_node(x.data @ w.data + b.data, (x, w, b), backward, 'affine')


def gelu(x: TensorLike) -> Tensor:
    """ x·Φ(x) with the exact Gaussian CDF """
    x = as_tensor(x)
    cdf = ndtr(x.data)

    def backward(g: np.ndarray):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return make_node(x.data * cdf, (x,), backward, 'gelu')


def relu(x: TensorLike) -> Tensor:
    """ max(0, x), the subgradient at 0 is 0 """
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), 'relu')


def conv1d(x: TensorLike, kernel: TensorLike, bias: Optional[TensorLike] = None,
           padding: int = 0) -> Tensor:
    """
    Cross-correlation over the last axis.
    :param x: (batch, in_channels, length)
    :param kernel: (out_channels, in_channels, k)
    :param bias: (out_channels,) or None
    :param padding: zeros added on both ends of the time axis
    :return: (batch, out_channels, length + 2·padding − k + 1)
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError('conv1d: expected 3-d input and kernel, got {} and {}'.format(
            x.shape, kernel.shape))
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError('conv1d: input {} has {} channels, kernel {} expects {}'.format(
            x.shape, x.shape[1], kernel.shape, kernel.shape[1]))
    out_channels, _, k = kernel.shape
    length = x.shape[2]
    out_length = length + 2 * padding - k + 1
    if out_length < 1:
        raise ShapeError('conv1d: kernel {} is longer than padded input {}'.format(
            kernel.shape, x.shape))

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    windows = sliding_window_view(padded, k, axis=2)
    out = np.tensordot(windows, kernel.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)

    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out_channels,):
            raise ShapeError('conv1d: bias {} does not match {} output channels'.format(
                bias.shape, out_channels))
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def backward(g: np.ndarray):
        grad_kernel = np.tensordot(g, windows, axes=([0, 2], [0, 2]))
        grad_padded = np.zeros_like(padded)
        for j in range(k):
            grad_padded[:, :, j:j + out_length] += np.tensordot(
                g, kernel.data[:, :, j], axes=([1], [0])).transpose(0, 2, 1)
        grad_x = grad_padded[:, :, padding:padding + length]
        grads = [grad_x, grad_kernel]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return make_node(out, parents, backward, 'conv1d')


class NormState:
    """
    Running statistics of one batch-norm layer, updated in training mode only
    """

    def __init__(self, running_mean: np.ndarray, running_var: np.ndarray) -> None:
        self.running_mean = np.array(running_mean, dtype=np.float64)
        self.running_var = np.array(running_var, dtype=np.float64)

    @classmethod
    def fresh(cls, channels: int) -> 'NormState':
        return cls(np.zeros(channels), np.ones(channels))

    def copy(self) -> 'NormState':
        return NormState(self.running_mean.copy(), self.running_var.copy())


def batch_norm1d(x: TensorLike, gamma: TensorLike, beta_shift: TensorLike, state: NormState,
                 training: bool, eps: float = BN_EPSILON, momentum: float = BN_MOMENTUM) -> Tensor:
    """
    Per-channel normalization over (batch, length).
    Training mode normalizes with the biased batch variance and moves the
    running statistics towards the batch (unbiased variance); eval mode uses
    the running statistics and leaves them untouched.
    :param x: (batch, channels, length)
    :param gamma: (channels,) scale
    :param beta_shift: (channels,) shift
    :param state: running statistics
    :param training: training or eval mode
    :return: tensor shaped like x
    """
    x, gamma, beta_shift = as_tensor(x), as_tensor(gamma), as_tensor(beta_shift)
    if x.ndim != 3:
        raise ShapeError('batch_norm1d: expected (batch, channels, length), got {}'.format(x.shape))
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta_shift.shape != (channels,) \
            or state.running_mean.shape != (channels,):
        raise ShapeError('batch_norm1d: input {} does not match gamma {} / shift {}'.format(
            x.shape, gamma.shape, beta_shift.shape))

    scale = gamma.data[None, :, None]
    if training:
        count = x.shape[0] * x.shape[2]
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        unbiased = var * count / (count - 1) if count > 1 else var
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mean
        state.running_var = (1.0 - momentum) * state.running_var + momentum * unbiased
    else:
        count = None
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean[None, :, None]) * inv_std[None, :, None]

    def backward(g: np.ndarray):
        grad_gamma = (g * x_hat).sum(axis=(0, 2))
        grad_shift = g.sum(axis=(0, 2))
        grad_x_hat = g * scale
        if count is None:
            return grad_x_hat * inv_std[None, :, None], grad_gamma, grad_shift
        grad_x = (inv_std[None, :, None] / count) * (
            count * grad_x_hat
            - grad_x_hat.sum(axis=(0, 2), keepdims=True)
            - x_hat * (grad_x_hat * x_hat).sum(axis=(0, 2), keepdims=True)
        )
        return grad_x, grad_gamma, grad_shift

    out = x_hat * scale + beta_shift.data[None, :, None]
    return make_node(out, (x, gamma, beta_shift), backward, 'batch_norm1d')


def global_avg_pool(x: TensorLike) -> Tensor:
    """ (batch, channels, length) -> (batch, channels), mean over length """
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[2] == 0:
        raise ShapeError('global_avg_pool: expected non-empty (batch, channels, length), '
                         'got {}'.format(x.shape))
    length = x.shape[2]
    return make_node(
        x.data.mean(axis=2), (x,),
        lambda g: (np.broadcast_to(g[:, :, None] / length, x.shape),),
        'global_avg_pool',
    )


def concat(parts: Sequence[TensorLike], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError('concat needs at least one part')
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError('concat: incompatible shapes {} along axis {}'.format(
            [p.shape for p in parts], axis))
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return make_node(out, parts, lambda g: np.split(g, bounds, axis=axis), 'concat')


def concat_channels(parts: Sequence[TensorLike]) -> Tensor:
    return concat(parts, axis=1)


def _channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return make_node(x.data[:, start:stop], (x,), backward, 'split')


def split_channels(x: TensorLike, sizes: Sequence[int]) -> List[Tensor]:
    """
    Splits axis 1 of x into consecutive parts of the given sizes
    """
    x = as_tensor(x)
    if x.ndim < 2 or sum(sizes) != x.shape[1]:
        raise ShapeError('split_channels: sizes {} do not sum to the {} channels of {}'.format(
            list(sizes), x.shape[1] if x.ndim > 1 else None, x.shape))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [_channel_slice(x, int(start), int(stop))
            for start, stop in zip(bounds[:-1], bounds[1:])]


def _log_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = _log_softmax(x.data, axis)

    def backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), backward, 'log_softmax')


def softmax(logits: np.ndarray) -> np.ndarray:
    """ Row-wise softmax of a plain array """
    return np.exp(_log_softmax(np.asarray(logits, dtype=np.float64), -1))


def softmax_cross_entropy(logits: TensorLike, one_hot: TensorLike) -> Tensor:
    """
    Mean over the batch of −Σ y·log softmax(logits)
    :param logits: (batch, k)
    :param one_hot: (batch, k) target distribution
    :return: scalar tensor
    """
    logits, one_hot = as_tensor(logits), as_tensor(one_hot)
    if logits.ndim != 2 or logits.shape != one_hot.shape:
        raise ShapeError('softmax_cross_entropy: logits {} and targets {} differ'.format(
            logits.shape, one_hot.shape))
    batch, classes = logits.shape
    if classes < 2:
        raise ShapeError('softmax_cross_entropy needs at least 2 classes, got {}'.format(classes))
    log_p = _log_softmax(logits.data, 1)
    loss = -(one_hot.data * log_p).sum() / batch

    def backward(g: np.ndarray):
        grad_logits = np.exp(log_p) * one_hot.data.sum(axis=1, keepdims=True) - one_hot.data
        return g * grad_logits / batch, -g * log_p / batch

    return make_node(loss, (logits, one_hot), backward, 'softmax_cross_entropy')


def mse(p: TensorLike, q: TensorLike) -> Tensor:
    """ Mean of (p − q)² over every element """
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise ShapeError('mse: shapes {} and {} differ'.format(p.shape, q.shape))
    diff = p.data - q.data
    count = diff.size

    def backward(g: np.ndarray):
        grad = 2.0 * g * diff / count
        return grad, -grad

    return make_node(np.mean(diff * diff), (p, q), backward, 'mse')
