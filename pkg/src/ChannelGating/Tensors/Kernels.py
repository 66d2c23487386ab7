"""
Numpy kernels shared by the tape Functions and the sliced inference path.
Everything here works on plain arrays; nothing is recorded.
"""

from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

from .constants import BN_EPSILON


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _windows(x: np.ndarray, k: int, stride: int, padding: int, value: float = 0.0) -> np.ndarray:
    # [N, C, H', W', k, k] view over the padded input
    windows = sliding_window_view(_pad(x, padding, value), (k, k), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def check_conv_shapes(x_shape: Tuple[int, ...], w_shape: Tuple[int, ...]):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ValueError(f"conv2d: expected 4-d input and weight, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise ValueError(f"conv2d: input channels do not match weight: input {x_shape}, weight {w_shape}")
    if w_shape[2] != w_shape[3] or w_shape[2] % 2 != 1:
        raise ValueError(f"conv2d: kernel must be square and odd: input {x_shape}, weight {w_shape}")


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    check_conv_shapes(x.shape, w.shape)
    k = w.shape[2]
    if w.shape[0] == 0 or x.shape[1] == 0:
        n, _, h, wd = x.shape
        ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(wd, k, stride, padding)
        return np.zeros((n, w.shape[0], ho, wo), dtype=x.dtype)
    cols = _windows(x, k, stride, padding)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(
    grad: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int, padding: int, need_input: bool = True
) -> Tuple[np.ndarray | None, np.ndarray]:
    k = w.shape[2]
    n, c, h, wd = x.shape
    cols = _windows(x, k, stride, padding)
    dw = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))
    if not need_input:
        return None, dw

    dcols = np.tensordot(grad, w, axes=([1], [0]))  # [N, H', W', C, k, k]
    ho, wo = grad.shape[2], grad.shape[3]
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return dxp[:, :, padding:padding + h, padding:padding + wd], dw


def channel_axes(ndim: int) -> Tuple[int, ...]:
    return (0,) + tuple(range(2, ndim))


def channel_view(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batch_norm_train(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float = BN_EPSILON):
    """
    Normalize with batch statistics over every axis but the channel axis.
    Returns the output plus the statistics the caller needs for backward and running averages.
    """
    axes = channel_axes(x.ndim)
    count = x.size // x.shape[1] if x.shape[1] else 0
    if count < 2:
        raise ValueError(f"batch_norm: train mode needs at least 2 values per channel, input {x.shape}")
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - channel_view(mean, x.ndim)) * channel_view(inv_std, x.ndim)
    out = xhat * channel_view(scale, x.ndim) + channel_view(shift, x.ndim)
    return out.astype(x.dtype, copy=False), mean, var, inv_std, xhat


def batch_norm_train_backward(grad: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, scale: np.ndarray):
    axes = channel_axes(grad.ndim)
    count = grad.size // grad.shape[1]
    dscale = (grad * xhat).sum(axis=axes)
    dshift = grad.sum(axis=axes)
    dxhat = grad * channel_view(scale, grad.ndim)
    dx = channel_view(inv_std / count, grad.ndim) * (
        count * dxhat
        - channel_view(dxhat.sum(axis=axes), grad.ndim)
        - xhat * channel_view((dxhat * xhat).sum(axis=axes), grad.ndim)
    )
    return dx, dscale, dshift


def batch_norm_eval(
    x: np.ndarray, scale: np.ndarray, shift: np.ndarray, running_mean: np.ndarray, running_var: np.ndarray,
    eps: float = BN_EPSILON,
) -> np.ndarray:
    """
    Affine map from running statistics: scale * (x - mean) / sqrt(var + eps) + shift.
    """
    factor = scale / np.sqrt(running_var + eps)
    out = (x - channel_view(running_mean, x.ndim)) * channel_view(factor, x.ndim) + channel_view(shift, x.ndim)
    return out.astype(x.dtype, copy=False)


def max_pool2d(x: np.ndarray, k: int, stride: int, padding: int) -> Tuple[np.ndarray, np.ndarray]:
    windows = _windows(x, k, stride, padding, value=-np.inf)
    n, c, ho, wo = windows.shape[:4]
    flat = windows.reshape(n, c, ho, wo, k * k)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), argmax


def max_pool2d_backward(grad: np.ndarray, argmax: np.ndarray, x_shape, k: int, stride: int, padding: int):
    n, c, h, w = x_shape
    ho, wo = grad.shape[2], grad.shape[3]
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=grad.dtype)
    for i in range(k):
        for j in range(k):
            hit = argmax == (i * k + j)
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += grad * hit
    return dxp[:, :, padding:padding + h, padding:padding + w]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3))


def affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"affine: input {x.shape} does not match weight {weight.shape}")
    out = x @ weight.T
    return out if bias is None else out + bias


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean softmax cross-entropy; also returns the softmax for backward.
    """
    logp = log_softmax(logits, axis=1)
    loss = -logp[np.arange(len(labels)), labels].mean()
    return loss, softmax(logits, axis=1)


def stable_argsort(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """
    Ascending order; ties keep their original order.
    """
    return np.argsort(x, axis=axis, kind="stable")


def undo_sort(values: np.ndarray, permutation: np.ndarray, axis: int = 0) -> np.ndarray:
    """
    Put the value found at sorted position j back at original position permutation[j].
    """
    out = np.empty_like(values)
    np.put_along_axis(out, permutation, values, axis=axis)
    return out


def inverse_permutation(permutation: np.ndarray, axis: int = 0) -> np.ndarray:
    positions = np.broadcast_to(
        np.arange(permutation.shape[axis]).reshape([-1 if a == axis else 1 for a in range(permutation.ndim)]),
        permutation.shape,
    )
    return undo_sort(np.ascontiguousarray(positions), permutation, axis=axis)
