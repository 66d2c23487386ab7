"""
Differentiable primitives of the gated network.

Each primitive is a Function subclass with a matching lowercase helper.
The shape rules and numerics live in Kernels; this module records them on
the tape and routes gradients.
"""

from typing import Tuple

import numpy as np

from . import Kernels
from .constants import BN_EPSILON, BN_MOMENTUM
from .Tensor import Function, Tensor, as_tensor


class Conv2d(Function):
    def forward(self, x, w, stride=1, padding=0):
        self.saved.update(stride=stride, padding=padding)
        return Kernels.conv2d(x, w, stride, padding)

    def backward(self, grad):
        x, w = self.inputs
        dx, dw = Kernels.conv2d_backward(
            grad, x.data, w.data, self.saved["stride"], self.saved["padding"], need_input=self.needs_grad(0)
        )
        return dx, dw


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Bias-free 2-d convolution, NCHW input, [Cout, Cin, k, k] weight.
    """
    return Conv2d.apply(x, weight, stride=stride, padding=padding)


class BatchNormTrain(Function):
    def forward(self, x, scale, shift, eps=BN_EPSILON):
        out, mean, var, inv_std, xhat = Kernels.batch_norm_train(x, scale, shift, eps)
        self.saved.update(mean=mean, var=var, inv_std=inv_std, xhat=xhat)
        return out

    def backward(self, grad):
        dx, dscale, dshift = Kernels.batch_norm_train_backward(
            grad, self.saved["xhat"], self.saved["inv_std"], self.inputs[1].data
        )
        return dx, dscale, dshift


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPSILON,
) -> Tensor:
    """
    Batch normalization over every axis but axis 1.

    In training the batch statistics normalize the input and the running
    statistics are updated in place with the given momentum (unbiased
    variance, as is customary). In evaluation the running statistics define
    a fixed affine map.
    """
    if not training:
        return ChannelAffine.apply(
            x, scale, shift, running_mean=running_mean, running_var=running_var, eps=eps
        )
    out = BatchNormTrain.apply(x, scale, shift, eps=eps)
    stats = out.creator.saved if out.creator is not None else None
    if stats is None:
        # nothing requires grad: recompute the statistics directly
        axes = Kernels.channel_axes(x.ndim)
        mean, var = x.data.mean(axis=axes), x.data.var(axis=axes)
    else:
        mean, var = stats["mean"], stats["var"]
    count = x.size // x.shape[1]
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * var * count / (count - 1)
    return out


class ChannelAffine(Function):
    # Evaluation-mode batch norm: fixed per-channel affine map.
    def forward(self, x, scale, shift, running_mean=None, running_var=None, eps=BN_EPSILON):
        self.saved["inv_std"] = 1.0 / np.sqrt(running_var + eps)
        self.saved["factor"] = scale * self.saved["inv_std"]
        self.saved["centered"] = x - Kernels.channel_view(running_mean, x.ndim)
        return Kernels.batch_norm_eval(x, scale, shift, running_mean, running_var, eps)

    def backward(self, grad):
        ndim = grad.ndim
        axes = Kernels.channel_axes(ndim)
        factor = self.saved["factor"]
        centered = self.saved["centered"]
        dx = grad * Kernels.channel_view(factor, ndim)
        dscale = (grad * centered).sum(axis=axes) * self.saved["inv_std"] if self.needs_grad(1) else None
        dshift = grad.sum(axis=axes)
        return dx, dscale, dshift


class MaxPool2d(Function):
    def forward(self, x, k=3, stride=2, padding=1):
        out, argmax = Kernels.max_pool2d(x, k, stride, padding)
        self.saved.update(argmax=argmax, k=k, stride=stride, padding=padding)
        return out

    def backward(self, grad):
        s = self.saved
        return (Kernels.max_pool2d_backward(grad, s["argmax"], self.inputs[0].shape, s["k"], s["stride"], s["padding"]),)


def max_pool2d(x: Tensor, k: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    return MaxPool2d.apply(x, k=k, stride=stride, padding=padding)


class Relu(Function):
    def forward(self, x):
        return Kernels.relu(x)

    def backward(self, grad):
        return (grad * (self.inputs[0].data > 0),)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


class Sigmoid(Function):
    def forward(self, x):
        out = Kernels.sigmoid(x)
        self.saved["out"] = out
        return out

    def backward(self, grad):
        out = self.saved["out"]
        return (grad * out * (1.0 - out),)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


class Affine(Function):
    def forward(self, x, weight, bias):
        return Kernels.affine(x, weight, bias)

    def backward(self, grad):
        x, weight, _ = self.inputs
        dx = grad @ weight.data if self.needs_grad(0) else None
        dw = grad.T @ x.data
        db = grad.sum(axis=0)
        return dx, dw, db


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Fully connected layer: x @ weight.T + bias, weight of shape [out, in].
    """
    return Affine.apply(x, weight, bias)


class GlobalAvgPool(Function):
    def forward(self, x):
        return Kernels.global_avg_pool(x)

    def backward(self, grad):
        n, c, h, w = self.inputs[0].shape
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)),)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


class ChannelMul(Function):
    def forward(self, x, mask):
        if x.shape[:2] != mask.shape:
            raise ValueError(f"channel_mul: mask {mask.shape} does not match feature map {x.shape}")
        return x * mask[:, :, None, None]

    def backward(self, grad):
        x, mask = self.inputs
        dx = grad * mask.data[:, :, None, None]
        dmask = (grad * x.data).sum(axis=(2, 3)) if self.needs_grad(1) else None
        return dx, dmask


def channel_mul(x: Tensor, mask: Tensor) -> Tensor:
    """
    Multiply each [H, W] plane of x by the matching [N, C] mask entry.
    """
    return ChannelMul.apply(x, mask)


class CrossEntropy(Function):
    def forward(self, logits, labels=None):
        loss, probs = Kernels.cross_entropy(logits, labels)
        self.saved.update(probs=probs, labels=labels)
        return np.asarray(loss)

    def backward(self, grad):
        probs, labels = self.saved["probs"], self.saved["labels"]
        d = probs.copy()
        d[np.arange(len(labels)), labels] -= 1.0
        return (d * (grad / len(labels)),)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    Mean softmax cross-entropy against integer labels.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"cross_entropy: logits {logits.shape} do not match labels {labels.shape}")
    return CrossEntropy.apply(logits, labels=labels)


class TakeAlongAxis(Function):
    def forward(self, x, indices=None, axis=0):
        self.saved.update(indices=indices, axis=axis)
        return np.take_along_axis(x, indices, axis=axis)

    def backward(self, grad):
        return (Kernels.undo_sort(grad, self.saved["indices"], axis=self.saved["axis"]),)


def sort_with_indices(x: Tensor, axis: int = 0) -> Tuple[Tensor, np.ndarray]:
    """
    Ascending stable sort along axis.

    Returns the sorted values and the permutation p with sorted[j] = x[p[j]].
    Backward sends the gradient at sorted position j back to position p[j].
    """
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise ValueError(f"sort_with_indices: empty input {x.shape}")
    permutation = Kernels.stable_argsort(x.data, axis=axis)
    return TakeAlongAxis.apply(x, indices=permutation, axis=axis), permutation


class StraightThrough(Function):
    # Forward emits the hard values, backward passes the gradient to the relaxed input unchanged.
    def forward(self, soft, hard=None):
        return hard

    def backward(self, grad):
        return (grad,)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    if soft.shape != hard.shape:
        raise ValueError(f"straight_through: soft {soft.shape} and hard {hard.shape} differ")
    return StraightThrough.apply(soft, hard=hard)
