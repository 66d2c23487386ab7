"""
Gate-driven sparse inference, one example at a time.

For each block the active gate indices select the output channels of the
first gated convolution, the matching batch-norm statistics, and the same
input channels of the second convolution. Only those slices are computed.
Everything here runs on plain arrays, no tape.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..Networks.constants import IMAGENET_POOL_KERNEL
from ..Networks.GatedBlock import GatedBlock
from ..Networks.GatedResNet import GatedResNet
from ..Tensors import Kernels
from ..Tensors.Module import BatchNorm

logger = logging.getLogger("Slicer")

PLAN_CACHE_SIZE = 64


@dataclass(frozen=True)
class SlicePlan:
    """
    Active channel indices of one block, strictly increasing in [0, cmid).
    """

    indices: Tuple[int, ...]
    cmid: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError(f"SlicePlan: indices must be strictly increasing, got {self.indices}")
        if self.indices and (self.indices[0] < 0 or self.indices[-1] >= self.cmid):
            raise ValueError(f"SlicePlan: indices {self.indices} outside [0, {self.cmid})")

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "SlicePlan":
        mask = np.asarray(mask).reshape(-1)
        return cls(tuple(np.flatnonzero(mask)), len(mask))

    @classmethod
    def full(cls, cmid: int) -> "SlicePlan":
        return cls(tuple(range(cmid)), cmid)

    @property
    def active(self) -> int:
        return len(self.indices)

    def shapes(self, block: GatedBlock) -> Dict[str, Tuple[int, ...]]:
        w1, w2 = block.conv1.weight.shape, block.conv2.weight.shape
        return {"w1": (self.active,) + w1[1:], "w2": (w2[0], self.active) + w2[2:]}


@dataclass
class SlicedWeights:
    w1: np.ndarray
    bn1: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]  # scale, shift, mean, var
    w2: np.ndarray


def _bn(x: np.ndarray, norm: BatchNorm) -> np.ndarray:
    return Kernels.batch_norm_eval(x, norm.scale.data, norm.shift.data, norm.running_mean, norm.running_var, norm.eps)


class BlockSlicer:
    """
    Sliced execution of one block, with the weight slices of recently used
    plans kept in contiguous buffers.
    """

    def __init__(self, block: GatedBlock, cache_size: int = PLAN_CACHE_SIZE):
        self.block = block
        self.cache_size = cache_size
        self.cache: "OrderedDict[Tuple[int, ...], SlicedWeights]" = OrderedDict()
        self.hits = self.misses = 0

    def weights(self, plan: SlicePlan) -> SlicedWeights:
        if plan.cmid != self.block.config.cmid:
            raise ValueError(f"BlockSlicer: plan for {plan.cmid} channels, block has {self.block.config.cmid}")
        key = plan.indices
        sliced = self.cache.get(key)
        if sliced is not None:
            self.cache.move_to_end(key)
            self.hits += 1
            return sliced
        self.misses += 1
        idx = np.asarray(plan.indices, dtype=np.int64)
        b = self.block
        # the same index list slices W1 outputs, BN1 and W2 inputs
        sliced = SlicedWeights(
            w1=np.ascontiguousarray(b.conv1.weight.data[idx]),
            bn1=tuple(np.ascontiguousarray(a[idx]) for a in (b.bn1.scale.data, b.bn1.shift.data, b.bn1.running_mean, b.bn1.running_var)),
            w2=np.ascontiguousarray(b.conv2.weight.data[:, idx]),
        )
        self.cache[key] = sliced
        if len(self.cache) > self.cache_size:
            self.cache.popitem(last=False)
        return sliced

    def forward(self, x: np.ndarray, plan: SlicePlan) -> np.ndarray:
        b = self.block
        c = b.config
        if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != c.cin:
            raise ValueError(f"sliced_block_forward: expected input [1, {c.cin}, H, W], got {x.shape}")
        ho, wo = c.output_size(x.shape[2], x.shape[3])
        if plan.active == 0:
            # nothing reads the reduce conv output either
            h = np.zeros((1, c.cout, ho, wo), dtype=x.dtype)
        else:
            h = x
            if c.kind == "bottleneck":
                h = Kernels.relu(_bn(Kernels.conv2d(h, b.reduce.weight.data, 1, 0), b.reduce_norm))
            s = self.weights(plan)
            scale, shift, mean, var = s.bn1
            h = Kernels.conv2d(h, s.w1, b.conv1.stride, b.conv1.padding)
            h = Kernels.relu(Kernels.batch_norm_eval(h, scale, shift, mean, var, b.bn1.eps))
            h = Kernels.conv2d(h, s.w2, 1, b.conv2.padding)
        h = _bn(h, b.bn2)
        return Kernels.relu(h + residual(b, x))


def residual(block: GatedBlock, x: np.ndarray) -> np.ndarray:
    if block.config.has_projection_shortcut:
        return _bn(Kernels.conv2d(x, block.shortcut.weight.data, block.shortcut.stride, 0), block.shortcut_norm)
    return x


def sliced_block_forward(x: np.ndarray, block: GatedBlock, plan: SlicePlan, slicer: Optional[BlockSlicer] = None) -> np.ndarray:
    slicer = slicer if slicer is not None else BlockSlicer(block, cache_size=0)
    return slicer.forward(np.asarray(x), plan)


def dense_block_forward(x: np.ndarray, block: GatedBlock, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Eval-mode block on plain arrays; with a mask, the intermediate channels
    are multiplied by it (the dense gated path).
    """
    b = block
    h = x
    if b.config.kind == "bottleneck":
        h = Kernels.relu(_bn(Kernels.conv2d(h, b.reduce.weight.data, 1, 0), b.reduce_norm))
    h = Kernels.relu(_bn(Kernels.conv2d(h, b.conv1.weight.data, b.conv1.stride, b.conv1.padding), b.bn1))
    if mask is not None:
        h = h * np.asarray(mask, dtype=h.dtype).reshape(h.shape[0], -1)[:, :, None, None]
    h = _bn(Kernels.conv2d(h, b.conv2.weight.data, 1, b.conv2.padding), b.bn2)
    return Kernels.relu(h + residual(b, x))


def gate_decisions(block: GatedBlock, x: np.ndarray) -> np.ndarray:
    """
    Eval-mode hard gates [N, cmid] on plain arrays.
    """
    g = block.gate
    z = Kernels.affine(Kernels.global_avg_pool(x), g.fc1.weight.data, g.fc1.bias.data)
    z = Kernels.relu(_bn(z, g.norm))
    z = Kernels.affine(z, g.fc2.weight.data, g.fc2.bias.data)
    return (z > 0).astype(x.dtype)


def stem_forward(model: GatedResNet, x: np.ndarray) -> np.ndarray:
    h = Kernels.conv2d(x, model.stem.weight.data, model.stem.stride, model.stem.padding)
    h = Kernels.relu(_bn(h, model.stem_norm))
    if model.config.stem == "imagenet":
        h, _ = Kernels.max_pool2d(h, IMAGENET_POOL_KERNEL, 2, IMAGENET_POOL_KERNEL // 2)
    return h


def head_forward(model: GatedResNet, h: np.ndarray) -> np.ndarray:
    return Kernels.affine(Kernels.global_avg_pool(h), model.fc.weight.data, model.fc.bias.data)


def _forced(force: Optional[Sequence[Optional[np.ndarray]]], index: int) -> Optional[np.ndarray]:
    if force is None:
        return None
    return force[index]


class NetworkSlicer:
    """
    Whole-network inference in three flavours: dense (no gating modules),
    dense gated (mask multiply) and sliced.
    """

    def __init__(self, model: GatedResNet, cache_size: int = PLAN_CACHE_SIZE):
        self.model = model
        self.slicers = [BlockSlicer(b, cache_size) for b in model.blocks]

    def dense(self, x: np.ndarray) -> np.ndarray:
        h = stem_forward(self.model, x)
        for block in self.model.blocks:
            h = dense_block_forward(h, block)
        return head_forward(self.model, h)

    def _gated(self, x: np.ndarray, force, sliced: bool) -> Tuple[np.ndarray, List[np.ndarray]]:
        h = stem_forward(self.model, x)
        bits = []
        gated_index = 0
        for block, slicer in zip(self.model.blocks, self.slicers):
            if not block.config.gated:
                h = dense_block_forward(h, block)
                continue
            mask = _forced(force, gated_index)
            mask = gate_decisions(block, h) if mask is None else np.asarray(mask, dtype=h.dtype).reshape(1, -1)
            gated_index += 1
            bits.append(mask.reshape(1, -1).astype(np.uint8))
            if sliced:
                h = slicer.forward(h, SlicePlan.from_mask(mask))
            else:
                h = dense_block_forward(h, block, mask)
        return head_forward(self.model, h), bits

    def dense_gated(self, x: np.ndarray, force=None) -> Tuple[np.ndarray, List[np.ndarray]]:
        return self._gated(x, force, sliced=False)

    def sliced(self, x: np.ndarray, force=None) -> Tuple[np.ndarray, List[np.ndarray]]:
        if x.shape[0] != 1:
            raise ValueError(f"sliced_forward: slicing is per example, got a batch of {x.shape[0]}")
        return self._gated(x, force, sliced=True)


def sliced_forward(model: GatedResNet, x: np.ndarray, force=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Logits [1, classes] and gate bits [1, total gates] of one example.
    """
    if model.training:
        raise ValueError("sliced_forward: model must be in eval mode")
    logits, bits = NetworkSlicer(model).sliced(np.asarray(x, dtype=model.stem.weight.data.dtype), force)
    return logits, np.concatenate(bits, axis=1) if bits else np.zeros((1, 0), dtype=np.uint8)
