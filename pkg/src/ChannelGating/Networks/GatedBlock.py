"""
Gated residual block.

    x → conv1 → BN1 → ReLU → × gates(x) → conv2 → BN2 → (+ shortcut(x)) → ReLU

Only the intermediate representation is gated; the block always reads its
full input and updates its full output. Bottleneck blocks run a dense 1×1
reduction first and gate the output channels of the 3×3 convolution.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from ..Gating.GateModule import GateModule, GateOutput
from ..Tensors import Functional as F
from ..Tensors import Tensor
from ..Tensors.Module import BatchNorm, Conv2d, Module
from .BlockConfig import GatedBlockConfig

logger = logging.getLogger("GatedBlock")


class GatedBlock(Module):
    def __init__(
        self,
        config: GatedBlockConfig,
        rng: Optional[np.random.Generator] = None,
        gate_rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        c = config
        if c.kind == "bottleneck":
            self.reduce = Conv2d(c.cin, c.cmid, 1, rng=rng)
            self.reduce_norm = BatchNorm(c.cmid)
            self.conv1 = Conv2d(c.cmid, c.cmid, 3, c.stride, rng=rng)
            self.bn1 = BatchNorm(c.cmid)
            self.conv2 = Conv2d(c.cmid, c.cout, 1, rng=rng)
        else:
            self.conv1 = Conv2d(c.cin, c.cmid, c.k, c.stride, rng=rng)
            self.bn1 = BatchNorm(c.cmid)
            self.conv2 = Conv2d(c.cmid, c.cout, c.k, rng=rng)
        self.bn2 = BatchNorm(c.cout)
        if c.has_projection_shortcut:
            self.shortcut = Conv2d(c.cin, c.cout, 1, c.stride, rng=rng)
            self.shortcut_norm = BatchNorm(c.cout)
        if c.gated:
            self.gate = GateModule(c.cin, c.cmid, rng=gate_rng if gate_rng is not None else rng)

    def __repr__(self):
        c = self.config
        return f"GatedBlock({c.kind}, {c.cin}→{c.cmid}→{c.cout}, stride={c.stride}, gated={c.gated})"

    def gate_count(self) -> int:
        return self.config.gate_count

    def gates(self, x: Tensor, rng=None, noise=None, force=None) -> Optional[GateOutput]:
        if not self.config.gated:
            if force is not None:
                raise ValueError(f"GatedBlock: cannot force gates on an ungated block {self}")
            return None
        if force is not None:
            force = np.asarray(force)
            if force.shape[-1] != self.config.cmid:
                raise ValueError(f"GatedBlock: gate length {force.shape[-1]} does not match Cmid {self.config.cmid}")
        return self.gate(x, rng=rng, noise=noise, force=force)

    def intermediate(self, x: Tensor) -> Tensor:
        """
        Post-ReLU output of the first gated-width convolution, before masking.
        """
        h = x
        if self.config.kind == "bottleneck":
            h = F.relu(self.reduce_norm(self.reduce(h)))
        return F.relu(self.bn1(self.conv1(h)))

    def residual(self, x: Tensor) -> Tensor:
        if self.config.has_projection_shortcut:
            return self.shortcut_norm(self.shortcut(x))
        return x

    def forward(
        self,
        x: Tensor,
        rng: Optional[np.random.Generator] = None,
        noise: Optional[np.ndarray] = None,
        force: Optional[np.ndarray] = None,
    ) -> Tuple[Tensor, Optional[GateOutput]]:
        if x.ndim != 4 or x.shape[1] != self.config.cin:
            raise ValueError(f"GatedBlock: input {x.shape} does not match {self}")
        gates = self.gates(x, rng=rng, noise=noise, force=force)
        h = self.intermediate(x)
        if gates is not None:
            h = F.channel_mul(h, gates.mask)
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.residual(x)), gates


def gated_block_forward(
    x: Tensor,
    block: GatedBlock,
    training: bool,
    rng: Optional[np.random.Generator] = None,
    force: Optional[np.ndarray] = None,
) -> Tuple[Tensor, Optional[GateOutput]]:
    block.train(training)
    return block(x, rng=rng, force=force)
