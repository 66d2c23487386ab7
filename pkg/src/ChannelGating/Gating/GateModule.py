"""
Per-block gating module and the L0 complexity loss.

    block input → global average pool → affine (Cin→16) → batch norm → ReLU
    → affine (16→Cgates) = logits

Train mode draws BinConcrete samples: logistic noise is added to the
logits, the sum goes through a temperature sigmoid, and the hard decision
thresholds the noisy logit at 0. The hard gate is used forward, the relaxed
value carries the gradient backward.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from ..Tensors import Tensor, as_tensor, get_dtype
from ..Tensors import Functional as F
from ..Tensors.Module import BatchNorm, Linear, Module
from .constants import ADDS_PER_MAC, GATE_BIAS_INIT, HIDDEN_WIDTH, NOISE_TINY, TEMPERATURE

if TYPE_CHECKING:
    from ..Networks.BlockConfig import GatedBlockConfig

logger = logging.getLogger("GateModule")


@dataclass
class GateOutput:
    """
    Gate decisions for a batch: hard is [N, C] of 0/1, soft the relaxed
    sample, logits the pre-noise gate logits, mask the tensor applied to the
    feature map (hard values forward, soft gradient backward).
    """

    hard: np.ndarray
    soft: Tensor
    logits: Tensor
    mask: Tensor

    @property
    def active(self) -> np.ndarray:
        return self.hard.sum(axis=1).astype(np.int64)


def logistic_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """
    log u - log(1 - u), u ~ Uniform(0, 1): the difference of two Gumbel draws.
    """
    u = rng.uniform(NOISE_TINY, 1.0, size=shape)
    return np.log(u) - np.log1p(-u)


def binconcrete(
    logits: Tensor,
    tau: float = TEMPERATURE,
    training: bool = True,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
):
    """
    Returns (soft, hard). In training, noise is drawn from rng unless given;
    in evaluation there is no noise and the logits are thresholded at 0.
    """
    if training:
        if noise is None:
            if rng is None:
                raise ValueError("binconcrete: train mode needs a noise source")
            noise = logistic_noise(logits.shape, rng)
        z = logits + noise
    else:
        z = logits
    soft = F.sigmoid(z * (1.0 / tau))
    # threshold the pre-activation: a float32 sigmoid rounds tiny positive z to 0.5
    hard = (z.data > 0).astype(get_dtype())
    return soft, hard


class GateModule(Module):
    def __init__(
        self,
        cin: int,
        cgates: int,
        hidden: int = HIDDEN_WIDTH,
        tau: float = TEMPERATURE,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        if tau <= 0:
            raise ValueError(f"GateModule: temperature must be positive, got {tau}")
        self.cin, self.cgates, self.hidden, self.tau = cin, cgates, hidden, tau
        self.fc1 = Linear(cin, hidden, rng=rng)
        self.norm = BatchNorm(hidden)
        self.fc2 = Linear(hidden, cgates, bias_init=GATE_BIAS_INIT, rng=rng)

    def logits(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cin:
            raise ValueError(f"GateModule: input {x.shape} does not have {self.cin} channels")
        h = F.relu(self.norm(self.fc1(F.global_avg_pool(x))))
        return self.fc2(h)

    def forward(
        self,
        x: Tensor,
        rng: Optional[np.random.Generator] = None,
        noise: Optional[np.ndarray] = None,
        force: Optional[np.ndarray] = None,
    ) -> GateOutput:
        """
        Gate decisions for the batch x. `force` pins the hard gates ([C] or
        [N, C] of 0/1); forced gates pass no gradient to the gating module.
        """
        logits = self.logits(x)
        soft, hard = binconcrete(logits, self.tau, self.training, rng=rng, noise=noise)
        if force is not None:
            hard = np.broadcast_to(np.asarray(force, dtype=get_dtype()), hard.shape).copy()
            return GateOutput(hard=hard, soft=soft, logits=logits, mask=Tensor(hard))
        return GateOutput(hard=hard, soft=soft, logits=logits, mask=F.straight_through(soft, hard))


def gate_forward(
    features: Tensor,
    params: GateModule,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> GateOutput:
    params.train(training)
    return params(features, rng=rng)


def l0_loss(logits: Tensor | Sequence[Tensor], gamma: float) -> Tensor:
    """
    gamma * sum of sigmoid(logit) over all gates. [N, C] logits are summed
    over gates and averaged over the batch.
    """
    if gamma < 0:
        raise ValueError(f"l0_loss: gamma must be nonnegative, got {gamma}")
    if isinstance(logits, Tensor) or not isinstance(logits, Sequence):
        logits = [as_tensor(logits)]

    total = None
    for z in logits:
        term = F.sigmoid(z).sum()
        if z.ndim == 2:
            term = term * (1.0 / z.shape[0])
        total = term if total is None else total + term
    if total is None:
        return Tensor(0.0)
    return total * gamma


@dataclass(frozen=True)
class GateOverhead:
    macs: int  # the two affine layers
    pool_adds: int  # channel-wise global average pooling
    block_macs: int
    ratio: float  # (macs + pool_adds / ADDS_PER_MAC) / block_macs
    affine_ratio: float  # macs / block_macs


def gate_overhead_macs(block: "GatedBlockConfig", h: int, w: int, hidden: int = HIDDEN_WIDTH) -> GateOverhead:
    """
    Cost of the gating module of a block whose input map is h×w, against the
    dense block's convolution MACs.
    """
    macs = block.cin * hidden + hidden * block.gate_count
    pool_adds = block.cin * h * w
    block_macs = block.conv_macs(h, w)
    if block_macs == 0:
        ratio = affine_ratio = float("inf")
    else:
        ratio = (macs + pool_adds / ADDS_PER_MAC) / block_macs
        affine_ratio = macs / block_macs
    return GateOverhead(macs=macs, pool_adds=pool_adds, block_macs=block_macs, ratio=ratio, affine_ratio=affine_ratio)
