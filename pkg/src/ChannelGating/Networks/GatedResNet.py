"""
Residual network assembly from a NetworkConfig.

The stem convolution, the projection shortcuts and the classifier stay
dense; every residual block is a GatedBlock.
"""

import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..Gating.GateModule import GateOutput
from ..Tensors import Functional as F
from ..Tensors import Tensor, as_tensor
from ..Tensors.Kernels import conv_output_size
from ..Tensors.Module import BatchNorm, Conv2d, Linear, Module
from .BlockConfig import GatedBlockConfig
from .constants import (
    ARCHITECTURES,
    BLOCK_KINDS,
    BOTTLENECK_EXPANSION,
    IMAGENET_POOL_KERNEL,
    IMAGENET_STEM_KERNEL,
    IN_CHANNELS,
    STEM_KINDS,
)
from .GatedBlock import GatedBlock

logger = logging.getLogger("GatedResNet")


@dataclass(frozen=True)
class NetworkConfig:
    widths: Tuple[int, ...]
    blocks: Tuple[int, ...]
    multiplier: int = 1
    resolution: int = 32
    classes: int = 10
    stem: str = "cifar"
    block: str = "basic"
    gated: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if len(self.widths) == 0 or len(self.widths) != len(self.blocks):
            raise ValueError(f"NetworkConfig: widths {self.widths} and blocks {self.blocks} must be non-empty and of equal length")
        if min(self.widths) < 1 or min(self.blocks) < 1:
            raise ValueError(f"NetworkConfig: widths and blocks must be positive, got {self.widths}, {self.blocks}")
        if self.multiplier < 1:
            raise ValueError(f"NetworkConfig: width multiplier must be positive, got {self.multiplier}")
        if self.stem not in STEM_KINDS:
            raise ValueError(f"NetworkConfig: unknown stem '{self.stem}', expected one of {STEM_KINDS}")
        if self.block not in BLOCK_KINDS:
            raise ValueError(f"NetworkConfig: unknown block kind '{self.block}', expected one of {BLOCK_KINDS}")
        if self.classes < 2:
            raise ValueError(f"NetworkConfig: need at least 2 classes, got {self.classes}")
        if self.stem_output_size() < 1:
            raise ValueError(f"NetworkConfig: resolution {self.resolution} is too small for the {self.stem} stem")

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "NetworkConfig":
        if name not in ARCHITECTURES:
            raise ValueError(f"NetworkConfig: unknown architecture '{name}', expected one of {sorted(ARCHITECTURES)}")
        arch = dict(ARCHITECTURES[name])
        arch.update(overrides)
        return cls(**arch)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NetworkConfig":
        return cls(**d)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["widths"], d["blocks"] = list(self.widths), list(self.blocks)
        return d

    def with_gating(self, gated: bool) -> "NetworkConfig":
        return replace(self, gated=gated)

    @property
    def stem_width(self) -> int:
        return self.widths[0]

    @property
    def stem_kernel(self) -> int:
        return IMAGENET_STEM_KERNEL if self.stem == "imagenet" else 3

    def stem_conv_size(self) -> int:
        if self.stem == "imagenet":
            return conv_output_size(self.resolution, IMAGENET_STEM_KERNEL, 2, IMAGENET_STEM_KERNEL // 2)
        return self.resolution

    def stem_output_size(self) -> int:
        size = self.stem_conv_size()
        if self.stem == "imagenet":
            size = conv_output_size(size, IMAGENET_POOL_KERNEL, 2, IMAGENET_POOL_KERNEL // 2)
        return size

    def block_configs(self) -> List[GatedBlockConfig]:
        configs = []
        cin = self.stem_width
        for stage, (width, count) in enumerate(zip(self.widths, self.blocks)):
            cmid = width * self.multiplier
            cout = width * BOTTLENECK_EXPANSION if self.block == "bottleneck" else width
            for i in range(count):
                stride = 2 if stage > 0 and i == 0 else 1
                configs.append(GatedBlockConfig.make(cin, cmid, cout, stride=stride, kind=self.block, gated=self.gated))
                cin = cout
        return configs

    def layout(self) -> List[Tuple[GatedBlockConfig, int]]:
        """
        Each block config with the side of its (square) input map.
        """
        size = self.stem_output_size()
        layout = []
        for block in self.block_configs():
            layout.append((block, size))
            size = block.output_size(size, size)[0]
        return layout

    @property
    def final_channels(self) -> int:
        return self.block_configs()[-1].cout

    @property
    def gate_count(self) -> int:
        return sum(b.gate_count for b in self.block_configs())


class GatedResNet(Module):
    def __init__(self, config: NetworkConfig, seed: int = 0):
        super().__init__()
        self.config = config
        # separate streams so a gated model and its ungated baseline share backbone weights
        rng = np.random.default_rng(seed)
        gate_rng = np.random.default_rng([seed, 1])
        self.stem = Conv2d(IN_CHANNELS, config.stem_width, config.stem_kernel, 2 if config.stem == "imagenet" else 1, rng=rng)
        self.stem_norm = BatchNorm(config.stem_width)
        self.blocks = [GatedBlock(b, rng=rng, gate_rng=gate_rng) for b in config.block_configs()]
        self.fc = Linear(config.final_channels, config.classes, rng=rng)

    def __repr__(self):
        return f"GatedResNet({len(self.blocks)} blocks, {self.gate_count} gates, {self.parameter_count()} parameters)"

    @property
    def gate_count(self) -> int:
        return self.config.gate_count

    def gate_widths(self) -> List[int]:
        # gates per gated block, block-major order
        return [b.gate_count() for b in self.blocks if b.config.gated]

    def forward(
        self,
        x: Tensor,
        rng: Optional[np.random.Generator] = None,
        force: Optional[Sequence[Optional[np.ndarray]]] = None,
    ) -> Tuple[Tensor, List[GateOutput]]:
        """
        Class logits and the GateOutput of every gated block. `force`
        holds one mask (or None) per gated block.
        """
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != IN_CHANNELS:
            raise ValueError(f"GatedResNet: expected [N, {IN_CHANNELS}, H, W] input, got {x.shape}")
        if force is not None and len(force) != len(self.gate_widths()):
            raise ValueError(f"GatedResNet: {len(force)} forced masks for {len(self.gate_widths())} gated blocks")

        h = F.relu(self.stem_norm(self.stem(x)))
        if self.config.stem == "imagenet":
            h = F.max_pool2d(h, IMAGENET_POOL_KERNEL, 2, IMAGENET_POOL_KERNEL // 2)

        outputs = []
        gated_index = 0
        for block in self.blocks:
            block_force = None
            if block.config.gated and force is not None:
                block_force = force[gated_index]
            h, gates = block(h, rng=rng, force=block_force)
            if gates is not None:
                outputs.append(gates)
                gated_index += 1
        return self.fc(F.global_avg_pool(h)), outputs


def gate_bits(outputs: Sequence[GateOutput]) -> np.ndarray:
    """
    Hard decisions of one forward pass as an [N, total gates] uint8 matrix,
    block-major then channel.
    """
    if len(outputs) == 0:
        return np.zeros((0, 0), dtype=np.uint8)
    return np.concatenate([o.hard for o in outputs], axis=1).astype(np.uint8)


def build_network(config: NetworkConfig, seed: int = 0) -> GatedResNet:
    model = GatedResNet(config, seed)
    logger.debug(f"build_network: {model}")
    return model
