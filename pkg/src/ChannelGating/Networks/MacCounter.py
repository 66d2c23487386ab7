"""
Multiply-accumulate and parameter accounting for gated residual networks.

dense        every convolution and the classifier, no gating modules
full         dense plus the affine layers of the gating modules
conditional  per example: gated convolutions at the active-gate count,
             plus the gating modules
"""

import logging
from dataclasses import dataclass
from typing import Any, List, Optional

import numpy as np

from ..Gating.constants import HIDDEN_WIDTH
from ..Gating.GateModule import gate_overhead_macs
from .constants import IN_CHANNELS
from .GatedResNet import GatedResNet, NetworkConfig

logger = logging.getLogger("MacCounter")


@dataclass
class MacReport:
    dense: int
    full: int
    gate_overhead: int
    aux_ops: int
    block_macs: List[int]
    conditional: Optional[np.ndarray] = None  # int64 per example

    @property
    def average_conditional(self) -> float:
        if self.conditional is None or len(self.conditional) == 0:
            return float(self.full)
        return float(self.conditional.mean())

    @property
    def conditional_fraction(self) -> float:
        return self.average_conditional / self.full if self.full else 1.0


@dataclass
class ParamReport:
    total: int
    average_active: float


def _network_config(model: Any) -> NetworkConfig:
    if isinstance(model, NetworkConfig):
        return model
    if isinstance(model, GatedResNet):
        return model.config
    raise ValueError(f"mac_count: expected a GatedResNet or NetworkConfig, got {type(model).__name__}")


def _trace_bits(config: NetworkConfig, traces: Any) -> np.ndarray:
    bits = np.asarray(getattr(traces, "bits", traces))
    if bits.ndim != 2 or bits.shape[1] != config.gate_count:
        raise ValueError(f"mac_count: trace of shape {bits.shape} does not match a model with {config.gate_count} gates")
    return bits


def active_counts(config: NetworkConfig, bits: np.ndarray) -> np.ndarray:
    """
    [examples, gated blocks] count of open gates, from block-major bits.
    """
    widths = [b.gate_count for b in config.block_configs() if b.gated]
    edges = np.cumsum([0] + widths)
    totals = np.concatenate([np.zeros((bits.shape[0], 1), dtype=np.int64), np.cumsum(bits, axis=1, dtype=np.int64)], axis=1)
    return totals[:, edges[1:]] - totals[:, edges[:-1]]


def mac_count(model: Any, traces: Any = None, resolution: Optional[int] = None) -> MacReport:
    config = _network_config(model)
    if resolution is not None and resolution != config.resolution:
        raise ValueError(f"mac_count: resolution {resolution} does not match the model's {config.resolution}")

    stem_size = config.stem_conv_size()
    stem = IN_CHANNELS * config.stem_width * config.stem_kernel**2 * stem_size * stem_size
    classifier = config.final_channels * config.classes
    layout = config.layout()

    block_macs = [b.conv_macs(s, s) for b, s in layout]
    overheads = [gate_overhead_macs(b, s, s).macs for b, s in layout if b.gated]
    dense = stem + classifier + sum(block_macs)
    overhead = sum(overheads)

    aux = 2 * config.stem_width * stem_size * stem_size + sum(b.aux_ops(s, s) for b, s in layout)
    last_block, last_size = layout[-1]
    out_size = last_block.output_size(last_size, last_size)[0]
    aux += config.final_channels * out_size * out_size  # global average pooling

    report = MacReport(
        dense=dense, full=dense + overhead, gate_overhead=overhead, aux_ops=aux, block_macs=block_macs
    )
    if traces is not None:
        active = active_counts(config, _trace_bits(config, traces))
        conditional = np.full(active.shape[0], stem + classifier + overhead, dtype=np.int64)
        gated = [(b, s) for b, s in layout if b.gated]
        for j, (b, s) in enumerate(gated):
            # MACs are affine in the active count
            base = b.conv_macs(s, s, 0)
            per_gate = b.gated_conv_macs(s, s, 1)
            conditional += base + per_gate * active[:, j]
        conditional += sum(m for (b, _), m in zip(layout, block_macs) if not b.gated)
        report.conditional = conditional
        logger.debug(f"mac_count: {len(conditional)} examples, average {report.average_conditional:.4g} of {report.full}")
    return report


def param_count(model: Any, traces: Any = None) -> ParamReport:
    """
    Total parameters (gating modules included) and, given traces, the
    average number in use per example.
    """
    config = _network_config(model)
    if isinstance(model, GatedResNet):
        total = model.parameter_count()
    else:
        total = config_param_count(config)
    if traces is None:
        return ParamReport(total=total, average_active=float(total))

    active = active_counts(config, _trace_bits(config, traces))
    gated = [b for b in config.block_configs() if b.gated]
    unused = np.zeros(active.shape[0], dtype=np.int64)
    for j, b in enumerate(gated):
        unused += b.param_count() - b.param_count(0) - (b.param_count(1) - b.param_count(0)) * active[:, j]
    return ParamReport(total=total, average_active=float(total - unused.mean()))


def config_param_count(config: NetworkConfig) -> int:
    """
    Parameter count from the config alone, batch-norm scale/shift included.
    """
    count = IN_CHANNELS * config.stem_width * config.stem_kernel**2 + 2 * config.stem_width
    for b in config.block_configs():
        count += b.param_count()
        if b.gated:
            # two affine layers with biases and the hidden batch norm
            count += b.cin * HIDDEN_WIDTH + HIDDEN_WIDTH + 2 * HIDDEN_WIDTH + HIDDEN_WIDTH * b.cmid + b.cmid
    return count + config.final_channels * config.classes + config.classes
