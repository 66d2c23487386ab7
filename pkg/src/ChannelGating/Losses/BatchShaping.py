"""
Batch-shaping loss.

Sort a batch of N values of a feature, compare the prior CDF at the sorted
values with the plotting positions i/(N+1), and sum the squared errors
(Cramer-von Mises). The gradient goes through the sort by keeping the
sorted indices: the error computed at sorted position j belongs to the
sample that was sorted there.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..Tensors import Function, Tensor, as_tensor
from ..Tensors.Kernels import stable_argsort, undo_sort
from .PriorSpec import PriorSpec

logger = logging.getLogger("BatchShaping")


@dataclass(frozen=True)
class ShapingConfig:
    prior: PriorSpec
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"ShapingConfig: lambda must be nonnegative, got {self.lam}")


def plotting_positions(n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


class ShapingLoss(Function):
    """
    Loss of one [N] vector or of the M columns of an [N, M] matrix, each
    column being one gate. Per-gate terms are (lam/N) * sum of squared CDF
    errors; columns are accumulated left to right.
    """

    def forward(self, x, prior=None, lam=1.0):
        n = x.shape[0]
        x2 = x.reshape(n, -1)
        permutation = stable_argsort(x2, axis=0)
        x_sorted = np.take_along_axis(x2, permutation, axis=0).astype(np.float64)
        p_cdf = prior.cdf(x_sorted)
        p_pdf = prior.pdf(x_sorted)
        e_cdf = plotting_positions(n)[:, None]
        error = e_cdf - p_cdf
        scale = lam / n

        # reduce along the contiguous axis so one column sums exactly like a lone vector
        per_gate = (np.ascontiguousarray((error * error).T).sum(axis=1) * scale).astype(x.dtype)
        total = per_gate[0] if len(per_gate) else x.dtype.type(0)
        for term in per_gate[1:]:
            total = total + term

        self.saved.update(permutation=permutation, p_pdf=p_pdf, error=error, scale=scale)
        return np.asarray(total)

    def backward(self, grad):
        s = self.saved
        x = self.inputs[0]
        g_sorted = s["scale"] * -2.0 * s["p_pdf"] * s["error"]
        g = undo_sort(g_sorted, s["permutation"], axis=0).reshape(x.shape)
        return ((g * grad).astype(x.data.dtype),)


def shaping_loss(samples: Tensor, config: ShapingConfig) -> Tensor:
    """
    (lam/N) * sum_i (i/(N+1) - F(x*_i))^2 over the ascending-sorted samples.
    """
    samples = as_tensor(samples)
    if samples.ndim == 0 or samples.shape[0] < 1:
        raise ValueError(f"shaping_loss: need at least one sample, got shape {samples.shape}")
    return ShapingLoss.apply(samples, prior=config.prior, lam=config.lam)


def network_shaping_loss(gate_batches: Sequence[Tensor], config: ShapingConfig) -> Tensor:
    """
    Sum of shaping_loss over every gate unit. Each entry is one [N] gate
    vector or an [N, C] block of C gate vectors; all share the batch length N.
    """
    if len(gate_batches) == 0:
        return Tensor(0.0)
    lengths = {as_tensor(g).shape[0] if as_tensor(g).ndim else 0 for g in gate_batches}
    if len(lengths) != 1:
        raise ValueError(f"network_shaping_loss: gate batches have different lengths {sorted(lengths)}")

    total = None
    for g in gate_batches:
        term = shaping_loss(g, config)
        total = term if total is None else total + term
    return total


def cvm_distance(samples, prior: PriorSpec) -> float:
    """
    Cramer-von Mises distance between the batch and the prior (shaping loss at lam = 1).
    """
    return float(shaping_loss(Tensor(np.asarray(samples)), ShapingConfig(prior=prior, lam=1.0)).item())
