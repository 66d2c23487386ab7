"""
Central finite-difference gradient checks.

A check takes a closure returning a scalar Tensor and the tensors to
differentiate. The closure must be deterministic: every call has to see the
same noise and the same batch.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import FD_STEP
from .Tensor import Tensor, backward

logger = logging.getLogger("Gradcheck")


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Largest absolute deviation over the largest magnitude involved.
    """
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, index: Tuple[int, ...], step: float = FD_STEP) -> float:
    original = tensor.data[index].copy()
    tensor.data[index] = original + step
    plus = float(fn().item())
    tensor.data[index] = original - step
    minus = float(fn().item())
    tensor.data[index] = original
    return (plus - minus) / (2.0 * step)


def sample_indices(tensors: Sequence[Tensor], count: Optional[int], rng: np.random.Generator) -> List[Tuple[int, Tuple[int, ...]]]:
    sizes = np.cumsum([0] + [t.size for t in tensors])
    total = int(sizes[-1])
    if count is None or count >= total:
        picks = np.arange(total)
    else:
        picks = np.sort(rng.choice(total, size=count, replace=False))
    chosen = []
    for flat in picks:
        t = int(np.searchsorted(sizes, flat, side="right")) - 1
        chosen.append((t, np.unravel_index(int(flat - sizes[t]), tensors[t].shape)))
    return chosen


def check_gradients(
    name: str,
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    tolerance: float,
    step: float = FD_STEP,
    samples: Optional[int] = None,
    seed: int = 0,
) -> GradcheckResult:
    """
    Compare backward() against central differences on all entries, or on
    `samples` randomly chosen entries across the given tensors.
    """
    for t in tensors:
        t.grad = None
    analytic = backward(fn(), tensors)

    chosen = sample_indices(tensors, samples, np.random.default_rng(seed))
    a = np.array([analytic[t][index] for t, index in chosen], dtype=np.float64)
    n = np.array([numerical_gradient(fn, tensors[t], index, step) for t, index in chosen], dtype=np.float64)

    result = GradcheckResult(name=name, max_rel_error=relative_error(a, n), checked=len(chosen), tolerance=tolerance)
    logger.debug(f"check_gradients: {name}: rel err {result.max_rel_error:.3e} over {result.checked} entries")
    return result
