"""
SGD with Nesterov momentum and per-group weight decay.

Gating-module parameters (any parameter path with a "gate" component) get
their own weight decay, zero unless configured.
"""

import logging
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from ..Tensors import Tensor

logger = logging.getLogger("Optimizer")

GATE_COMPONENT = "gate"


def is_gating_parameter(name: str) -> bool:
    return GATE_COMPONENT in name.split(".")


class NesterovSGD:
    def __init__(
        self,
        named_parameters: Iterable[Tuple[str, Tensor]],
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        gate_weight_decay: float = 0.0,
        nesterov: bool = True,
    ):
        self.params: Dict[str, Tensor] = dict(named_parameters)
        self.lr = lr
        self.momentum = momentum
        self.nesterov = nesterov
        self.decay = {
            name: gate_weight_decay if is_gating_parameter(name) else weight_decay for name in self.params
        }
        self.velocity: Dict[str, np.ndarray] = {}
        gating = sum(1 for name in self.params if is_gating_parameter(name))
        logger.debug(f"__init__: {len(self.params)} parameters, {gating} in gating modules")

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self.params.values() if p.grad is not None)))

    def step(self, lr: Optional[float] = None, clip_norm: Optional[float] = None):
        """
        v ← μv + g + wd·w ;  w ← w − lr·(g + wd·w + μv)   (nesterov)
        """
        lr = self.lr if lr is None else lr
        scale = 1.0
        if clip_norm is not None:
            norm = self.grad_norm()
            if norm > clip_norm:
                scale = clip_norm / norm
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad if scale == 1.0 else p.grad * scale
            if self.decay[name]:
                g = g + self.decay[name] * p.data
            if self.momentum:
                v = self.velocity.get(name)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = g + self.momentum * v if self.nesterov else v
            p.data -= (lr * g).astype(p.data.dtype)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {f"velocity.{name}": v for name, v in self.velocity.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.velocity = {}
        for key, value in state.items():
            name = key.removeprefix("velocity.")
            if name not in self.params:
                raise ValueError(f"load_state_dict: no parameter named '{name}'")
            self.velocity[name] = np.array(value, dtype=self.params[name].data.dtype)
