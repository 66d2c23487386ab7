"""
Parameter containers: Module base class and the dense layers built on it.
"""

import logging
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import Functional as F
from .constants import BN_EPSILON, BN_MOMENTUM
from .Tensor import Tensor, get_dtype

logger = logging.getLogger("Module")


class Module:
    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__}: forward not implemented")

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> Iterator[Tensor]:
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = sorted(set(targets) - set(state))
        unexpected = sorted(set(state) - set(targets))
        if missing or unexpected:
            raise ValueError(f"load_state_dict: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, target in targets.items():
            if state[name].shape != target.shape:
                raise ValueError(f"load_state_dict: {name}: shape {state[name].shape} does not match {target.shape}")
            target[...] = state[name]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.k, self.stride, self.padding = cin, cout, k, stride, k // 2
        # He initialization over fan-out
        std = np.sqrt(2.0 / max(cout * k * k, 1))
        self.weight = Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.shift = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=get_dtype())
        self.running_var = np.ones(channels, dtype=get_dtype())

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.scale, self.shift, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Linear(Module):
    def __init__(self, cin: int, cout: int, bias_init: Optional[float] = None, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(max(cin, 1))
        self.weight = Tensor(rng.uniform(-bound, bound, size=(cout, cin)), requires_grad=True)
        bias = np.full(cout, bias_init) if bias_init is not None else rng.uniform(-bound, bound, size=cout)
        self.bias = Tensor(bias, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.affine(x, self.weight, self.bias)
