"""
Shape description of one residual block and its multiply-accumulate arithmetic.

MAC convention: one multiply-accumulate per weight-activation product.
Batch norm, ReLU, pooling and residual adds are not MACs; they are counted
separately as auxiliary operations.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

from ..Tensors.Kernels import conv_output_size
from .constants import BLOCK_KINDS


@dataclass(frozen=True)
class GatedBlockConfig:
    """
    A basic block is conv k×k (cin→cmid, stride) → conv k×k (cmid→cout).
    A bottleneck block is conv 1×1 (cin→cmid) → conv 3×3 (cmid→cmid, stride)
    → conv 1×1 (cmid→cout). The gates sit on the cmid channels that feed the
    last convolution, one gate per channel.
    """

    cin: int
    cmid: int
    cout: int
    k: int = 3
    stride: int = 1
    has_projection_shortcut: bool = False
    kind: str = "basic"
    gated: bool = True

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"GatedBlockConfig: unknown block kind '{self.kind}'")
        if min(self.cin, self.cout) < 1 or self.cmid < 0:
            raise ValueError(f"GatedBlockConfig: invalid channel counts {self.cin}/{self.cmid}/{self.cout}")
        if self.k % 2 != 1:
            raise ValueError(f"GatedBlockConfig: kernel must be odd, got {self.k}")
        if self.needs_projection and not self.has_projection_shortcut:
            raise ValueError(
                f"GatedBlockConfig: stride {self.stride} with {self.cin}→{self.cout} channels needs a projection shortcut"
            )

    @classmethod
    def make(cls, cin: int, cmid: int, cout: int, **kwargs) -> "GatedBlockConfig":
        stride = kwargs.get("stride", 1)
        kwargs.setdefault("has_projection_shortcut", stride > 1 or cin != cout)
        return cls(cin, cmid, cout, **kwargs)

    @property
    def needs_projection(self) -> bool:
        return self.stride > 1 or self.cin != self.cout

    @property
    def gate_count(self) -> int:
        return self.cmid if self.gated else 0

    def output_size(self, h: int, w: int) -> Tuple[int, int]:
        k = self.k if self.kind == "basic" else 3
        return conv_output_size(h, k, self.stride, k // 2), conv_output_size(w, k, self.stride, k // 2)

    def gated_conv_macs(self, h: int, w: int, active: Optional[int] = None) -> int:
        """
        MACs of the two convolutions adjacent to the gates, with `active` of the cmid channels open.
        """
        a = self.cmid if active is None else active
        ho, wo = self.output_size(h, w)
        if self.kind == "basic":
            return self.cin * a * self.k * self.k * ho * wo + a * self.cout * self.k * self.k * ho * wo
        return self.cmid * a * 9 * ho * wo + a * self.cout * ho * wo

    def conv_macs(self, h: int, w: int, active: Optional[int] = None) -> int:
        """
        MACs of every convolution in the block, the projection shortcut included.
        """
        ho, wo = self.output_size(h, w)
        macs = self.gated_conv_macs(h, w, active)
        if self.kind == "bottleneck":
            macs += self.cin * self.cmid * h * w
        if self.has_projection_shortcut:
            macs += self.cin * self.cout * ho * wo
        return macs

    def aux_ops(self, h: int, w: int, active: Optional[int] = None) -> int:
        """
        Batch-norm affine maps, ReLUs and the residual add, one op per element.
        """
        a = self.cmid if active is None else active
        ho, wo = self.output_size(h, w)
        if self.kind == "basic":
            mid = 2 * a * ho * wo  # BN1, ReLU1 (mask multiply is free)
        else:
            mid = 2 * self.cmid * h * w + 2 * a * ho * wo
        out = 3 * self.cout * ho * wo  # BN, add, ReLU
        if self.has_projection_shortcut:
            out += self.cout * ho * wo
        return mid + out

    def param_count(self, active: Optional[int] = None) -> int:
        """
        Convolution and batch-norm parameters in use with `active` gated channels.
        """
        a = self.cmid if active is None else active
        if self.kind == "basic":
            count = self.cin * a * self.k * self.k + 2 * a + a * self.cout * self.k * self.k + 2 * self.cout
        else:
            count = (
                self.cin * self.cmid + 2 * self.cmid
                + self.cmid * a * 9 + 2 * a
                + a * self.cout + 2 * self.cout
            )
        if self.has_projection_shortcut:
            count += self.cin * self.cout + 2 * self.cout
        return count
