from .Tensor import Tensor, Function, backward, precision, get_dtype, as_tensor, zeros
from .Functional import (
    conv2d,
    batch_norm,
    max_pool2d,
    relu,
    sigmoid,
    affine,
    global_avg_pool,
    channel_mul,
    cross_entropy,
    sort_with_indices,
    straight_through,
)
from .Checkpoint import save_checkpoint, load_checkpoint, CheckpointFormatError
from .Module import Module, Conv2d, BatchNorm, Linear
