# Tensor engine constants
from typing import Literal

import numpy as np

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64  # gradient-check mode only

LITTLE_ENDIAN: Literal["little", "big"] = "little"

# Batch normalization
BN_EPSILON: float = 1e-5
BN_MOMENTUM: float = 0.1

# Finite differences
FD_STEP: float = 1e-3
FD_RTOL_32: float = 1e-2
FD_RTOL_64: float = 1e-4

# Checkpoint file
CHECKPOINT_MAGIC: bytes = b"CGCK"
CHECKPOINT_VERSION: int = 1
