# Gating module constants

HIDDEN_WIDTH: int = 16
TEMPERATURE: float = 2.0 / 3.0

# final layer bias: gates start mostly open
GATE_BIAS_INIT: float = 2.0

# lower bound of the uniform draw behind the logistic noise
NOISE_TINY: float = 1e-12

# pooling adds per MAC when folding pooling into the overhead figure
ADDS_PER_MAC: int = 2
