from .PriorSpec import PriorSpec, cdf, pdf, regularized_incomplete_beta
from .BatchShaping import ShapingConfig, shaping_loss, network_shaping_loss, cvm_distance, plotting_positions
