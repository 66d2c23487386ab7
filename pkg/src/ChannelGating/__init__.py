__NAME__ = "channel-gating"
__DESCRIPTION__ = "Channel-gated residual networks trained with batch-shaping and L0 losses, with sliced inference."
__LICENSE__ = "MIT"
__LICENSEURL__ = "https://mit-license.org"
__version__ = "1.0.0"
__version_info__ = tuple(map(int, __version__.split(".")))


from .Tensors import Tensor, backward, precision
from .Losses import PriorSpec, ShapingConfig, shaping_loss, network_shaping_loss
from .Gating import GateModule, GateOutput, l0_loss
from .Networks import GatedResNet, NetworkConfig, build_network, mac_count, param_count
