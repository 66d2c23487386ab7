from .BlockConfig import GatedBlockConfig
from .GatedBlock import GatedBlock, gated_block_forward
from .GatedResNet import GatedResNet, NetworkConfig, build_network, gate_bits
from .MacCounter import MacReport, ParamReport, mac_count, param_count, config_param_count, active_counts
