# Network architecture presets
from typing import Dict, Any

BLOCK_KINDS = ("basic", "bottleneck")
BOTTLENECK_EXPANSION = 4

# name -> stem, block kind, stage widths, blocks per stage, resolution, classes
ARCHITECTURES: Dict[str, Dict[str, Any]] = {
    "resnet20": {"stem": "cifar", "block": "basic", "widths": [16, 32, 64], "blocks": [3, 3, 3], "resolution": 32, "classes": 10},
    "resnet32": {"stem": "cifar", "block": "basic", "widths": [16, 32, 64], "blocks": [5, 5, 5], "resolution": 32, "classes": 10},
    "resnet38": {"stem": "cifar", "block": "basic", "widths": [16, 32, 64], "blocks": [6, 6, 6], "resolution": 32, "classes": 10},
    # 8 gated blocks, the desk-scale model
    "desk8": {"stem": "cifar", "block": "basic", "widths": [16, 32, 64, 128], "blocks": [2, 2, 2, 2], "resolution": 32, "classes": 10},
    "resnet18": {"stem": "imagenet", "block": "basic", "widths": [64, 128, 256, 512], "blocks": [2, 2, 2, 2], "resolution": 224, "classes": 1000},
    "resnet34": {"stem": "imagenet", "block": "basic", "widths": [64, 128, 256, 512], "blocks": [3, 4, 6, 3], "resolution": 224, "classes": 1000},
    "resnet50": {"stem": "imagenet", "block": "bottleneck", "widths": [64, 128, 256, 512], "blocks": [3, 4, 6, 3], "resolution": 224, "classes": 1000},
}

STEM_KINDS = ("cifar", "imagenet")
IN_CHANNELS = 3

# imagenet stem: 7x7 stride-2 convolution, then 3x3 stride-2 max pooling
IMAGENET_STEM_KERNEL = 7
IMAGENET_POOL_KERNEL = 3
