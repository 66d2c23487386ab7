from .Slicer import (
    BlockSlicer,
    NetworkSlicer,
    SlicePlan,
    dense_block_forward,
    gate_decisions,
    sliced_block_forward,
    sliced_forward,
)
from .Bench import BenchReport, LatencyStats, SlicedPredictor, bench, activity_sweep, forced_masks, format_table, parse_table
