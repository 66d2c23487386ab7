from .GateTrace import (
    GateTrace,
    GateTraceSet,
    TraceFormatError,
    check_macs,
    decode_trace,
    encode_trace,
    read_row,
    read_trace,
    write_trace,
)
from .GateStats import (
    GateClassification,
    class_selective_gates,
    classify_gates,
    firing_rates,
    gate_rows,
    mac_ranking,
    per_class_firing,
)
from .Export import export_all, read_two_column, write_two_column
