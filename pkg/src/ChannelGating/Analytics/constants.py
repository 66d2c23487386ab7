# Gate trace format and analytics thresholds
LITTLE_ENDIAN = "little"

TRACE_MAGIC = b"CGTR"
TRACE_VERSION = 1
U32_MAX = 2**32 - 1

ON_THRESHOLD = 0.99
OFF_THRESHOLD = 0.01
MIN_TRACES = 100

ALWAYS_ON = "always-on"
ALWAYS_OFF = "always-off"
CONDITIONAL = "conditional"
GATE_LABELS = (ALWAYS_ON, ALWAYS_OFF, CONDITIONAL)

# category-specific gates: rarely on overall, mostly on for a few classes
BARELY_ON_RATE = 0.1
SELECTIVE_CLASS_RATE = 0.5
