# Artifact file names written by the experiment commands
CONFIG_COPY_FILE = "config.yaml"
TRACE_FILE = "gates.trace"
SUMMARY_FILE = "summary.json"
GATES_CSV_FILE = "gates.csv"
ANALYSIS_FILE = "analysis.json"
BENCH_TABLE_FILE = "bench.tsv"
BENCH_JSON_FILE = "bench.json"
GRADCHECK_FILE = "gradcheck.json"
EXPORT_DIRECTORY = "plots"

COMMANDS = ("train", "eval", "bench", "analyze", "gradcheck", "export")

BENCH_EXAMPLES = 20
TOP_K = 10
