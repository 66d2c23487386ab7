"""
Plot-ready two-column data files: "x y" per line, with a "#" header line.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

from .GateStats import firing_rates, global_sort_order
from .GateTrace import GateTraceSet

logger = logging.getLogger("Export")


def write_two_column(path: str | Path, rows: Iterable[Tuple[float, float]], header: Tuple[str, str]) -> int:
    count = 0
    with open(path, "w") as fp:
        fp.write(f"# {header[0]} {header[1]}\n")
        for x, y in rows:
            fp.write(f"{x!r} {y!r}\n")
            count += 1
    logger.debug(f"write_two_column: {count} rows to {path}")
    return count


def read_two_column(path: str | Path) -> List[Tuple[float, float]]:
    rows = []
    with open(path) as fp:
        for n, line in enumerate(fp, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"read_two_column: {path}:{n}: expected 2 columns, got {len(parts)}")
            rows.append((float(parts[0]), float(parts[1])))
    return rows


def accuracy_vs_macs(summaries: Sequence[Dict[str, Any]]) -> List[Tuple[float, float]]:
    """
    (average conditional MACs, accuracy) of eval summaries, by increasing MACs.
    """
    points = [(float(s["average_macs"]), float(s["accuracy"])) for s in summaries]
    return sorted(points)


def load_summaries(paths: Sequence[str | Path]) -> List[Dict[str, Any]]:
    summaries = []
    for path in paths:
        with open(path) as fp:
            summaries.append(json.load(fp))
    return summaries


def gate_distribution(traces: GateTraceSet) -> List[List[Tuple[float, float]]]:
    """
    Per layer: (rank, firing rate), gates sorted by decreasing rate.
    """
    rates = firing_rates(traces)
    layers = []
    for s, order in zip(traces.layer_slices(), global_sort_order(traces)):
        layer = rates[s][order]
        layers.append([(float(rank), float(rate)) for rank, rate in enumerate(layer)])
    return layers


def export_all(
    out: str | Path,
    traces: GateTraceSet | None = None,
    summaries: Sequence[Dict[str, Any]] = (),
    schedule_rows: Iterable[Tuple[int, float, float, float]] = (),
) -> List[Path]:
    """
    Writes every file the inputs allow; returns their paths.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if summaries:
        path = out / "accuracy-vs-macs.dat"
        write_two_column(path, accuracy_vs_macs(summaries), ("macs", "accuracy"))
        written.append(path)
    if traces is not None:
        for layer, rows in enumerate(gate_distribution(traces)):
            path = out / f"gate-rates-layer{layer:02d}.dat"
            write_two_column(path, rows, ("rank", "rate"))
            written.append(path)
    schedule_rows = list(schedule_rows)
    if schedule_rows:
        for column, name in ((2, "lambda"), (3, "gamma")):
            path = out / f"schedule-{name}.dat"
            write_two_column(path, [(float(r[0]), float(r[column])) for r in schedule_rows], ("epoch", name))
            written.append(path)
    logger.info(f"export_all: {len(written)} files in {out}")
    return written
