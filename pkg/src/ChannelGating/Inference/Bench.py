"""
Per-example latency of the dense, dense gated and sliced paths.

Timings use a monotonic clock. Each path runs WARMUP_RUNS untimed
examples first, then every example `repetitions` times.
"""

import logging
import threading
import time
from dataclasses import asdict, dataclass
from queue import Empty, Queue
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..Networks.GatedResNet import GatedResNet
from ..Networks.MacCounter import active_counts, mac_count, param_count
from .Slicer import NetworkSlicer

logger = logging.getLogger("Bench")
# logger.setLevel(logging.DEBUG)

WARMUP_RUNS = 10
DEFAULT_REPETITIONS = 5
ACTIVITY_LEVELS = (1.0, 0.5, 0.25, 0.1)
TABLE_SEPARATOR = "\t"


@dataclass
class LatencyStats:
    mean: float  # seconds per example
    std: float
    count: int

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "LatencyStats":
        samples = np.asarray(samples, dtype=np.float64)
        if len(samples) == 0:
            return cls(float("nan"), float("nan"), 0)
        return cls(float(samples.mean()), float(samples.std()), len(samples))

    def __str__(self):
        return f"{self.mean * 1e3:.3f} ± {self.std * 1e3:.3f} ms"


@dataclass
class BenchReport:
    model: str
    gates: str  # "learned" or "forced-<fraction>"
    dense: LatencyStats
    dense_gated: LatencyStats
    sliced: LatencyStats
    params_total: int
    params_average: float
    macs_full: int
    macs_average: float
    conv_mac_fraction: float
    accuracy: float

    @property
    def speedup(self) -> float:
        return self.dense.mean / self.sliced.mean if self.sliced.mean > 0 else float("nan")

    @property
    def sliced_to_dense(self) -> float:
        return self.sliced.mean / self.dense.mean if self.dense.mean > 0 else float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "BenchReport":
        d = dict(d)
        for name in ("dense", "dense_gated", "sliced"):
            d[name] = LatencyStats(**d[name])
        return cls(**d)


COLUMNS = (
    "model", "gates",
    "dense_mean", "dense_std", "dense_count",
    "dense_gated_mean", "dense_gated_std", "dense_gated_count",
    "sliced_mean", "sliced_std", "sliced_count",
    "params_total", "params_average", "macs_full", "macs_average",
    "conv_mac_fraction", "accuracy",
)


def _row(report: BenchReport) -> List[str]:
    values = [report.model, report.gates]
    for stats in (report.dense, report.dense_gated, report.sliced):
        values += [repr(stats.mean), repr(stats.std), str(stats.count)]
    values += [
        str(report.params_total), repr(report.params_average),
        str(report.macs_full), repr(report.macs_average),
        repr(report.conv_mac_fraction), repr(report.accuracy),
    ]
    return values


def format_table(reports: Sequence[BenchReport]) -> str:
    """
    Tab-separated table, one report per row. Floats are written with repr
    so that parse_table restores them exactly.
    """
    lines = [TABLE_SEPARATOR.join(COLUMNS)]
    for report in reports:
        row = _row(report)
        if any(TABLE_SEPARATOR in v or "\n" in v for v in row[:2]):
            raise ValueError(f"format_table: model and gate names cannot hold tabs or newlines: {row[:2]}")
        lines.append(TABLE_SEPARATOR.join(row))
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> List[BenchReport]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or tuple(lines[0].split(TABLE_SEPARATOR)) != COLUMNS:
        raise ValueError("parse_table: missing or unexpected header line")
    reports = []
    for n, line in enumerate(lines[1:], start=2):
        v = line.split(TABLE_SEPARATOR)
        if len(v) != len(COLUMNS):
            raise ValueError(f"parse_table: line {n}: expected {len(COLUMNS)} columns, got {len(v)}")
        latency = [LatencyStats(float(v[i]), float(v[i + 1]), int(v[i + 2])) for i in (2, 5, 8)]
        reports.append(
            BenchReport(
                model=v[0],
                gates=v[1],
                dense=latency[0],
                dense_gated=latency[1],
                sliced=latency[2],
                params_total=int(v[11]),
                params_average=float(v[12]),
                macs_full=int(v[13]),
                macs_average=float(v[14]),
                conv_mac_fraction=float(v[15]),
                accuracy=float(v[16]),
            )
        )
    return reports


def forced_masks(model: GatedResNet, fraction: float, seed: int = 0) -> List[np.ndarray]:
    """
    One fixed mask per gated block with round(fraction·cmid) open gates
    (at least one while fraction > 0).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"forced_masks: fraction {fraction} outside [0, 1]")
    rng = np.random.default_rng(seed)
    masks = []
    for cmid in model.gate_widths():
        active = int(round(fraction * cmid))
        if fraction > 0:
            active = max(active, 1)
        mask = np.zeros(cmid, dtype=np.uint8)
        mask[rng.choice(cmid, size=active, replace=False)] = 1
        masks.append(mask)
    return masks


def conv_mac_fraction(model: GatedResNet, bits: np.ndarray) -> float:
    """
    Average gated-convolution MACs over their value with every gate open.
    """
    config = model.config
    gated = [(b, s) for b, s in config.layout() if b.gated]
    if not gated:
        return 1.0
    active = active_counts(config, bits).mean(axis=0)
    used = sum(b.gated_conv_macs(s, s, 1) * a for (b, s), a in zip(gated, active))
    total = sum(b.gated_conv_macs(s, s) for b, s in gated)
    return float(used / total)


def _model_name(model: GatedResNet) -> str:
    c = model.config
    depth = sum(c.blocks) * (2 if c.block == "basic" else 3) + 2
    gated = "gated" if c.gated else "dense"
    return f"resnet{depth}x{c.multiplier}-{gated}"


def _time_path(run: Callable[[np.ndarray], Any], images: np.ndarray, repetitions: int) -> LatencyStats:
    for i in range(WARMUP_RUNS):
        run(images[i % len(images)][None])
    samples = []
    for _ in range(repetitions):
        for image in images:
            start = time.perf_counter()
            run(image[None])
            samples.append(time.perf_counter() - start)
    return LatencyStats.from_samples(samples)


def bench(
    model: GatedResNet,
    images: np.ndarray,
    labels: Optional[np.ndarray] = None,
    repetitions: int = DEFAULT_REPETITIONS,
    force_fraction: Optional[float] = None,
    seed: int = 0,
    name: Optional[str] = None,
) -> BenchReport:
    """
    Times the three inference paths one example at a time on normalized
    images [N, 3, H, W]. Gate decisions come from the model unless
    force_fraction pins a fixed fraction of every block open.
    """
    if len(images) == 0:
        raise ValueError("bench: no images")
    if repetitions < 1:
        raise ValueError(f"bench: repetitions must be at least 1, got {repetitions}")
    model.eval()
    images = np.asarray(images, dtype=model.stem.weight.data.dtype)
    force = forced_masks(model, force_fraction, seed) if force_fraction is not None else None
    slicer = NetworkSlicer(model)

    predictions, bits = [], []
    for image in images:
        logits, b = slicer.sliced(image[None], force)
        predictions.append(int(logits.argmax(axis=1)[0]))
        bits.append(np.concatenate(b, axis=1) if b else np.zeros((1, 0), dtype=np.uint8))
    bits = np.concatenate(bits)
    accuracy = float(np.mean(np.asarray(predictions) == labels)) if labels is not None else float("nan")

    logger.info(f"bench: {len(images)} examples × {repetitions}..")
    dense = _time_path(slicer.dense, images, repetitions)
    dense_gated = _time_path(lambda x: slicer.dense_gated(x, force), images, repetitions)
    sliced = _time_path(lambda x: slicer.sliced(x, force), images, repetitions)
    logger.info(f"bench: ..done, dense {dense}, sliced {sliced}")

    macs = mac_count(model, bits)
    params = param_count(model, bits)
    return BenchReport(
        model=name or _model_name(model),
        gates="learned" if force_fraction is None else f"forced-{force_fraction:g}",
        dense=dense,
        dense_gated=dense_gated,
        sliced=sliced,
        params_total=params.total,
        params_average=params.average_active,
        macs_full=macs.full,
        macs_average=macs.average_conditional,
        conv_mac_fraction=conv_mac_fraction(model, bits),
        accuracy=accuracy,
    )


def activity_sweep(
    model: GatedResNet,
    images: np.ndarray,
    repetitions: int = DEFAULT_REPETITIONS,
    levels: Sequence[float] = ACTIVITY_LEVELS,
    seed: int = 0,
) -> List[BenchReport]:
    """
    Sliced latency at decreasing forced activity.
    """
    return [bench(model, images, repetitions=repetitions, force_fraction=f, seed=seed) for f in levels]


class SlicedPredictor:
    """
    Sliced inference over a set of images with worker threads sharing the
    read-only model; each worker owns its NetworkSlicer and slice buffers.
    """

    def __init__(self, model: GatedResNet, workers: int = 2, timeout: float = 1.0):
        if workers < 1:
            raise ValueError(f"SlicedPredictor: need at least one worker, got {workers}")
        model.eval()
        self.model = model
        self.workers = workers
        self.timeout = timeout
        self.todo: Queue = Queue()
        self.done: Queue = Queue()
        self.running = False
        self.threads: List[threading.Thread] = []

    def start(self):
        self.running = True
        for i in range(self.workers):
            t = threading.Thread(target=self._work, name=f"SlicedPredictor::worker{i}", daemon=True)
            self.threads.append(t)
            t.start()
        logger.debug(f"start: {self.workers} workers started")

    def stop(self):
        self.running = False
        for t in self.threads:
            t.join(timeout=2 * self.timeout)
            if t.is_alive():
                logger.warning(f"stop: {t.name} did not finish cleanly")
        self.threads = []

    def _work(self):
        slicer = NetworkSlicer(self.model)
        while self.running:
            try:
                index, image = self.todo.get(timeout=self.timeout)
            except Empty:
                continue
            try:
                logits, bits = slicer.sliced(image[None])
                self.done.put((index, logits[0], bits, None))
            except Exception as e:
                logger.warning(f"_work: example {index} failed", exc_info=1)
                self.done.put((index, None, None, e))

    def predict(self, images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Logits [N, classes] and gate bits [N, gates], in input order.
        """
        images = np.asarray(images, dtype=self.model.stem.weight.data.dtype)
        started = not self.running
        if started:
            self.start()
        try:
            for index, image in enumerate(images):
                self.todo.put((index, image))
            logits = np.zeros((len(images), self.model.config.classes), dtype=images.dtype)
            bits = np.zeros((len(images), self.model.gate_count), dtype=np.uint8)
            failure = None
            # collect every result, failed or not, so none is left for the next call
            for _ in range(len(images)):
                index, row, b, error = self.done.get()
                if error is not None:
                    failure = failure or error
                    continue
                logits[index] = row
                if b:
                    bits[index] = np.concatenate(b, axis=1)[0]
            if failure is not None:
                raise failure
        finally:
            if started:
                self.stop()
        return logits, bits
