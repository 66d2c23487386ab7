"""
Gate behaviour over a set of traces: always-on / always-off / conditional
labels, per-class firing histograms, MAC rankings and class-selective gates.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .constants import (
    ALWAYS_OFF,
    ALWAYS_ON,
    BARELY_ON_RATE,
    CONDITIONAL,
    MIN_TRACES,
    OFF_THRESHOLD,
    ON_THRESHOLD,
    SELECTIVE_CLASS_RATE,
)
from .GateTrace import GateTraceSet

logger = logging.getLogger("GateStats")


def firing_rates(traces: GateTraceSet) -> np.ndarray:
    if len(traces) == 0:
        raise ValueError("firing_rates: empty trace set")
    return traces.bits.mean(axis=0, dtype=np.float64)


def label_fractions(labels: np.ndarray) -> Dict[str, float]:
    """
    Fraction of each label; the three values add up to exactly 1.
    """
    if len(labels) == 0:
        return {ALWAYS_ON: 0.0, ALWAYS_OFF: 0.0, CONDITIONAL: 0.0}
    n = len(labels)
    on = np.count_nonzero(labels == ALWAYS_ON) / n
    off = np.count_nonzero(labels == ALWAYS_OFF) / n
    return {ALWAYS_ON: on, ALWAYS_OFF: off, CONDITIONAL: 1.0 - (on + off)}


@dataclass
class GateClassification:
    rates: np.ndarray
    labels: np.ndarray  # one of GATE_LABELS per gate
    per_layer: List[Dict[str, float]]
    overall: Dict[str, float]
    thresholds: Tuple[float, float]


def classify_gates(
    traces: GateTraceSet, on_threshold: float = ON_THRESHOLD, off_threshold: float = OFF_THRESHOLD
) -> GateClassification:
    """
    A gate is always-on above on_threshold, always-off below off_threshold
    and conditional otherwise.
    """
    if len(traces) == 0:
        raise ValueError("classify_gates: empty trace set")
    if traces.gate_count == 0:
        raise ValueError("classify_gates: traces hold no gates")
    if not 0.0 <= off_threshold < on_threshold <= 1.0:
        raise ValueError(f"classify_gates: need 0 <= off < on <= 1, got on={on_threshold}, off={off_threshold}")
    if len(traces) < MIN_TRACES:
        logger.warning(f"classify_gates: only {len(traces)} traces, rates are coarse")

    rates = firing_rates(traces)
    labels = np.full(rates.shape, CONDITIONAL, dtype=object)
    labels[rates > on_threshold] = ALWAYS_ON
    labels[rates < off_threshold] = ALWAYS_OFF
    per_layer = [label_fractions(labels[s]) for s in traces.layer_slices()]
    return GateClassification(
        rates=rates,
        labels=labels,
        per_layer=per_layer,
        overall=label_fractions(labels),
        thresholds=(on_threshold, off_threshold),
    )


def gate_rows(traces: GateTraceSet, classification: GateClassification) -> List[Tuple[int, int, float, str]]:
    """
    (layer, index, rate, label) for every gate.
    """
    rows = []
    for layer, s in enumerate(traces.layer_slices()):
        for index in range(s.stop - s.start):
            g = s.start + index
            rows.append((layer, index, float(classification.rates[g]), str(classification.labels[g])))
    return rows


def global_sort_order(traces: GateTraceSet) -> List[np.ndarray]:
    """
    Per layer, gate indices by decreasing firing rate over all traces.
    """
    rates = firing_rates(traces)
    return [np.argsort(-rates[s], kind="stable") for s in traces.layer_slices()]


@dataclass
class ClassFiring:
    label: int
    layers: List[np.ndarray]  # execution frequency per gate, per layer
    order: Optional[List[np.ndarray]]


def per_class_firing(traces: GateTraceSet, label: int, sort: bool = True) -> ClassFiring:
    """
    Per-layer firing frequency over the examples of one class. With sort,
    each layer is ordered by the firing rate over ALL classes, the same
    order for every class.
    """
    members = traces.labels == label
    if not np.any(members):
        raise ValueError(f"per_class_firing: class {label} does not occur in the traces")
    rates = traces.bits[members].mean(axis=0, dtype=np.float64)
    layers = [rates[s] for s in traces.layer_slices()]
    order = None
    if sort:
        order = global_sort_order(traces)
        layers = [layer[o] for layer, o in zip(layers, order)]
    return ClassFiring(label=int(label), layers=layers, order=order)


def mac_ranking(traces: GateTraceSet, top_k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    (lowest, highest): the top_k example ids with the fewest and with the
    most conditional MACs, ties broken by increasing example id.
    """
    if not 0 <= top_k <= len(traces):
        raise ValueError(f"mac_ranking: top_k {top_k} outside [0, {len(traces)}]")
    lowest = np.lexsort((traces.ids, traces.macs))[:top_k]
    highest = np.lexsort((traces.ids, -traces.macs))[:top_k]
    return traces.ids[lowest], traces.ids[highest]


def class_selective_gates(
    traces: GateTraceSet,
    barely_on: float = BARELY_ON_RATE,
    class_rate: float = SELECTIVE_CLASS_RATE,
) -> Dict[int, List[int]]:
    """
    Gates that rarely fire overall but fire for most examples of a few
    classes: gate index → those classes.
    """
    rates = firing_rates(traces)
    classes = np.unique(traces.labels)
    per_class = np.stack([traces.bits[traces.labels == c].mean(axis=0, dtype=np.float64) for c in classes])
    selective = {}
    for g in np.flatnonzero((rates > 0) & (rates <= barely_on)):
        hits = classes[per_class[:, g] >= class_rate]
        if len(hits):
            selective[int(g)] = [int(c) for c in hits]
    logger.debug(f"class_selective_gates: {len(selective)} of {traces.gate_count} gates")
    return selective
