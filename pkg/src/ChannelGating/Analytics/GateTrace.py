"""
Per-example gate traces and their binary file format.

    magic "CGTR" | version u32 | gate count u32 | example count u32
    | block count u32 | gates per block u32 × block count
    | rows: example id u32 | label u32 | gate bits, packed LSB-first | MACs u32

All integers little-endian. Rows have a fixed size, so row i starts at
header size + i × row size.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, List, Sequence, Tuple

import numpy as np

from ..Networks.MacCounter import mac_count
from .constants import LITTLE_ENDIAN, TRACE_MAGIC, TRACE_VERSION, U32_MAX

logger = logging.getLogger("GateTrace")

U32 = np.dtype("<u4")


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GateTrace:
    example_id: int
    label: int
    bits: np.ndarray
    macs: int


@dataclass
class GateTraceSet:
    """
    Traces of many examples: ids, labels and MACs per example, and the
    [examples, gates] 0/1 matrix, gates ordered block-major then channel.
    """

    ids: np.ndarray
    labels: np.ndarray
    bits: np.ndarray
    macs: np.ndarray
    block_widths: Tuple[int, ...]

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        self.macs = np.asarray(self.macs, dtype=np.int64)
        self.block_widths = tuple(int(w) for w in self.block_widths)
        n = len(self.ids)
        if self.bits.ndim != 2 or self.bits.shape[0] != n or len(self.labels) != n or len(self.macs) != n:
            raise ValueError(
                f"GateTraceSet: ids {self.ids.shape}, labels {self.labels.shape}, bits {self.bits.shape} "
                f"and macs {self.macs.shape} disagree"
            )
        if self.bits.shape[1] != sum(self.block_widths):
            raise ValueError(f"GateTraceSet: {self.bits.shape[1]} gates per row, blocks hold {sum(self.block_widths)}")
        if np.any(self.bits > 1):
            raise ValueError("GateTraceSet: gate bits must be 0 or 1")
        for name, values in (("ids", self.ids), ("labels", self.labels), ("macs", self.macs)):
            if n and (values.min() < 0 or values.max() > U32_MAX):
                raise ValueError(f"GateTraceSet: {name} do not fit in 32 unsigned bits")

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[GateTrace]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, index: int) -> GateTrace:
        return GateTrace(int(self.ids[index]), int(self.labels[index]), self.bits[index], int(self.macs[index]))

    @property
    def gate_count(self) -> int:
        return self.bits.shape[1]

    def layer_slices(self) -> List[slice]:
        edges = np.cumsum((0,) + self.block_widths)
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def select(self, mask: np.ndarray) -> "GateTraceSet":
        return GateTraceSet(self.ids[mask], self.labels[mask], self.bits[mask], self.macs[mask], self.block_widths)

    @classmethod
    def concatenate(cls, sets: Sequence["GateTraceSet"]) -> "GateTraceSet":
        widths = {s.block_widths for s in sets}
        if len(widths) != 1:
            raise ValueError(f"GateTraceSet: cannot concatenate traces of different layouts {sorted(widths)}")
        return cls(
            np.concatenate([s.ids for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.bits for s in sets]),
            np.concatenate([s.macs for s in sets]),
            widths.pop(),
        )


def header_size(block_count: int) -> int:
    return 4 + 4 * 4 + 4 * block_count


def row_size(gate_count: int) -> int:
    return 4 + 4 + (gate_count + 7) // 8 + 4


def _u32_columns(values: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=U32).view(np.uint8).reshape(len(values), 4)


def encode_trace(traces: GateTraceSet) -> bytes:
    n, g = traces.bits.shape
    header = bytearray(TRACE_MAGIC)
    for value in (TRACE_VERSION, g, n, len(traces.block_widths)) + traces.block_widths:
        header += int(value).to_bytes(4, LITTLE_ENDIAN)

    packed = np.packbits(traces.bits, axis=1, bitorder="little") if g else np.zeros((n, 0), dtype=np.uint8)
    rows = np.concatenate([_u32_columns(traces.ids), _u32_columns(traces.labels), packed, _u32_columns(traces.macs)], axis=1)
    return bytes(header) + rows.tobytes()


def _read_u32(buff: bytes, offset: int, what: str, path: Any) -> int:
    if offset + 4 > len(buff):
        raise TraceFormatError(f"read_trace: {path}: truncated {what} at byte offset {offset}")
    return int.from_bytes(buff[offset : offset + 4], LITTLE_ENDIAN)


def _decode_header(buff: bytes, path: Any) -> Tuple[int, int, Tuple[int, ...], int]:
    if buff[0:4] != TRACE_MAGIC:
        raise TraceFormatError(f"read_trace: {path}: bad magic {buff[0:4]!r} at byte offset 0")
    version = _read_u32(buff, 4, "version", path)
    if version != TRACE_VERSION:
        raise TraceFormatError(f"read_trace: {path}: unsupported version {version} at byte offset 4")
    gates = _read_u32(buff, 8, "gate count", path)
    examples = _read_u32(buff, 12, "example count", path)
    blocks = _read_u32(buff, 16, "block count", path)
    widths = tuple(_read_u32(buff, 20 + 4 * i, f"width of block {i}", path) for i in range(blocks))
    if sum(widths) != gates:
        raise TraceFormatError(f"read_trace: {path}: block widths {widths} do not add up to {gates} gates at byte offset 20")
    return gates, examples, widths, header_size(blocks)


def decode_trace(buff: bytes, path: Any = "<bytes>") -> GateTraceSet:
    gates, examples, widths, start = _decode_header(buff, path)
    size = row_size(gates)
    expected = start + examples * size
    if len(buff) < expected:
        offset = start + (len(buff) - start) // size * size
        raise TraceFormatError(f"read_trace: {path}: truncated row at byte offset {offset}, expected {examples} rows")
    if len(buff) > expected:
        raise TraceFormatError(f"read_trace: {path}: {len(buff) - expected} trailing bytes at byte offset {expected}")
    rows = np.frombuffer(buff, dtype=np.uint8, offset=start).reshape(examples, size)
    nbytes = (gates + 7) // 8
    ids = rows[:, 0:4].copy().view(U32)[:, 0]
    labels = rows[:, 4:8].copy().view(U32)[:, 0]
    bits = np.unpackbits(rows[:, 8 : 8 + nbytes], axis=1, count=gates, bitorder="little")
    macs = rows[:, 8 + nbytes :].copy().view(U32)[:, 0]
    return GateTraceSet(ids, labels, bits, macs, widths)


def write_trace(path: str | Path, traces: GateTraceSet):
    with open(path, "wb") as fp:
        fp.write(encode_trace(traces))
    logger.debug(f"write_trace: {len(traces)} traces of {traces.gate_count} gates to {path}")


def read_trace(path: str | Path) -> GateTraceSet:
    with open(path, "rb") as fp:
        return decode_trace(fp.read(), path)


def read_row(path: str | Path, index: int) -> GateTrace:
    """
    One trace by row index, read with a single seek.
    """
    with open(path, "rb") as fp:
        head = fp.read(20)
        blocks = _read_u32(head, 16, "block count", path)
        gates, examples, widths, start = _decode_header(head + fp.read(4 * blocks), path)
        if not 0 <= index < examples:
            raise IndexError(f"read_row: {path}: row {index} outside [0, {examples})")
        size = row_size(gates)
        fp.seek(start + index * size)
        row = fp.read(size)
    if len(row) != size:
        raise TraceFormatError(f"read_row: {path}: truncated row {index} at byte offset {start + index * size}")
    nbytes = (gates + 7) // 8
    bits = np.unpackbits(np.frombuffer(row[8 : 8 + nbytes], dtype=np.uint8), count=gates, bitorder="little")
    return GateTrace(
        int.from_bytes(row[0:4], LITTLE_ENDIAN),
        int.from_bytes(row[4:8], LITTLE_ENDIAN),
        bits,
        int.from_bytes(row[8 + nbytes :], LITTLE_ENDIAN),
    )


def _recompute_macs(traces: GateTraceSet, model: Any) -> np.ndarray:
    return mac_count(model, traces.bits).conditional


def check_macs(traces: GateTraceSet, model: Any):
    """
    Raises TraceFormatError unless every stored MAC figure equals the one
    recomputed from the row's gate bits.
    """
    recomputed = _recompute_macs(traces, model)
    bad = np.flatnonzero(recomputed != traces.macs)
    if len(bad):
        i = bad[0]
        raise TraceFormatError(
            f"check_macs: example {traces.ids[i]}: stored {traces.macs[i]} MACs, bits give {recomputed[i]} "
            f"({len(bad)} mismatching rows)"
        )
