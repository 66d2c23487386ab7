import numpy as np
import pytest

from ChannelGating.Analytics import (
    GateTraceSet,
    TraceFormatError,
    check_macs,
    class_selective_gates,
    classify_gates,
    decode_trace,
    encode_trace,
    export_all,
    gate_rows,
    mac_ranking,
    per_class_firing,
    read_row,
    read_trace,
    read_two_column,
    write_trace,
    write_two_column,
)
from ChannelGating.Analytics.constants import ALWAYS_OFF, ALWAYS_ON, CONDITIONAL, GATE_LABELS
from ChannelGating.Analytics.GateTrace import header_size, row_size
from ChannelGating.Networks import mac_count
from ChannelGating.Training import TrainSchedule, schedule_table


def random_traces(rng, n=25, widths=(5, 8)):
    bits = (rng.uniform(size=(n, sum(widths))) < 0.4).astype(np.uint8)
    return GateTraceSet(
        ids=np.arange(100, 100 + n),
        labels=rng.integers(0, 10, size=n),
        bits=bits,
        macs=rng.integers(0, 2**32, size=n, dtype=np.int64),
        block_widths=widths,
    )


def planted_traces(n=100):
    # gate 0 always fires, gate 1 never, gate 2 on every other example
    bits = np.zeros((n, 3), dtype=np.uint8)
    bits[:, 0] = 1
    bits[::2, 2] = 1
    return GateTraceSet(np.arange(n), np.arange(n) % 10, bits, np.zeros(n), (2, 1))


class TestGateTrace:
    def test_round_trip_is_byte_identical(self, tmp_path, rng):
        traces = random_traces(rng)
        write_trace(tmp_path / "gates.trace", traces)
        data = (tmp_path / "gates.trace").read_bytes()
        again = read_trace(tmp_path / "gates.trace")
        assert encode_trace(again) == data
        np.testing.assert_array_equal(again.bits, traces.bits)
        assert again.block_widths == (5, 8)

    def test_file_size(self, rng):
        traces = random_traces(rng, n=7, widths=(5, 8))
        assert len(encode_trace(traces)) == header_size(2) + 7 * row_size(13)
        assert row_size(13) == 4 + 4 + 2 + 4

    def test_bits_are_packed_lsb_first(self):
        bits = np.zeros((1, 9), dtype=np.uint8)
        bits[0, [0, 8]] = 1
        data = encode_trace(GateTraceSet([0], [0], bits, [0], (9,)))
        start = header_size(1) + 8
        assert data[start : start + 2] == bytes([0b00000001, 0b00000001])

    def test_read_row(self, tmp_path, rng):
        traces = random_traces(rng)
        write_trace(tmp_path / "gates.trace", traces)
        row = read_row(tmp_path / "gates.trace", 17)
        assert (row.example_id, row.label, row.macs) == (117, traces.labels[17], traces.macs[17])
        np.testing.assert_array_equal(row.bits, traces.bits[17])
        with pytest.raises(IndexError):
            read_row(tmp_path / "gates.trace", 25)

    def test_bad_magic(self, rng):
        data = b"XXXX" + encode_trace(random_traces(rng))[4:]
        with pytest.raises(TraceFormatError, match="bad magic .* at byte offset 0"):
            decode_trace(data)

    def test_unsupported_version(self, rng):
        data = bytearray(encode_trace(random_traces(rng)))
        data[4] = 9
        with pytest.raises(TraceFormatError, match="unsupported version 9 at byte offset 4"):
            decode_trace(bytes(data))

    def test_truncated_row(self, rng):
        data = encode_trace(random_traces(rng, n=4))
        start, size = header_size(2), row_size(13)
        with pytest.raises(TraceFormatError, match=f"truncated row at byte offset {start + 3 * size}"):
            decode_trace(data[:-3])

    def test_trailing_bytes(self, rng):
        with pytest.raises(TraceFormatError, match="2 trailing bytes"):
            decode_trace(encode_trace(random_traces(rng)) + b"\0\0")

    def test_truncated_header(self):
        with pytest.raises(TraceFormatError, match="truncated"):
            decode_trace(b"CGTR\x01\x00")

    def test_set_validation(self):
        with pytest.raises(ValueError, match="gates per row"):
            GateTraceSet([0], [0], np.zeros((1, 3)), [0], (2,))
        with pytest.raises(ValueError, match="0 or 1"):
            GateTraceSet([0], [0], np.full((1, 2), 2), [0], (2,))
        with pytest.raises(ValueError, match="32 unsigned bits"):
            GateTraceSet([0], [0], np.zeros((1, 2)), [2**32], (2,))

    def test_concatenate_needs_one_layout(self, rng):
        a, b = random_traces(rng), random_traces(rng, widths=(13,))
        assert len(GateTraceSet.concatenate([a, a])) == 50
        with pytest.raises(ValueError, match="different layouts"):
            GateTraceSet.concatenate([a, b])


class TestCheckMacs:
    def test_stored_macs_match_bits(self, tiny_model, rng):
        bits = (rng.uniform(size=(12, tiny_model.gate_count)) < 0.5).astype(np.uint8)
        macs = mac_count(tiny_model, bits).conditional
        traces = GateTraceSet(np.arange(12), np.zeros(12), bits, macs, tiny_model.gate_widths())
        check_macs(traces, tiny_model)

        traces.macs[5] += 1
        with pytest.raises(TraceFormatError, match="example 5"):
            check_macs(traces, tiny_model)


class TestGateStats:
    def test_planted_labels(self):
        result = classify_gates(planted_traces())
        np.testing.assert_allclose(result.rates, [1.0, 0.0, 0.5])
        assert list(result.labels) == [ALWAYS_ON, ALWAYS_OFF, CONDITIONAL]
        assert result.per_layer[0] == {ALWAYS_ON: 0.5, ALWAYS_OFF: 0.5, CONDITIONAL: 0.0}
        assert result.per_layer[1][CONDITIONAL] == 1.0
        assert sum(result.overall.values()) == 1.0

    def test_labels_and_summaries_use_the_known_categories(self, rng):
        bits = (rng.uniform(size=(200, 6)) < [1.0, 0.0, 0.3, 0.995, 0.005, 0.7]).astype(np.uint8)
        result = classify_gates(GateTraceSet(np.arange(200), np.zeros(200), bits, np.zeros(200), (3, 3)))
        assert set(result.labels) <= set(GATE_LABELS)
        assert set(result.overall) == set(GATE_LABELS)
        assert all(set(layer) == set(GATE_LABELS) for layer in result.per_layer)

    def test_threshold_is_strict(self):
        bits = np.ones((100, 1), dtype=np.uint8)
        bits[0] = 0
        result = classify_gates(GateTraceSet(np.arange(100), np.zeros(100), bits, np.zeros(100), (1,)))
        assert result.labels[0] == CONDITIONAL
        assert classify_gates(GateTraceSet(np.arange(100), np.zeros(100), bits, np.zeros(100), (1,)), 0.98, 0.01).labels[0] == ALWAYS_ON

    @pytest.mark.parametrize("on,off", [(0.5, 0.5), (0.2, 0.8), (1.5, 0.1)])
    def test_invalid_thresholds(self, on, off):
        with pytest.raises(ValueError, match="off < on"):
            classify_gates(planted_traces(), on, off)

    def test_few_traces_warn(self, caplog):
        classify_gates(planted_traces(10))
        assert "coarse" in caplog.text

    def test_gate_rows(self):
        traces = planted_traces()
        rows = gate_rows(traces, classify_gates(traces))
        assert rows == [(0, 0, 1.0, ALWAYS_ON), (0, 1, 0.0, ALWAYS_OFF), (1, 0, 0.5, CONDITIONAL)]

    def test_per_class_firing_uses_global_order(self):
        bits = np.array([[0, 1], [0, 1], [1, 0]], dtype=np.uint8)
        traces = GateTraceSet(np.arange(3), [0, 0, 1], bits, np.zeros(3), (2,))
        firing = per_class_firing(traces, 1)
        np.testing.assert_array_equal(firing.order[0], [1, 0])
        np.testing.assert_array_equal(firing.layers[0], [0.0, 1.0])
        unsorted = per_class_firing(traces, 1, sort=False)
        np.testing.assert_array_equal(unsorted.layers[0], [1.0, 0.0])
        with pytest.raises(ValueError, match="does not occur"):
            per_class_firing(traces, 7)

    def test_mac_ranking_breaks_ties_by_id(self):
        traces = GateTraceSet([5, 3, 9, 1], np.zeros(4), np.zeros((4, 1)), [10, 10, 20, 5], (1,))
        lowest, highest = mac_ranking(traces, 2)
        np.testing.assert_array_equal(lowest, [1, 3])
        np.testing.assert_array_equal(highest, [9, 3])
        with pytest.raises(ValueError):
            mac_ranking(traces, 5)

    def test_class_selective_gate(self):
        labels = np.repeat(np.arange(10), 10)
        bits = np.zeros((100, 2), dtype=np.uint8)
        bits[labels == 7, 1] = 1
        bits[:, 0] = 1
        traces = GateTraceSet(np.arange(100), labels, bits, np.zeros(100), (2,))
        assert class_selective_gates(traces) == {1: [7]}


class TestExport:
    def test_two_column_round_trip(self, tmp_path):
        rows = [(0.0, 0.1), (1.0, 1 / 3)]
        assert write_two_column(tmp_path / "x.dat", rows, ("a", "b")) == 2
        assert read_two_column(tmp_path / "x.dat") == rows
        assert (tmp_path / "x.dat").read_text().startswith("# a b\n")

    def test_bad_row(self, tmp_path):
        (tmp_path / "x.dat").write_text("# a b\n1 2 3\n")
        with pytest.raises(ValueError, match="x.dat:2"):
            read_two_column(tmp_path / "x.dat")

    def test_export_all(self, tmp_path):
        summaries = [{"average_macs": 3e8, "accuracy": 0.9}, {"average_macs": 1e8, "accuracy": 0.8}]
        written = export_all(
            tmp_path / "plots",
            planted_traces(),
            summaries,
            schedule_table(TrainSchedule.preset("cifar-desk")),
        )
        names = sorted(p.name for p in written)
        assert names == [
            "accuracy-vs-macs.dat",
            "gate-rates-layer00.dat",
            "gate-rates-layer01.dat",
            "schedule-gamma.dat",
            "schedule-lambda.dat",
        ]
        assert read_two_column(tmp_path / "plots" / "accuracy-vs-macs.dat") == [(1e8, 0.8), (3e8, 0.9)]
        assert read_two_column(tmp_path / "plots" / "gate-rates-layer00.dat") == [(0.0, 1.0), (1.0, 0.0)]
        assert len(read_two_column(tmp_path / "plots" / "schedule-lambda.dat")) == 40
