import numpy as np
import pytest

from octpcc.coder import (ArithmeticEncoder, Bitstream,
                          BitstreamHeader, FREQ_TOTAL, FreqTable,
                          decode_symbols, encode_symbols, quantize_dist)
from octpcc.errors import CorruptStream, InvalidInput, ParseError


def random_dist(rng, concentration=1.0):
    q = rng.dirichlet(np.full(255, concentration))
    return q / q.sum()


def random_table(rng):
    return quantize_dist(random_dist(rng))


class TestQuantizeDist:
    def test_uniform_within_one(self):
        table = quantize_dist(np.full(255, 1.0 / 255.0))
        assert table.total == FREQ_TOTAL
        assert int(table.freq.sum()) == FREQ_TOTAL
        assert table.freq.max() - table.freq.min() <= 1

    def test_peaked_floor_behavior(self):
        q = np.full(255, 1e-12)
        q[123] = 1.0 - 254e-12
        table = quantize_dist(q)
        assert table.freq[123] == FREQ_TOTAL - 254
        others = np.delete(table.freq, 123)
        assert (others == 1).all()

    def test_random_dists_total_and_kl(self, rng):
        """Quantization keeps the full 2**16 mass and loses < 1e-3 bits."""
        for _ in range(1000):
            q = random_dist(rng)
            table = quantize_dist(q)
            assert int(table.freq.sum()) == FREQ_TOTAL
            assert table.freq.min() >= 1
            p_hat = table.freq / table.total
            kl = float((q * np.log2(q / p_hat)).sum())
            assert kl < 1e-3

    def test_deterministic(self, rng):
        q = random_dist(rng)
        a = quantize_dist(q)
        b = quantize_dist(q.copy())
        np.testing.assert_array_equal(a.freq, b.freq)

    def test_cumulative_consistency(self, rng):
        table = random_table(rng)
        assert table.cum[0] == 0
        assert (np.diff(table.cum) >= 1).all()
        assert table.cum[255] == table.total

    def test_bad_shapes(self):
        with pytest.raises(InvalidInput):
            quantize_dist(np.ones(10) / 10)
        with pytest.raises(InvalidInput):
            FreqTable.from_freq(np.zeros(255))


class TestRoundTrip:
    def test_all_symbols_many_tables(self, rng):
        tables = [random_table(rng) for _ in range(20)]
        for table in tables:
            symbols = list(range(1, 256))
            payload = encode_symbols(symbols, [table] * 255)
            assert decode_symbols(payload, [table] * 255) == symbols

    def test_alternating_tables_long_stream(self, rng):
        ta, tb = random_table(rng), random_table(rng)
        symbols = rng.integers(1, 256, size=10000).tolist()
        tables = [ta if i % 2 == 0 else tb for i in range(len(symbols))]
        payload = encode_symbols(symbols, tables)
        assert decode_symbols(payload, tables) == symbols

    def test_empty_stream_small_flush(self):
        payload = encode_symbols([], [])
        assert len(payload) < 8

    def test_single_confident_symbol_tiny_payload(self):
        freq = np.ones(255, dtype=np.int64)
        freq[77] = FREQ_TOTAL - 254
        table = FreqTable.from_freq(freq)
        payload = encode_symbols([78], [table])
        assert len(payload) <= 2


class TestOptimality:
    def test_uniform_tables_near_ideal(self, rng):
        table = quantize_dist(np.full(255, 1.0 / 255.0))
        n = 1000
        symbols = rng.integers(1, 256, size=n).tolist()
        payload = encode_symbols(symbols, [table] * n)
        ideal = sum(table.ideal_bits(s - 1) for s in symbols)
        assert len(payload) * 8 <= 1.01 * ideal + 64
        assert abs(ideal / n - np.log2(255)) < 0.01

    def test_random_streams_within_one_percent(self, rng):
        for trial in range(5):
            n = 1500
            tables = [random_table(rng) for _ in range(5)]
            use = [tables[int(i)] for i in rng.integers(0, 5, size=n)]
            symbols = [int(rng.integers(1, 256)) for _ in range(n)]
            payload = encode_symbols(symbols, use)
            ideal = sum(t.ideal_bits(s - 1) for s, t in zip(symbols, use))
            assert len(payload) * 8 <= 1.01 * ideal + 64
            assert decode_symbols(payload, use) == symbols

    def test_length_mismatch(self):
        with pytest.raises(InvalidInput):
            encode_symbols([1, 2], [])


class TestEncoderState:
    def test_bits_emitted_monotone(self, rng):
        table = random_table(rng)
        enc = ArithmeticEncoder()
        last = 0
        for s in rng.integers(0, 255, size=200):
            enc.encode(table, int(s))
            assert enc.bits_emitted >= last
            last = enc.bits_emitted
        enc.finish()
        with pytest.raises(InvalidInput):
            enc.encode(table, 0)


class TestBitstreamContainer:
    def make(self, payload=b"\xaa\xbb"):
        header = BitstreamHeader(
            depth=6, coded_levels=5, origin=np.array([0.1, -0.2, 0.3]),
            scale=0.015625, raw_point_count=1000, voxel_count=900,
            node_count=1500, model_digest=bytes(range(32)), flags=3)
        return Bitstream(header=header, payload=payload)

    def test_roundtrip(self):
        bs = self.make()
        back = Bitstream.from_bytes(bs.to_bytes())
        h = back.header
        assert (h.depth, h.coded_levels, h.raw_point_count, h.voxel_count,
                h.node_count, h.flags) == (6, 5, 1000, 900, 1500, 3)
        np.testing.assert_array_equal(h.origin, [0.1, -0.2, 0.3])
        assert h.scale == 0.015625
        assert h.model_digest == bytes(range(32))
        assert back.payload == b"\xaa\xbb"

    def test_header_parses_without_payload(self):
        blob = self.make().to_bytes()
        header = BitstreamHeader.unpack(blob[:len(blob) - 2])
        assert header.depth == 6

    def test_truncated_payload_rejected(self):
        blob = self.make().to_bytes()
        with pytest.raises(CorruptStream):
            Bitstream.from_bytes(blob[:-1])

    def test_bad_magic(self):
        blob = bytearray(self.make().to_bytes())
        blob[0] = ord("X")
        with pytest.raises(ParseError):
            Bitstream.from_bytes(bytes(blob))

    def test_file_roundtrip(self, tmp_path):
        path = tmp_path / "stream.bin"
        bs = self.make(payload=b"\x01\x02\x03")
        bs.write(path)
        assert Bitstream.read(path).payload == b"\x01\x02\x03"
