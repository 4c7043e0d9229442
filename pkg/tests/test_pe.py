import struct

import numpy as np
import pytest

from fedransim import pe

FIXTURE_FIELDS = dict(
    machine=0x8664,
    timestamp=1_700_000_000,
    number_of_sections=2,
    number_of_symbols=0,
    size_of_code=0x200,
    size_of_initialized_data=0x400,
    size_of_uninitialized_data=0x0,
    address_of_entry_point=0x1000,
    size_of_image=0x3000,
    size_of_headers=0x200,
    checksum=0xBEEF,
    subsystem=3,
    dll_characteristics=0x8160,
    size_of_stack_reserve=0x100000,
)


class TestEntropy:
    def test_empty_is_zero(self):
        assert pe.byte_entropy(b"") == 0.0

    def test_constant_is_zero(self):
        assert pe.byte_entropy(b"\x00" * 4096) == 0.0

    def test_all_bytes_equal_frequency_is_eight(self):
        blob = bytes(range(256)) * 16
        assert pe.byte_entropy(blob) == pytest.approx(8.0, abs=1e-12)

    def test_two_symbol_alphabet_is_one_bit(self):
        assert pe.byte_entropy(b"ab" * 500) == pytest.approx(1.0, abs=1e-12)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            blob = rng.integers(0, 256, size=int(rng.integers(1, 2000)), dtype=np.uint8).tobytes()
            freq = {}
            for b in blob:
                freq[b] = freq.get(b, 0) + 1
            expected = -sum(
                (c / len(blob)) * np.log2(c / len(blob)) for c in freq.values()
            )
            assert pe.byte_entropy(blob) == pytest.approx(expected, abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            blob = rng.integers(0, 256, size=int(rng.integers(1, 512)), dtype=np.uint8).tobytes()
            h = pe.byte_entropy(blob)
            assert 0.0 <= h <= 8.0


class TestParser:
    @pytest.mark.parametrize("plus", [False, True])
    def test_round_trip_all_fields(self, plus):
        blob = pe.build_minimal_pe(pe32_plus=plus, **FIXTURE_FIELDS)
        summary = pe.parse_pe(blob)
        for name, want in FIXTURE_FIELDS.items():
            assert getattr(summary, name) == want, name
        assert summary.pe32_plus is plus
        assert summary.file_byte_entropy == pytest.approx(pe.byte_entropy(blob))

    @pytest.mark.parametrize("plus", [False, True])
    def test_checked_in_fixture_round_trip(self, plus, request):
        name = "minimal_pe32plus.bin" if plus else "minimal_pe32.bin"
        path = request.path.parent / "fixtures" / name
        blob = path.read_bytes()
        assert blob == pe.build_minimal_pe(pe32_plus=plus, **FIXTURE_FIELDS)
        summary = pe.parse_pe(blob)
        for field, want in FIXTURE_FIELDS.items():
            assert getattr(summary, field) == want, field

    def test_stack_reserve_above_u32_needs_pe32plus(self):
        blob = pe.build_minimal_pe(pe32_plus=True, size_of_stack_reserve=0x2_0000_0000)
        assert pe.parse_pe(blob).size_of_stack_reserve == 0x2_0000_0000

    def test_missing_mz(self):
        with pytest.raises(pe.NotPe) as e:
            pe.parse_pe(b"ZM" + b"\x00" * 200)
        assert e.value.offset == 0

    def test_empty_buffer(self):
        with pytest.raises(pe.NotPe):
            pe.parse_pe(b"")

    def test_truncated_before_pe_offset(self):
        with pytest.raises(pe.Truncated):
            pe.parse_pe(b"MZ" + b"\x00" * 10)

    def test_pe_offset_past_end(self):
        blob = bytearray(b"MZ" + b"\x00" * 62)
        struct.pack_into("<I", blob, pe.PE_OFFSET_FIELD, 10_000)
        with pytest.raises(pe.Truncated) as e:
            pe.parse_pe(bytes(blob))
        assert e.value.offset == 10_000

    def test_bad_signature(self):
        blob = bytearray(pe.build_minimal_pe())
        blob[0x80:0x84] = b"PE\x00\x01"
        with pytest.raises(pe.BadSignature) as e:
            pe.parse_pe(bytes(blob))
        assert e.value.offset == 0x80

    def test_unknown_optional_magic(self):
        blob = bytearray(pe.build_minimal_pe())
        struct.pack_into("<H", blob, 0x80 + 4 + 20, 0x107)  # ROM image magic
        with pytest.raises(pe.UnsupportedFormat):
            pe.parse_pe(bytes(blob))

    def test_truncated_optional_header(self):
        blob = pe.build_minimal_pe()
        with pytest.raises(pe.Truncated):
            pe.parse_pe(blob[: 0x80 + 4 + 20 + 30])

    def test_fuzz_structured_errors_only(self):
        # random buffers plus random corruptions of a valid image must either
        # parse or raise a PeError; nothing else may escape
        rng = np.random.default_rng(42)
        good = pe.build_minimal_pe()
        for _ in range(2000):
            if rng.random() < 0.5:
                blob = rng.integers(0, 256, size=int(rng.integers(0, 400)), dtype=np.uint8).tobytes()
            else:
                buf = bytearray(good)
                for _ in range(int(rng.integers(1, 8))):
                    buf[int(rng.integers(0, len(buf)))] = int(rng.integers(0, 256))
                blob = bytes(buf[: int(rng.integers(0, len(buf) + 1))])
            try:
                summary = pe.parse_pe(blob)
            except pe.PeError as e:
                assert isinstance(e.offset, int)
            else:
                assert 0.0 <= summary.file_byte_entropy <= 8.0


class TestFeatureVector:
    def test_fifteen_features_in_declared_order(self):
        summary = pe.parse_pe(pe.build_minimal_pe(**FIXTURE_FIELDS))
        vec = pe.to_feature_vector(summary)
        assert vec.shape == (15,)
        assert len(pe.FEATURE_NAMES) == 15
        for i, name in enumerate(pe.FEATURE_NAMES):
            assert vec[i] == float(getattr(summary, name)), name

    def test_distinct_inputs_distinct_vectors(self):
        a = pe.to_feature_vector(pe.parse_pe(pe.build_minimal_pe(checksum=1)))
        b = pe.to_feature_vector(pe.parse_pe(pe.build_minimal_pe(checksum=2)))
        assert not np.array_equal(a, b)
