"""Windows PE header parser and the 15-dim static feature vector.

Only the DOS header, COFF header, and optional header (PE32 / PE32+) are
read; nothing beyond the supplied buffer is ever touched, and every failure
is a structured PeError carrying the byte offset where parsing stopped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DOS_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"
PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

PE_OFFSET_FIELD = 0x3C  # u32 pointer to the PE signature


class PeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset 0x{offset:x})")
        self.offset = offset


class NotPe(PeError):
    pass


class Truncated(PeError):
    pass


class BadSignature(PeError):
    pass


class UnsupportedFormat(PeError):
    pass


@dataclass(frozen=True)
class PeHeaderSummary:
    machine: int
    timestamp: int
    number_of_sections: int
    number_of_symbols: int
    size_of_code: int
    size_of_initialized_data: int
    size_of_uninitialized_data: int
    address_of_entry_point: int
    size_of_image: int
    size_of_headers: int
    checksum: int
    subsystem: int
    dll_characteristics: int
    size_of_stack_reserve: int
    file_byte_entropy: float  # bits/byte, in [0, 8]
    pe32_plus: bool = False


def byte_entropy(data: bytes) -> float:
    """Shannon entropy of the byte histogram, in bits/byte. Empty input -> 0."""
    if not data:
        return 0.0
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(data)
    return float(-(p * np.log2(p)).sum())


def _read(data: bytes, fmt: str, offset: int, what: str):
    size = struct.calcsize(fmt)
    if offset < 0 or offset + size > len(data):
        raise Truncated(f"truncated before {what}", offset)
    return struct.unpack_from(fmt, data, offset)


def parse_pe(data: bytes) -> PeHeaderSummary:
    """Parse DOS header -> PE signature -> COFF header -> optional header.

    Accepts arbitrary bytes; never reads past the buffer.
    """
    if len(data) < 2 or data[:2] != DOS_MAGIC:
        raise NotPe("missing MZ magic", 0)
    (pe_off,) = _read(data, "<I", PE_OFFSET_FIELD, "PE header offset")
    if pe_off + 4 > len(data):
        raise Truncated("truncated before PE signature", pe_off)
    if data[pe_off : pe_off + 4] != PE_SIGNATURE:
        raise BadSignature("bad PE signature", pe_off)

    coff_off = pe_off + 4
    (
        machine,
        number_of_sections,
        timestamp,
        _ptr_symtab,
        number_of_symbols,
        size_of_optional_header,
        _characteristics,
    ) = _read(data, "<HHIIIHH", coff_off, "COFF header")

    opt_off = coff_off + 20
    (magic,) = _read(data, "<H", opt_off, "optional header magic")
    if magic == PE32_MAGIC:
        pe32_plus = False
        needed = 76  # through u32 SizeOfStackReserve at +72
    elif magic == PE32PLUS_MAGIC:
        pe32_plus = True
        needed = 80  # through u64 SizeOfStackReserve at +72
    else:
        raise UnsupportedFormat(f"optional header magic 0x{magic:x}", opt_off)
    if size_of_optional_header < needed:
        raise Truncated("optional header declared too small", opt_off)

    size_of_code, size_of_initialized_data, size_of_uninitialized_data, entry_point = _read(
        data, "<IIII", opt_off + 4, "optional header standard fields"
    )
    size_of_image, size_of_headers, checksum, subsystem, dll_characteristics = _read(
        data, "<IIIHH", opt_off + 56, "optional header windows fields"
    )
    if pe32_plus:
        (stack_reserve,) = _read(data, "<Q", opt_off + 72, "SizeOfStackReserve")
    else:
        (stack_reserve,) = _read(data, "<I", opt_off + 72, "SizeOfStackReserve")

    return PeHeaderSummary(
        machine=machine,
        timestamp=timestamp,
        number_of_sections=number_of_sections,
        number_of_symbols=number_of_symbols,
        size_of_code=size_of_code,
        size_of_initialized_data=size_of_initialized_data,
        size_of_uninitialized_data=size_of_uninitialized_data,
        address_of_entry_point=entry_point,
        size_of_image=size_of_image,
        size_of_headers=size_of_headers,
        checksum=checksum,
        subsystem=subsystem,
        dll_characteristics=dll_characteristics,
        size_of_stack_reserve=stack_reserve,
        file_byte_entropy=byte_entropy(data),
        pe32_plus=pe32_plus,
    )


# Fixed emission order of the 15 features.
FEATURE_NAMES = (
    "number_of_sections",
    "number_of_symbols",
    "timestamp",
    "size_of_code",
    "size_of_initialized_data",
    "size_of_uninitialized_data",
    "address_of_entry_point",
    "size_of_image",
    "size_of_headers",
    "checksum",
    "subsystem",
    "dll_characteristics",
    "size_of_stack_reserve",
    "machine",
    "file_byte_entropy",
)


def to_feature_vector(summary: PeHeaderSummary) -> np.ndarray:
    """The 15 header-level features in FEATURE_NAMES order (unnormalized)."""
    return np.array([float(getattr(summary, name)) for name in FEATURE_NAMES])


def build_minimal_pe(
    pe32_plus: bool = True,
    machine: int = 0x8664,
    timestamp: int = 1_700_000_000,
    number_of_sections: int = 2,
    number_of_symbols: int = 0,
    size_of_code: int = 0x200,
    size_of_initialized_data: int = 0x400,
    size_of_uninitialized_data: int = 0x0,
    address_of_entry_point: int = 0x1000,
    size_of_image: int = 0x3000,
    size_of_headers: int = 0x200,
    checksum: int = 0xBEEF,
    subsystem: int = 3,
    dll_characteristics: int = 0x8160,
    size_of_stack_reserve: int = 0x100000,
) -> bytes:
    """Fixture generator: emits a minimal well-formed PE image whose header
    fields are exactly the arguments, so parser tests can round-trip them.
    """
    pe_off = 0x80
    dos = bytearray(64)
    dos[0:2] = DOS_MAGIC
    struct.pack_into("<I", dos, PE_OFFSET_FIELD, pe_off)
    stub = b"\x00" * (pe_off - 64)

    magic = PE32PLUS_MAGIC if pe32_plus else PE32_MAGIC
    opt_size = 112 if pe32_plus else 96  # standard sizes without data directories
    coff = struct.pack(
        "<HHIIIHH",
        machine,
        number_of_sections,
        timestamp,
        0,
        number_of_symbols,
        opt_size,
        0x0022,
    )

    opt = bytearray(opt_size)
    struct.pack_into("<H", opt, 0, magic)
    struct.pack_into(
        "<IIII",
        opt,
        4,
        size_of_code,
        size_of_initialized_data,
        size_of_uninitialized_data,
        address_of_entry_point,
    )
    struct.pack_into("<II", opt, 32, 0x1000, 0x200)  # section/file alignment
    struct.pack_into(
        "<IIIHH",
        opt,
        56,
        size_of_image,
        size_of_headers,
        checksum,
        subsystem,
        dll_characteristics,
    )
    if pe32_plus:
        struct.pack_into("<Q", opt, 24, 0x140000000)  # image base
        struct.pack_into("<Q", opt, 72, size_of_stack_reserve)
    else:
        struct.pack_into("<II", opt, 24, 0x2000, 0x400000)  # base of data, image base
        struct.pack_into("<I", opt, 72, size_of_stack_reserve)

    # one empty section header per declared section
    section = struct.pack("<8sIIIIIIHHI", b".text\x00\x00\x00", 0x100, 0x1000, 0x200, 0x200, 0, 0, 0, 0, 0x60000020)
    return bytes(dos) + stub + PE_SIGNATURE + coff + bytes(opt) + section * number_of_sections
