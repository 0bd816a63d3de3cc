"""Bit-string primitives and the serialized wire format.

Bit strings are numpy uint8 arrays with values in {0, 1}.  The wire format
for a bit string is a little-endian unsigned 32-bit bit count followed by
the bits packed least-significant-bit first within each byte.  Index sets
are serialized as a u32 count followed by sorted u32 values.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DimensionError, ParseError

Bits = np.ndarray

_U32 = struct.Struct("<I")


def as_bits(values) -> Bits:
    """Coerce a sequence of 0/1 values to a canonical bit array."""
    bits = np.asarray(values, dtype=np.uint8)
    if bits.ndim != 1:
        raise DimensionError(f"bit string must be one-dimensional, got shape {bits.shape}")
    if bits.size and bits.max() > 1:
        raise ValueError("bit string may only contain 0 and 1")
    return bits


def zeros(n: int) -> Bits:
    return np.zeros(n, dtype=np.uint8)


def random_bits(rng: np.random.Generator, n: int) -> Bits:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def xor(a: Bits, b: Bits) -> Bits:
    if a.size != b.size:
        raise DimensionError(f"xor of unequal lengths {a.size} and {b.size}")
    return np.bitwise_xor(a, b)


def pack_bits(bits: Bits) -> bytes:
    """Pack bits LSB-first into bytes (final byte zero-padded)."""
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_bits(data: bytes, n: int) -> Bits:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits.size < n:
        raise ParseError(f"expected at least {n} bits, got {bits.size}")
    return bits[:n].copy()


def bytes_to_bits(data: bytes) -> Bits:
    """Expand each byte into 8 bits, LSB first."""
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")


def bits_to_bytes(bits: Bits) -> bytes:
    if bits.size % 8:
        raise DimensionError(f"bit length {bits.size} is not a whole number of bytes")
    return pack_bits(bits)


def serialize_bits(bits: Bits) -> bytes:
    """Wire format: u32 LE bit count, then packed bits LSB-first."""
    return _U32.pack(bits.size) + pack_bits(bits)


def deserialize_bits(buf: bytes, offset: int = 0) -> tuple[Bits, int]:
    """Read one wire-format bit string, returning (bits, next offset)."""
    if len(buf) < offset + 4:
        raise ParseError("truncated bit string header")
    (n,) = _U32.unpack_from(buf, offset)
    offset += 4
    nbytes = (n + 7) // 8
    if len(buf) < offset + nbytes:
        raise ParseError(f"truncated bit string payload ({n} bits)")
    bits = unpack_bits(buf[offset : offset + nbytes], n)
    return bits, offset + nbytes


def serialize_indices(indices: np.ndarray) -> bytes:
    """Wire format for an index set: u32 count, then sorted u32 values."""
    idx = np.asarray(indices, dtype=np.uint32)
    idx = np.sort(idx)
    return _U32.pack(idx.size) + idx.astype("<u4").tobytes()


def deserialize_indices(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(buf) < offset + 4:
        raise ParseError("truncated index set header")
    (n,) = _U32.unpack_from(buf, offset)
    offset += 4
    if len(buf) < offset + 4 * n:
        raise ParseError(f"truncated index set payload ({n} entries)")
    idx = np.frombuffer(buf, dtype="<u4", count=n, offset=offset).astype(np.int64)
    return idx, offset + 4 * n


def bits_to_hex(bits: Bits) -> str:
    return pack_bits(bits).hex() if bits.size else ""


def bits_from_int_list(text: str) -> Bits:
    """Parse a compact 0/1 string such as "0110" into bits."""
    try:
        return as_bits([int(c) for c in text.strip()])
    except ValueError as exc:
        raise ParseError(f"not a 0/1 string: {text!r}") from exc
