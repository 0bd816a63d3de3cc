"""Toeplitz universal hashing for authentication tags and privacy amplification.

The hash family is the binary Toeplitz family: a seed of out_len + msg_len - 1
bits defines the matrix T[i][j] = seed[i - j + msg_len - 1], and hashing is the
matrix-vector product over GF(2).  This family is XOR-2-universal with
collision parameter 2^-out_len; adding a one-time-pad mask of the output makes
it strongly 2-universal, which is the construction used for authentication
tags.  The same family acts as the 2-universal extractor for privacy
amplification.

Matrix evaluation processes the message in fixed-width chunks so intermediate
convolution counts stay small enough for exact rounding.  The chunk width is
an internal tuning constant with no observable effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from . import bits as B
from .bits import Bits
from .errors import ConfigError, DimensionError

# Messages are consumed in chunks of this many bits; convolution counts are
# then bounded by the chunk width, far below exact float64 integer range.
_CHUNK_BITS = 4096

# Below this work estimate a direct convolution beats FFT setup cost.
_DIRECT_CONV_LIMIT = 1 << 21


@dataclass(frozen=True)
class ToeplitzSeed:
    """Seed bits plus the (out_len, msg_len) geometry they serve."""

    bits: Bits
    out_len: int
    msg_len: int

    def __post_init__(self):
        if self.out_len < 1 or self.msg_len < 1:
            raise ConfigError("Toeplitz seed needs out_len >= 1 and msg_len >= 1")
        if self.bits.size != self.out_len + self.msg_len - 1:
            raise DimensionError(
                f"seed length {self.bits.size} != out_len + msg_len - 1 "
                f"= {self.out_len + self.msg_len - 1}"
            )

    def serialize(self) -> bytes:
        import struct

        return struct.pack("<II", self.out_len, self.msg_len) + B.serialize_bits(self.bits)

    @staticmethod
    def deserialize(buf: bytes, offset: int = 0) -> tuple["ToeplitzSeed", int]:
        import struct

        out_len, msg_len = struct.unpack_from("<II", buf, offset)
        bits, offset = B.deserialize_bits(buf, offset + 8)
        return ToeplitzSeed(bits, out_len, msg_len), offset


@dataclass(frozen=True)
class Tag:
    """An authentication tag of fixed bit length."""

    value: Bits

    @property
    def bit_length(self) -> int:
        return self.value.size

    def serialize(self) -> bytes:
        return B.serialize_bits(self.value)


@dataclass(frozen=True)
class MaskKey:
    """One-time-pad key applied to a hash output of the same length."""

    value: Bits


def random_seed(rng: np.random.Generator, out_len: int, msg_len: int) -> ToeplitzSeed:
    return ToeplitzSeed(B.random_bits(rng, out_len + msg_len - 1), out_len, msg_len)


def toeplitz_matrix(seed: ToeplitzSeed) -> np.ndarray:
    """Dense matrix with T[i][j] = seed.bits[i - j + msg_len - 1].

    Intended for documentation and small-size cross-checks; the hash itself
    never materializes the matrix.
    """
    i = np.arange(seed.out_len)[:, None]
    j = np.arange(seed.msg_len)[None, :]
    return seed.bits[i - j + seed.msg_len - 1]


def _conv_counts(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact integer full convolution of small nonnegative sequences."""
    if a.size * b.size <= _DIRECT_CONV_LIMIT:
        return np.convolve(a.astype(np.int64), b.astype(np.int64))
    out = fftconvolve(a.astype(np.float64), b.astype(np.float64))
    return np.rint(out).astype(np.int64)


def toeplitz_hash(seed: ToeplitzSeed, message: Bits) -> Bits:
    """Hash message to out_len bits: T . m over GF(2).

    Short outputs (authentication tags) take a sliding-window dot-product
    path; long outputs (privacy amplification) go through convolution.
    """
    if message.size != seed.msg_len:
        raise DimensionError(
            f"message length {message.size} does not match seed msg_len {seed.msg_len}"
        )
    m, out = seed.msg_len, seed.out_len
    acc = np.zeros(out, dtype=np.int64)
    s = seed.bits
    small_out = out <= 64
    for j0 in range(0, m, _CHUNK_BITS):
        chunk = message[j0 : j0 + _CHUNK_BITS]
        w = chunk.size
        if not chunk.any():
            continue
        base = m - 1 - j0
        window = s[base - w + 1 : base + out]
        if small_out:
            rows = np.lib.stride_tricks.sliding_window_view(window, w)
            acc += rows @ chunk[::-1].astype(np.int64)
        else:
            conv = _conv_counts(window, chunk)
            acc += conv[w - 1 : w - 1 + out]
    return (acc & 1).astype(np.uint8)


def masked_tag(hash_seed: ToeplitzSeed, mask: MaskKey, message: Bits) -> Tag:
    """Tag = toeplitz_hash(seed, message) XOR mask.

    The mask acts as a one-time pad, turning the XOR-2-universal family into
    a strongly 2-universal one.
    """
    if mask.value.size != hash_seed.out_len:
        raise DimensionError(
            f"mask length {mask.value.size} does not match hash out_len {hash_seed.out_len}"
        )
    return Tag(B.xor(toeplitz_hash(hash_seed, message), mask.value))


def verify_tag(expected: Tag, received: Tag) -> bool:
    """Bitwise equality with a fixed amount of work for a given length."""
    if expected.bit_length != received.bit_length:
        raise DimensionError(
            f"tag lengths differ: {expected.bit_length} vs {received.bit_length}"
        )
    return bool(np.bitwise_xor(expected.value, received.value).max(initial=0) == 0)


def privacy_amplify(seed: ToeplitzSeed, input_bits: Bits, out_len: int) -> Bits:
    """Extract out_len near-uniform bits from input_bits.

    The seed must be dimensioned for msg_len = len(input) and out_len at
    least as large as requested; a shorter extraction reuses the leading
    seed bits, which is the top-left submatrix of the full Toeplitz matrix.
    """
    if out_len < 0:
        raise ConfigError("out_len must be nonnegative")
    if out_len > input_bits.size:
        raise ConfigError(
            f"refusing to extract {out_len} bits from a {input_bits.size}-bit input"
        )
    if out_len == 0:
        return B.zeros(0)
    if input_bits.size != seed.msg_len:
        raise DimensionError(
            f"input length {input_bits.size} does not match seed msg_len {seed.msg_len}"
        )
    if out_len > seed.out_len:
        raise ConfigError(f"seed supports at most {seed.out_len} output bits")
    sub = ToeplitzSeed(seed.bits[: out_len + seed.msg_len - 1], out_len, seed.msg_len)
    return toeplitz_hash(sub, input_bits)


def hash_padded(seed: ToeplitzSeed, message: Bits) -> Bits:
    """Hash a message of length <= msg_len by zero-padding it to msg_len.

    Callers must ensure distinct messages never pad to the same vector; the
    protocol transcripts achieve this with embedded length prefixes.
    """
    if message.size > seed.msg_len:
        raise DimensionError(
            f"message of {message.size} bits exceeds seed msg_len {seed.msg_len}"
        )
    if message.size == seed.msg_len:
        return toeplitz_hash(seed, message)
    padded = np.zeros(seed.msg_len, dtype=np.uint8)
    padded[: message.size] = message
    return toeplitz_hash(seed, padded)


@dataclass(frozen=True)
class StrongKey:
    """Key pair (Toeplitz seed, output pad) for a strongly 2-universal hash."""

    seed: ToeplitzSeed
    pad: Bits = field(repr=False)

    def __post_init__(self):
        if self.pad.size != self.seed.out_len:
            raise DimensionError("pad length must equal hash out_len")

    def tag(self, message: Bits) -> Tag:
        return Tag(B.xor(hash_padded(self.seed, message), self.pad))
