"""Two-way adaptive syndrome reconciliation over 1188-byte blocks.

Protocol per block: the sender computes a 220-byte syndrome of the first
968 bytes (X1), XORs it with the last 220 bytes (X2) and ships it with a
16-byte SHA-256 verification hash.  The receiver folds its own X2' into
the masked syndrome, which is equivalent to pushing X2's error bits onto
the syndrome, then decodes X1' against the noisy syndrome.  On a hash
mismatch the syndrome grows by 44 bytes (re-encoded and resent whole) up
to 440 bytes; after six failed rounds the sender reveals the whole block.

Masking policy: syndromes longer than 220 bytes are masked with X2
zero-extended, so escalation bytes arrive clean.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import ldpc
from .bits import bits_to_bytes, bytes_to_bits
from .errors import ConfigError, DimensionError

BLOCK_BYTES = 1188
PART1_BYTES = 968
PART2_BYTES = 220
BASE_SYNDROME_BYTES = 220
SYNDROME_STEP_BYTES = 44
MAX_SYNDROME_BYTES = 440
MAX_ROUNDS = 6
HASH_BYTES = 16

BLOCK_BITS = BLOCK_BYTES * 8
PART1_BITS = PART1_BYTES * 8
PART2_BITS = PART2_BYTES * 8


@dataclass(frozen=True)
class Block:
    """One 1188-byte reconciliation unit; part1/part2 are views of data."""

    data: bytes

    def __post_init__(self):
        if len(self.data) != BLOCK_BYTES:
            raise DimensionError(f"block must be exactly {BLOCK_BYTES} bytes, got {len(self.data)}")

    @property
    def part1(self) -> bytes:
        return self.data[:PART1_BYTES]

    @property
    def part2(self) -> bytes:
        return self.data[PART1_BYTES:]

    @staticmethod
    def from_bits(bits: np.ndarray) -> "Block":
        return Block(bits_to_bytes(bits))

    def bits(self) -> np.ndarray:
        return bytes_to_bits(self.data)


@dataclass(frozen=True)
class SyndromePacket:
    masked_syndrome: bytes
    verify_hash: bytes
    round_index: int

    def __post_init__(self):
        expect = BASE_SYNDROME_BYTES + SYNDROME_STEP_BYTES * (self.round_index - 1)
        if not 1 <= self.round_index <= MAX_ROUNDS:
            raise ConfigError(f"round index {self.round_index} outside 1..{MAX_ROUNDS}")
        if len(self.masked_syndrome) != expect:
            raise DimensionError(
                f"round {self.round_index} expects {expect} syndrome bytes, "
                f"got {len(self.masked_syndrome)}"
            )
        if len(self.verify_hash) != HASH_BYTES:
            raise DimensionError(f"verify hash must be {HASH_BYTES} bytes")


@dataclass(frozen=True)
class EcOutcome:
    corrected: Block | None
    leakage_bits: int
    rounds_used: int
    fell_back_to_reveal: bool
    accepted: bool


@dataclass(frozen=True)
class EcConfig:
    code: ldpc.QcLdpcCode
    alpha: float = 0.8
    max_iters: int = 100
    ber_prior: float = 0.02


def default_config(ber_prior: float = 0.02) -> EcConfig:
    return EcConfig(code=ldpc.default_code(), ber_prior=ber_prior)


def make_verify_hash(block: Block) -> bytes:
    """First 16 bytes of SHA-256 of the block contents."""
    return hashlib.sha256(block.data).digest()[:HASH_BYTES]


def syndrome_bytes_for_round(round_index: int) -> int:
    return BASE_SYNDROME_BYTES + SYNDROME_STEP_BYTES * (round_index - 1)


def _mask_for(part2: bytes, n_bytes: int) -> np.ndarray:
    mask = np.zeros(n_bytes * 8, dtype=np.uint8)
    mask[:PART2_BITS] = bytes_to_bits(part2)
    return mask


def sender_encode(block: Block, syndrome_len: int, cfg: EcConfig | None = None) -> SyndromePacket:
    """Build the masked syndrome packet for the given syndrome byte count."""
    if (syndrome_len < BASE_SYNDROME_BYTES or syndrome_len > MAX_SYNDROME_BYTES
            or (syndrome_len - BASE_SYNDROME_BYTES) % SYNDROME_STEP_BYTES):
        raise ConfigError(f"unsupported syndrome length {syndrome_len} bytes")
    cfg = cfg or default_config()
    round_index = 1 + (syndrome_len - BASE_SYNDROME_BYTES) // SYNDROME_STEP_BYTES
    syn = cfg.code.syndrome(bytes_to_bits(block.part1), syndrome_len * 8)
    masked = np.bitwise_xor(syn, _mask_for(block.part2, syndrome_len))
    return SyndromePacket(
        masked_syndrome=bits_to_bytes(masked),
        verify_hash=make_verify_hash(block),
        round_index=round_index,
    )


def _decode_batch(x1p_bits: np.ndarray, s2_bits: np.ndarray, cfg: EcConfig
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode (batch, PART1_BITS) data against (batch, m) noisy syndromes.

    Returns (x1_hat, s_hat, converged).  Only the first PART2_BITS syndrome
    positions carry mask noise; the rest are treated as clean.
    """
    m = s2_bits.shape[1]
    dec = ldpc.decoder_for(cfg.code, m, alpha=cfg.alpha, max_iters=cfg.max_iters)
    llr = np.empty((x1p_bits.shape[0], dec.n_total))
    llr[:, :PART1_BITS] = ldpc.channel_llr(x1p_bits, cfg.ber_prior)
    llr[:, PART1_BITS:PART1_BITS + PART2_BITS] = ldpc.channel_llr(
        s2_bits[:, :PART2_BITS], cfg.ber_prior)
    if m > PART2_BITS:
        llr[:, PART1_BITS + PART2_BITS:] = ldpc.clean_llr(s2_bits[:, PART2_BITS:])
    hard, converged = dec.decode(llr)
    return hard[:, :PART1_BITS], hard[:, PART1_BITS:], converged


def receiver_decode(local: Block, packet: SyndromePacket, cfg: EcConfig | None = None
                    ) -> tuple[Block, bool]:
    """Correct the local block against a received packet.

    Decoder non-convergence yields accepted=False, never an exception.
    """
    cfg = cfg or default_config()
    n_bytes = len(packet.masked_syndrome)
    s2 = np.bitwise_xor(bytes_to_bits(packet.masked_syndrome), _mask_for(local.part2, n_bytes))
    x1_hat, s_hat, _ = _decode_batch(
        bytes_to_bits(local.part1)[None, :], s2[None, :], cfg)
    e2 = np.bitwise_xor(s_hat[0, :PART2_BITS], s2[:PART2_BITS])
    x2_hat = np.bitwise_xor(bytes_to_bits(local.part2), e2)
    candidate = Block(bits_to_bytes(x1_hat[0]) + bits_to_bytes(x2_hat))
    accepted = make_verify_hash(candidate) == packet.verify_hash
    return candidate, accepted


def ec_session(sender: Block, receiver: Block, cfg: EcConfig | None = None) -> EcOutcome:
    """Full escalation ladder; falls back to revealing the block on exhaustion."""
    cfg = cfg or default_config()
    for r in range(1, MAX_ROUNDS + 1):
        packet = sender_encode(sender, syndrome_bytes_for_round(r), cfg)
        candidate, accepted = receiver_decode(receiver, packet, cfg)
        if accepted:
            leak = 8 * (syndrome_bytes_for_round(r) + HASH_BYTES)
            return EcOutcome(candidate, leak, r, False, True)
    return EcOutcome(Block(sender.data), 8 * BLOCK_BYTES, MAX_ROUNDS, True, True)


def run_bench(ber: float, trials: int, seed: int, cfg: EcConfig | None = None,
              batch: int = 64) -> list[EcOutcome]:
    """Monte-Carlo reconciliation outcomes at i.i.d. bit error rate ber.

    Escalation is evaluated round-by-round across the batch so LDPC decoding
    stays vectorized.
    """
    cfg = cfg or EcConfig(code=ldpc.default_code(), ber_prior=max(ber, 1e-3))
    rng = np.random.default_rng(seed)
    outcomes: list[EcOutcome] = []
    done = 0
    while done < trials:
        nb = min(batch, trials - done)
        sender_bits = rng.integers(0, 2, size=(nb, BLOCK_BITS), dtype=np.uint8)
        flips = (rng.random((nb, BLOCK_BITS)) < ber).astype(np.uint8)
        receiver_bits = np.bitwise_xor(sender_bits, flips)
        outcomes.extend(_bench_batch(sender_bits, receiver_bits, cfg))
        done += nb
    return outcomes


def _bench_batch(sender_bits: np.ndarray, receiver_bits: np.ndarray, cfg: EcConfig
                 ) -> list[EcOutcome]:
    nb = sender_bits.shape[0]
    results: list[EcOutcome | None] = [None] * nb
    active = np.arange(nb)
    hashes = [make_verify_hash(Block.from_bits(sender_bits[i])) for i in range(nb)]
    for r in range(1, MAX_ROUNDS + 1):
        if active.size == 0:
            break
        m_bits = syndrome_bytes_for_round(r) * 8
        syn = cfg.code.syndrome(sender_bits[active, :PART1_BITS], m_bits)
        mask_s = np.zeros((active.size, m_bits), dtype=np.uint8)
        mask_s[:, :PART2_BITS] = sender_bits[active, PART1_BITS:]
        mask_r = np.zeros((active.size, m_bits), dtype=np.uint8)
        mask_r[:, :PART2_BITS] = receiver_bits[active, PART1_BITS:]
        s2 = syn ^ mask_s ^ mask_r
        x1_hat, s_hat, _ = _decode_batch(receiver_bits[active, :PART1_BITS], s2, cfg)
        e2 = s_hat[:, :PART2_BITS] ^ s2[:, :PART2_BITS]
        x2_hat = receiver_bits[active, PART1_BITS:] ^ e2
        still = []
        for k, idx in enumerate(active):
            cand = Block(bits_to_bytes(x1_hat[k]) + bits_to_bytes(x2_hat[k]))
            if make_verify_hash(cand) == hashes[idx]:
                leak = 8 * (syndrome_bytes_for_round(r) + HASH_BYTES)
                results[idx] = EcOutcome(cand, leak, r, False, True)
            else:
                still.append(idx)
        active = np.array(still, dtype=np.int64)
    for idx in active:
        results[idx] = EcOutcome(
            Block.from_bits(sender_bits[idx]), 8 * BLOCK_BYTES, MAX_ROUNDS, True, True)
    return results  # type: ignore[return-value]
