"""Decoy-state BB84 physical layer: source, lossy channel, threshold detector.

The model follows a simple joint picture: each round draws an intensity
from the configured distribution, the pulse is detected with probability
1 - exp(-eta * mu) (plus an optional dark-count term), and on detection
with matched bases the receiver's bit equals the sender's flipped with
probability Q; on mismatched bases the outcome is uniform.

All randomness derives from a counter-based scheme: round block i of a
session seeded with s uses SeedSequence((s, i)), so results are identical
no matter how rounds are sharded across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ParseError

Z, X = 0, 1
NO_CLICK = -1

_BLOCK = 1 << 16


@dataclass(frozen=True)
class SourceConfig:
    """Decoy source: three intensities with selection probabilities."""

    intensities: tuple[float, float, float] = (0.45, 0.225, 0.0)
    intensity_probs: tuple[float, float, float] = (0.2, 0.6, 0.2)
    basis_prob_x: float = 0.5

    def __post_init__(self):
        mu0, mu1, mu2 = self.intensities
        if not (mu0 > mu1 > mu2 >= 0):
            raise ConfigError(f"need mu0 > mu1 > mu2 >= 0, got {self.intensities}")
        if not mu0 > mu1 + mu2:
            raise ConfigError("decoy bound validity needs mu0 > mu1 + mu2")
        if abs(sum(self.intensity_probs) - 1.0) > 1e-9 or min(self.intensity_probs) < 0:
            raise ConfigError(f"intensity probabilities must sum to 1, got {self.intensity_probs}")
        if not 0 < self.basis_prob_x < 1:
            raise ConfigError("basis_prob_x must lie strictly between 0 and 1")


@dataclass(frozen=True)
class ChannelConfig:
    """Transmittance eta (unitless), QBER and dark-count probability."""

    transmittance: float
    qber: float
    dark_count_prob: float = 0.0

    def __post_init__(self):
        if not 0 <= self.transmittance <= 1:
            raise ConfigError(f"transmittance must be in [0, 1], got {self.transmittance}")
        if not 0 <= self.qber <= 0.5:
            raise ConfigError(f"qber must be in [0, 0.5], got {self.qber}")
        if self.dark_count_prob < 0:
            raise ConfigError("dark_count_prob must be nonnegative")

    @property
    def loss_db(self) -> float:
        if self.transmittance == 0:
            return math.inf
        return -10.0 * math.log10(self.transmittance)

    @staticmethod
    def from_loss_db(loss_db: float, qber: float, dark_count_prob: float = 0.0) -> "ChannelConfig":
        return ChannelConfig(10.0 ** (-loss_db / 10.0), qber, dark_count_prob)


@dataclass(frozen=True)
class PulseRecord:
    index: int
    intensity_label: int
    basis: int
    bit: int


@dataclass(frozen=True)
class DetectionRecord:
    index: int
    detected: bool
    basis: int
    bit: int  # NO_CLICK when detected is False


@dataclass
class RawSessionData:
    """Array-backed per-round records, index-aligned across all fields."""

    intensity_label: np.ndarray  # int8 in {0,1,2}
    basis_a: np.ndarray         # uint8, Z/X
    bit_a: np.ndarray           # uint8
    basis_b: np.ndarray         # uint8
    bit_b: np.ndarray           # int8, NO_CLICK for no detection

    def __post_init__(self):
        n = self.intensity_label.size
        for arr in (self.basis_a, self.bit_a, self.basis_b, self.bit_b):
            if arr.size != n:
                raise ConfigError("raw session arrays must be index-aligned")

    @property
    def n(self) -> int:
        return self.intensity_label.size

    @property
    def detected(self) -> np.ndarray:
        return self.bit_b != NO_CLICK

    def pulse(self, i: int) -> PulseRecord:
        return PulseRecord(i, int(self.intensity_label[i]), int(self.basis_a[i]),
                           int(self.bit_a[i]))

    def detection(self, i: int) -> DetectionRecord:
        det = self.bit_b[i] != NO_CLICK
        return DetectionRecord(i, bool(det), int(self.basis_b[i]), int(self.bit_b[i]))

    def copy(self) -> "RawSessionData":
        return RawSessionData(*(a.copy() for a in (
            self.intensity_label, self.basis_a, self.bit_a, self.basis_b, self.bit_b)))


def _simulate_block(src: SourceConfig, ch: ChannelConfig, n: int,
                    rng: np.random.Generator,
                    alice_bases: np.ndarray | None,
                    bob_bases: np.ndarray | None) -> RawSessionData:
    mus = np.asarray(src.intensities)
    v = rng.choice(3, size=n, p=np.asarray(src.intensity_probs)).astype(np.int8)
    if alice_bases is None:
        basis_a = (rng.random(n) < src.basis_prob_x).astype(np.uint8)
    else:
        basis_a = alice_bases.astype(np.uint8)
    bit_a = rng.integers(0, 2, size=n, dtype=np.uint8)
    if bob_bases is None:
        basis_b = rng.integers(0, 2, size=n, dtype=np.uint8)
    else:
        basis_b = bob_bases.astype(np.uint8)
    p_click = 1.0 - np.exp(-ch.transmittance * mus[v])
    if ch.dark_count_prob > 0:
        p_click = 1.0 - (1.0 - p_click) * (1.0 - ch.dark_count_prob)
    detected = rng.random(n) < p_click
    matched = basis_a == basis_b
    flips = rng.random(n) < ch.qber
    uniform = rng.integers(0, 2, size=n, dtype=np.uint8)
    bit_b = np.where(matched, bit_a ^ flips.astype(np.uint8), uniform).astype(np.int8)
    bit_b[~detected] = NO_CLICK
    return RawSessionData(v, basis_a, bit_a, basis_b, bit_b)


def simulate_round(src: SourceConfig, ch: ChannelConfig, rng: np.random.Generator
                   ) -> tuple[PulseRecord, DetectionRecord]:
    """Single-round draw; detection probability is 1 - exp(-eta * mu_v)."""
    raw = _simulate_block(src, ch, 1, rng, None, None)
    return raw.pulse(0), raw.detection(0)


def simulate_session(src: SourceConfig, ch: ChannelConfig, n: int, seed,
                     alice_bases: np.ndarray | None = None,
                     bob_bases: np.ndarray | None = None) -> RawSessionData:
    """Simulate n aligned rounds, deterministic for a fixed seed.

    Basis overrides (used by the pseudorandom-basis protocol variant) must
    cover all n rounds.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    for name, arr in (("alice_bases", alice_bases), ("bob_bases", bob_bases)):
        if arr is not None and arr.size != n:
            raise ConfigError(f"{name} must have length n={n}")
    parts = []
    for i, start in enumerate(range(0, n, _BLOCK)):
        stop = min(start + _BLOCK, n)
        rng = np.random.default_rng(np.random.SeedSequence((_entropy(seed), i)))
        parts.append(_simulate_block(
            src, ch, stop - start, rng,
            None if alice_bases is None else alice_bases[start:stop],
            None if bob_bases is None else bob_bases[start:stop]))
    return RawSessionData(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("intensity_label", "basis_a", "bit_a",
                                      "basis_b", "bit_b")))


def _entropy(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    raise ConfigError(f"seed must be an integer, got {type(seed).__name__}")


def post_select_balance(raw: RawSessionData, seed: int) -> RawSessionData:
    """Balance per-basis detection counts by discarding random detections.

    Detections of the over-represented receiver basis are dropped uniformly
    at random until the two counts differ by at most one; dropped rounds
    keep their pulse records but are marked as no-clicks.  Survivor bits
    are never altered.
    """
    if raw.n == 0:
        raise ConfigError("raw data must be nonempty")
    out = raw.copy()
    det = out.detected
    idx_z = np.flatnonzero(det & (out.basis_b == Z))
    idx_x = np.flatnonzero(det & (out.basis_b == X))
    if idx_z.size == 0 or idx_x.size == 0:
        victim = idx_z if idx_z.size else idx_x
        out.bit_b[victim] = NO_CLICK
        return out
    rng = np.random.default_rng(np.random.SeedSequence((_entropy(seed), 0x9a1)))
    excess = abs(idx_z.size - idx_x.size)
    if excess > 1:
        over = idx_z if idx_z.size > idx_x.size else idx_x
        drop = rng.choice(over, size=excess, replace=False)
        out.bit_b[drop] = NO_CLICK
    return out


_BASIS_CHARS = {Z: "Z", X: "X"}
_BASIS_VALUES = {"Z": Z, "X": X}


def save_raw_data(raw: RawSessionData, path) -> None:
    """Text dump, one round per line: index v basis_a bit_a basis_b bit_b."""
    with open(path, "w") as fh:
        for i in range(raw.n):
            b = raw.bit_b[i]
            fh.write(f"{i} {raw.intensity_label[i]} {_BASIS_CHARS[int(raw.basis_a[i])]} "
                     f"{raw.bit_a[i]} {_BASIS_CHARS[int(raw.basis_b[i])]} "
                     f"{'-' if b == NO_CLICK else int(b)}\n")


def load_raw_data(path) -> RawSessionData:
    """Parse the text record format; malformed lines report their number."""
    v, ba, xa, bb, xb = [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 6:
                raise ParseError(f"expected 6 fields, got {len(parts)}", line=lineno + 1)
            try:
                idx = int(parts[0])
                label = int(parts[1])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno + 1) from exc
            if idx != len(v):
                raise ParseError(f"index {idx} out of order (expected {len(v)})",
                                 line=lineno + 1)
            if label not in (0, 1, 2):
                raise ParseError(f"intensity label {label} outside 0..2", line=lineno + 1)
            if parts[2] not in _BASIS_VALUES or parts[4] not in _BASIS_VALUES:
                raise ParseError(f"basis must be Z or X, got {parts[2]!r}/{parts[4]!r}",
                                 line=lineno + 1)
            if parts[3] not in ("0", "1"):
                raise ParseError(f"sender bit must be 0 or 1, got {parts[3]!r}",
                                 line=lineno + 1)
            if parts[5] not in ("0", "1", "-"):
                raise ParseError(f"receiver bit must be 0, 1 or -, got {parts[5]!r}",
                                 line=lineno + 1)
            v.append(label)
            ba.append(_BASIS_VALUES[parts[2]])
            xa.append(int(parts[3]))
            bb.append(_BASIS_VALUES[parts[4]])
            xb.append(NO_CLICK if parts[5] == "-" else int(parts[5]))
    return RawSessionData(
        np.asarray(v, dtype=np.int8), np.asarray(ba, dtype=np.uint8),
        np.asarray(xa, dtype=np.uint8), np.asarray(bb, dtype=np.uint8),
        np.asarray(xb, dtype=np.int8))


def detection_rate(src: SourceConfig, ch: ChannelConfig) -> float:
    """Per-pulse joint detection probability sum_j p_j (1 - exp(-eta mu_j))."""
    return float(sum(p * (1.0 - math.exp(-ch.transmittance * mu))
                     for p, mu in zip(src.intensity_probs, src.intensities)))
