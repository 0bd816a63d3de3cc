"""Authenticated key expansion session state machine for both roles.

One session runs ten steps: label agreement, simulated quantum exchange,
detection/basis announcement, sifting, test-round announcement, parameter
estimation, syndrome transfer, transcript-bound validation of the sender,
validation of the receiver, and key generation with label update.  The
pseudorandom-basis variant derives both parties' bases from a pre-shared
seed, skips sifting, echoes the seed for an extra authenticity check, and
refreshes the seed slot inside privacy amplification on success.

An adversary hook may transform every classical message in flight and
restrict which pulses are delivered; structural violations (wrong message
kind) make the receiving party treat the round as failed, never crash.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import bits as B
from . import finite_key as fk
from . import ldpc
from . import reconciliation as rec
from .bits import Bits
from .channel import RawSessionData, SourceConfig
from .errors import ConfigError, DimensionError, ParseError
from .hashing import MaskKey, StrongKey, Tag, ToeplitzSeed, hash_padded, privacy_amplify, random_seed

PHI = "phi"
REJECT = 0
ACCEPT = 1


def label_agreement(own_label: int, received_label: int) -> int:
    """Both parties settle on the larger of the two announced labels."""
    if own_label < 1 or received_label < 1:
        raise ConfigError("labels start at 1")
    return max(own_label, received_label)


def sift(sent_bases: np.ndarray, announced: np.ndarray,
         announced_bases: np.ndarray) -> np.ndarray:
    """Indices of announced detections whose bases match the sent ones."""
    announced = np.asarray(announced, dtype=np.int64)
    if announced.size and (announced.min() < 0 or announced.max() >= sent_bases.size):
        raise DimensionError("announced index outside the round range")
    if announced_bases.size != announced.size:
        raise DimensionError("announced bases must align with announced indices")
    keep = sent_bases[announced] == announced_bases
    return announced[keep]


# ---------------------------------------------------------------------------
# shared secrets


@dataclass
class SharedSecrets:
    """The recycled secret store of one party.

    mask_keys are one-time material indexed by the session label; a
    consumed-index watermark enforces single use.  basis_seeds exist only
    in the pseudorandom-basis variant and are refreshed in place on
    success.
    """

    k1_hash: ToeplitzSeed
    k2: StrongKey
    pa_seed: ToeplitzSeed
    mask_keys: list[Bits]
    basis_seeds: list[Bits] = field(default_factory=list)
    retired_below: int = field(default=1, repr=False)
    _run_used: set = field(default_factory=set, repr=False)

    def begin_run(self) -> None:
        self._run_used.clear()

    def use_mask(self, index: int) -> MaskKey:
        """Fetch mask key for a 1-based label.

        A mask key may be used once per protocol run (recycled across runs
        while the round keeps succeeding) and never again once any label
        has moved past it.
        """
        if not 1 <= index <= len(self.mask_keys):
            raise ConfigError(f"mask key index {index} outside 1..{len(self.mask_keys)}")
        if index < self.retired_below:
            raise ConfigError(f"mask key {index} was retired by a label update")
        if index in self._run_used:
            raise ConfigError(f"mask key {index} was already consumed this run")
        self._run_used.add(index)
        return MaskKey(self.mask_keys[index - 1])

    def retire_masks_below(self, label: int) -> None:
        self.retired_below = max(self.retired_below, label)

    def basis_seed(self, index: int) -> Bits:
        if not 1 <= index <= len(self.basis_seeds):
            raise ConfigError(f"basis seed index {index} outside 1..{len(self.basis_seeds)}")
        return self.basis_seeds[index - 1]

    def serialize(self) -> bytes:
        out = [struct.pack("<I", 0x514B4531)]
        out.append(self.k1_hash.serialize())
        out.append(self.k2.seed.serialize())
        out.append(B.serialize_bits(self.k2.pad))
        out.append(self.pa_seed.serialize())
        out.append(struct.pack("<I", len(self.mask_keys)))
        out.extend(B.serialize_bits(m) for m in self.mask_keys)
        out.append(struct.pack("<I", len(self.basis_seeds)))
        out.extend(B.serialize_bits(s) for s in self.basis_seeds)
        return b"".join(out)

    @staticmethod
    def deserialize(buf: bytes, offset: int = 0) -> tuple["SharedSecrets", int]:
        (magic,) = struct.unpack_from("<I", buf, offset)
        if magic != 0x514B4531:
            raise ParseError("bad secrets file magic")
        offset += 4
        k1, offset = ToeplitzSeed.deserialize(buf, offset)
        k2_seed, offset = ToeplitzSeed.deserialize(buf, offset)
        k2_pad, offset = B.deserialize_bits(buf, offset)
        pa, offset = ToeplitzSeed.deserialize(buf, offset)
        (m,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        masks = []
        for _ in range(m):
            bits, offset = B.deserialize_bits(buf, offset)
            masks.append(bits)
        (nb,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        seeds = []
        for _ in range(nb):
            bits, offset = B.deserialize_bits(buf, offset)
            seeds.append(bits)
        return SharedSecrets(k1, StrongKey(k2_seed, k2_pad), pa, masks, seeds), offset

    def clone(self) -> "SharedSecrets":
        return SharedSecrets(
            self.k1_hash, StrongKey(self.k2.seed, self.k2.pad.copy()), self.pa_seed,
            [m.copy() for m in self.mask_keys],
            [s.copy() for s in self.basis_seeds])


def make_secrets(rng: np.random.Generator, n_rounds: int, tag_bits: int,
                 l_kb_max: int, n_masks: int = 8, variant: str = "qake",
                 l_theta: int = 256) -> SharedSecrets:
    """Generate a fresh secret store sized for sessions of n_rounds pulses."""
    msg_bits = 160 * n_rounds + 4096
    k1 = random_seed(rng, tag_bits, msg_bits)
    k2 = StrongKey(random_seed(rng, tag_bits, n_rounds + 64),
                   B.random_bits(rng, tag_bits))
    pa_out = l_kb_max + (l_theta if variant == "prng" else 0)
    pa = random_seed(rng, max(pa_out, 1), max(n_rounds, pa_out, 1))
    masks = [B.random_bits(rng, tag_bits) for _ in range(n_masks)]
    seeds = ([B.random_bits(rng, l_theta) for _ in range(n_masks)]
             if variant == "prng" else [])
    return SharedSecrets(k1, k2, pa, masks, seeds)


def prng_expand_basis(seed: Bits, n: int) -> np.ndarray:
    """Deterministically expand a basis seed to n basis bits (AES-CTR)."""
    if seed.size < 128:
        raise ConfigError(f"basis seed must be at least 128 bits, got {seed.size}")
    if n <= 2 * seed.size:
        raise ConfigError("expansion needs n > 2 * seed length")
    key = hashlib.sha256(B.pack_bits(seed)).digest()
    cipher = Cipher(algorithms.AES(key), modes.CTR(b"\x00" * 16))
    enc = cipher.encryptor()
    stream = enc.update(b"\x00" * ((n + 7) // 8))
    return B.unpack_bits(stream, n)


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class LabelAnnounce:
    kind = "label"
    label: int

    def payload(self) -> bytes:
        return struct.pack("<I", self.label)


@dataclass(frozen=True)
class QuantumBlock:
    kind = "quantum"
    indices: np.ndarray

    def payload(self) -> bytes:
        return B.serialize_indices(self.indices)


@dataclass(frozen=True)
class DetectAndBasis:
    kind = "detect"
    indices: np.ndarray
    bases: Bits

    def payload(self) -> bytes:
        return B.serialize_indices(self.indices) + B.serialize_bits(self.bases)


@dataclass(frozen=True)
class SiftAnnounce:
    kind = "sift"
    indices: np.ndarray

    def payload(self) -> bytes:
        return B.serialize_indices(self.indices)


@dataclass(frozen=True)
class TestAnnounce:
    kind = "test"
    p1: np.ndarray
    p2: np.ndarray
    test_bits: Bits
    basis_seed: Bits | None = None  # pseudorandom-basis variant only

    def payload(self) -> bytes:
        out = (B.serialize_indices(self.p1) + B.serialize_indices(self.p2)
               + B.serialize_bits(self.test_bits))
        if self.basis_seed is not None:
            out += B.serialize_bits(self.basis_seed)
        return out


@dataclass(frozen=True)
class SyndromeMsg:
    kind = "syndrome"
    bits: Bits

    def payload(self) -> bytes:
        return B.serialize_bits(self.bits)


@dataclass(frozen=True)
class TagAV:
    kind = "tag_av"
    tag: Tag

    def payload(self) -> bytes:
        return self.tag.serialize()


@dataclass(frozen=True)
class TagBV:
    kind = "tag_bv"
    tag: Tag

    def payload(self) -> bytes:
        return self.tag.serialize()


Message = (LabelAnnounce | QuantumBlock | DetectAndBasis | SiftAnnounce
           | TestAnnounce | SyndromeMsg | TagAV | TagBV)


def dump_transcript(entries) -> str:
    lines = []
    for direction, msg in entries:
        lines.append(f"{direction} {msg.kind} {msg.payload().hex()}")
    return "\n".join(lines) + ("\n" if lines else "")


def build_validation_message(variant: str, *, x_p2: Bits, p: np.ndarray | None,
                             bases_p: Bits | None, sift_set: np.ndarray | None,
                             x_p1: Bits, p1: np.ndarray, p2: np.ndarray,
                             syndrome: Bits) -> Bits:
    """Canonical serialization of the transcript fields covered by the
    sender-validation tag, in protocol order, as a bit string."""
    if variant == "qake":
        blob = (B.serialize_bits(x_p2) + B.serialize_indices(p)
                + B.serialize_bits(bases_p) + B.serialize_indices(sift_set)
                + B.serialize_bits(x_p1) + B.serialize_indices(p1)
                + B.serialize_indices(p2) + B.serialize_bits(syndrome))
    elif variant == "prng":
        blob = (B.serialize_bits(x_p1) + B.serialize_indices(p1)
                + B.serialize_indices(p2) + B.serialize_bits(x_p2)
                + B.serialize_bits(syndrome))
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    return B.bytes_to_bits(blob)


# ---------------------------------------------------------------------------
# in-session error correction adapters


class RevealEc:
    """Degenerate reconciliation: the syndrome is the key-set string itself.

    Corrects every error; used where reconciliation quality is irrelevant
    (forgery statistics at toy scale)."""

    name = "reveal"

    def syndrome_len_bits(self, n2: int) -> int:
        return n2

    def encode(self, x2: Bits) -> Bits:
        return x2.copy()

    def decode(self, x2_prime: Bits, syndrome: Bits) -> Bits:
        if syndrome.size != x2_prime.size:
            return x2_prime.copy()
        return syndrome.copy()


class BlockLdpcEc:
    """One-shot block reconciliation matching the escalation ladder's base
    round: per 1188-byte block a masked 220-byte syndrome plus a 16-byte
    verification hash.  Key strings are zero-padded into whole blocks."""

    name = "ldpc"

    def __init__(self, ber_prior: float = 0.02):
        self.cfg = rec.default_config(ber_prior)

    def _blocks(self, n2: int) -> int:
        return max(1, math.ceil(n2 / rec.BLOCK_BITS))

    def syndrome_len_bits(self, n2: int) -> int:
        return self._blocks(n2) * (rec.BASE_SYNDROME_BYTES + rec.HASH_BYTES) * 8

    def encode(self, x2: Bits) -> Bits:
        nb = self._blocks(x2.size)
        padded = np.zeros(nb * rec.BLOCK_BITS, dtype=np.uint8)
        padded[: x2.size] = x2
        out = []
        for b in range(nb):
            block = rec.Block.from_bits(padded[b * rec.BLOCK_BITS:(b + 1) * rec.BLOCK_BITS])
            pkt = rec.sender_encode(block, rec.BASE_SYNDROME_BYTES, self.cfg)
            out.append(B.bytes_to_bits(pkt.masked_syndrome + pkt.verify_hash))
        return np.concatenate(out)

    def decode(self, x2_prime: Bits, syndrome: Bits) -> Bits:
        nb = self._blocks(x2_prime.size)
        per = (rec.BASE_SYNDROME_BYTES + rec.HASH_BYTES) * 8
        if syndrome.size != nb * per:
            return x2_prime.copy()
        padded = np.zeros(nb * rec.BLOCK_BITS, dtype=np.uint8)
        padded[: x2_prime.size] = x2_prime
        out = np.empty_like(padded)
        for b in range(nb):
            chunk = syndrome[b * per:(b + 1) * per]
            packet = rec.SyndromePacket(
                masked_syndrome=B.bits_to_bytes(chunk[: rec.BASE_SYNDROME_BYTES * 8]),
                verify_hash=B.bits_to_bytes(chunk[rec.BASE_SYNDROME_BYTES * 8:]),
                round_index=1)
            block = rec.Block.from_bits(padded[b * rec.BLOCK_BITS:(b + 1) * rec.BLOCK_BITS])
            cand, _ = rec.receiver_decode(block, packet, self.cfg)
            out[b * rec.BLOCK_BITS:(b + 1) * rec.BLOCK_BITS] = cand.bits()
        return out[: x2_prime.size]


def make_ec(name: str, ber_prior: float = 0.02):
    if name == "reveal":
        return RevealEc()
    if name == "ldpc":
        return BlockLdpcEc(ber_prior)
    raise ConfigError(f"unknown session reconciliation adapter {name!r}")


# ---------------------------------------------------------------------------
# parameter estimation


def decoy_observables(intensity_label: np.ndarray, p1: np.ndarray, p2: np.ndarray,
                      err_p1: np.ndarray) -> fk.DecoyObservables:
    """Count detections and test-set errors per intensity for both sets.

    err_p1 is the boolean error pattern aligned with p1.
    """
    det = np.zeros((2, 3), dtype=np.int64)
    err = np.zeros((2, 3), dtype=np.int64)
    for si, idx in enumerate((p1, p2)):
        labels = intensity_label[idx]
        for v in range(3):
            det[si, v] = int((labels == v).sum())
    labels1 = intensity_label[p1]
    for v in range(3):
        err[0, v] = int((err_p1 & (labels1 == v)).sum())
    return fk.DecoyObservables(set_sizes=(len(p1), len(p2)),
                               det_counts=det, err_counts=err)


def parameter_estimation(obs: fk.DecoyObservables, th: fk.ProtocolThresholds,
                         src: SourceConfig, n_trials: float,
                         sift_size: int, pe_eps: float = 1e-3,
                         method: str = "hoeffding",
                         seed_echo_ok: bool = True) -> int:
    """Threshold checklist deciding D_PE.

    Checks: sifted-set size, exact test split size, zero- and single-photon
    lower bounds, single-photon error-rate upper bound, raw bit error rate,
    and (pseudorandom variant) the echoed basis seed.
    """
    n1, n2 = obs.set_sizes
    if not seed_echo_ok:
        return 0
    if sift_size < th.sift_tol:
        return 0
    if n1 != math.ceil(th.f_p1 * sift_size):
        return 0
    if fk.estimate_zero_photon_lb(obs, 1, src, n_trials, pe_eps, method) < th.n0_p2_tol:
        return 0
    n1_p2 = fk.estimate_single_photon_lb(obs, 1, src, n_trials, pe_eps, method)
    if n1_p2 < th.n1_p2_tol:
        return 0
    n1_p1 = fk.estimate_single_photon_lb(obs, 0, src, n_trials, pe_eps, method)
    if n1_p1 < th.n1_p1_tol:
        return 0
    e1_hat = fk.estimate_single_photon_error_ub(obs, src, n_trials, pe_eps, method) \
        / n1_p1 if n1_p1 > 0 else 0.5
    if min(e1_hat, 0.5) > th.e1_tol:
        return 0
    errs = int(obs.err_counts[0].sum())
    if n1 > 0 and errs / n1 > th.ebit_tol:
        return 0
    return 1


# ---------------------------------------------------------------------------
# session orchestration


@dataclass
class SessionConfig:
    n: int
    variant: str = "qake"
    thresholds: fk.ProtocolThresholds | None = None  # defaults to relaxed_thresholds
    ec: str = "reveal"
    ec_ber_prior: float = 0.02
    pe_eps: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("qake", "prng"):
            raise ConfigError(f"unknown session variant {self.variant!r}")
        if self.thresholds is None:
            self.thresholds = relaxed_thresholds(variant=self.variant)


def relaxed_thresholds(tag_bits: int = 8, l_kb: int = 32, f_p1: float = 0.25,
                       variant: str = "qake", l_theta: int = 256
                       ) -> fk.ProtocolThresholds:
    """Tolerances loose enough for small honest sessions to accept.

    The photon-count tolerances are vacuous because a few hundred rounds
    carry no resolvable decoy statistics; what toy sessions exercise is
    the transcript binding, not the finite-key arithmetic.
    """
    return fk.ProtocolThresholds(
        sift_tol=8, n1_p2_tol=0, n1_p1_tol=0, e1_tol=0.5, ebit_tol=0.35,
        f_p1=f_p1, tag_av_bits=tag_bits, tag_bv_bits=tag_bits, leak_ec=0,
        l_kb=l_kb, l_theta=l_theta if variant == "prng" else 0)


@dataclass
class PartyConfig:
    secrets: SharedSecrets
    label: int = 1


@dataclass
class SessionOutcome:
    f_a: object
    f_b: object
    k_a: Bits | None
    k_b: Bits | None
    label_a: int
    label_b: int
    d_pe: int
    transcript: list
    leak_bits: int

    @property
    def keys_match(self) -> bool:
        return (self.k_a is not None and self.k_b is not None
                and self.k_a.size == self.k_b.size
                and bool((self.k_a == self.k_b).all()))


def _identity_hook(direction: str, msg: Message) -> Message:
    return msg


def run_session(cfg: SessionConfig, alice: PartyConfig, bob: PartyConfig,
                raw: RawSessionData, hook=None,
                src: SourceConfig | None = None) -> SessionOutcome:
    """Execute one protocol round over pre-simulated raw pulse data.

    The hook sees every message in flight and may transform it; the
    identity hook is an honest channel.  Raw data must cover cfg.n rounds;
    for the pseudorandom-basis variant it must have been generated with
    the seed-derived bases.
    """
    hook = hook or _identity_hook
    src = src or SourceConfig()
    th = cfg.thresholds
    if raw.n != cfg.n:
        raise ConfigError(f"raw data has {raw.n} rounds, config wants {cfg.n}")
    a_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xA11CE)))
    b_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xB0B)))
    ec = make_ec(cfg.ec, cfg.ec_ber_prior)
    transcript: list = []
    violated_a = violated_b = False

    def send(direction, msg):
        out = hook(direction, msg)
        transcript.append((direction, out))
        return out

    def expect(msg, kind, who):
        nonlocal violated_a, violated_b
        if msg.kind != kind:
            if who == "a":
                violated_a = True
            else:
                violated_b = True
            return None
        return msg

    alice.secrets.begin_run()
    bob.secrets.begin_run()
    n_masks_a = len(alice.secrets.mask_keys)
    n_masks_b = len(bob.secrets.mask_keys)

    # 1. label agreement (out-of-store labels are a structural violation)
    m = expect(send("a->b", LabelAnnounce(alice.label)), "label", "b")
    beta_b = label_agreement(bob.label, m.label) if m and m.label >= 1 else bob.label
    if m is not None and not 1 <= m.label <= n_masks_b:
        violated_b, beta_b = True, bob.label
    m = expect(send("b->a", LabelAnnounce(bob.label)), "label", "a")
    beta_a = label_agreement(alice.label, m.label) if m and m.label >= 1 else alice.label
    if m is not None and not 1 <= m.label <= n_masks_a:
        violated_a, beta_a = True, alice.label

    # 2./3. quantum exchange and detection
    m = expect(send("a->b", QuantumBlock(np.arange(cfg.n))), "quantum", "b")
    delivered = m.indices if m is not None else np.empty(0, dtype=np.int64)
    delivered = np.asarray(delivered, dtype=np.int64)
    delivered = delivered[(delivered >= 0) & (delivered < cfg.n)]
    det_mask = np.zeros(cfg.n, dtype=bool)
    det_mask[delivered] = raw.detected[delivered]
    p_set = np.flatnonzero(det_mask)

    if cfg.variant == "qake":
        m = expect(send("b->a", DetectAndBasis(p_set, raw.basis_b[p_set])), "detect", "a")
        if m is not None:
            p_recv = np.asarray(m.indices, dtype=np.int64)
            p_recv = p_recv[(p_recv >= 0) & (p_recv < cfg.n)]
            bases_recv = np.asarray(m.bases, dtype=np.uint8)[: p_recv.size]
            sift_a = sift(raw.basis_a, p_recv, bases_recv)
        else:
            p_recv = np.empty(0, dtype=np.int64)
            bases_recv = B.zeros(0)
            sift_a = np.empty(0, dtype=np.int64)
        m = expect(send("a->b", SiftAnnounce(sift_a)), "sift", "b")
        sift_b = (np.asarray(m.indices, dtype=np.int64)
                  if m is not None else np.empty(0, dtype=np.int64))
        sift_b = sift_b[np.isin(sift_b, p_set)]
    else:
        # pseudorandom bases: every detection is kept, bases never announced
        p_recv = p_set
        bases_recv = B.zeros(0)
        sift_a = None
        sift_b = p_set

    # 5. test announcement (Bob splits his kept set)
    n_test = math.ceil(th.f_p1 * sift_b.size)
    perm = b_rng.permutation(sift_b.size)
    p1_b = np.sort(sift_b[perm[:n_test]])
    p2_b = np.sort(sift_b[perm[n_test:]])
    x_p1_b = raw.bit_b[p1_b].astype(np.uint8)
    seed_echo = (bob.secrets.basis_seed(beta_b) if cfg.variant == "prng" else None)
    m = expect(send("b->a", TestAnnounce(p1_b, p2_b, x_p1_b, seed_echo)), "test", "a")
    if m is not None:
        p1_r = np.asarray(m.p1, dtype=np.int64)
        p2_r = np.asarray(m.p2, dtype=np.int64)
        x_p1_r = np.asarray(m.test_bits, dtype=np.uint8)
        seed_r = m.basis_seed
    else:
        p1_r = p2_r = np.empty(0, dtype=np.int64)
        x_p1_r = B.zeros(0)
        seed_r = None
    in_range = lambda idx: idx[(idx >= 0) & (idx < cfg.n)]
    p1_r, p2_r = in_range(p1_r), in_range(p2_r)
    x_p1_r = x_p1_r[: p1_r.size]

    # 6. parameter estimation (Alice, on received sets)
    sift_size_a = sift_a.size if cfg.variant == "qake" else p_recv.size
    err_p1 = (raw.bit_a[p1_r].astype(np.uint8) ^ x_p1_r).astype(bool) \
        if x_p1_r.size == p1_r.size else np.ones(p1_r.size, dtype=bool)
    obs = decoy_observables(raw.intensity_label, p1_r, p2_r, err_p1)
    seed_ok = True
    if cfg.variant == "prng":
        own = alice.secrets.basis_seed(beta_a)
        seed_ok = (seed_r is not None and seed_r.size == own.size
                   and bool((seed_r == own).all()))
    d_pe = 0 if violated_a else parameter_estimation(
        obs, th, src, cfg.n, sift_size_a, cfg.pe_eps, seed_echo_ok=seed_ok)
    if p1_r.size != x_p1_r.size or p2_r.size == 0:
        d_pe = 0

    # 7. error correction
    x_p2_a = raw.bit_a[p2_r].astype(np.uint8)
    syn_len = ec.syndrome_len_bits(x_p2_a.size) if x_p2_a.size else 0
    if d_pe and x_p2_a.size:
        syndrome_a = ec.encode(x_p2_a)
    else:
        syndrome_a = B.random_bits(a_rng, syn_len)
    m = expect(send("a->b", SyndromeMsg(syndrome_a)), "syndrome", "b")
    syn_r = m.bits if m is not None else B.zeros(0)
    x_p2_b = raw.bit_b[p2_b].astype(np.uint8)
    expected_syn = ec.syndrome_len_bits(x_p2_b.size) if x_p2_b.size else 0
    if syn_r.size == expected_syn and x_p2_b.size:
        x_hat = ec.decode(x_p2_b, syn_r)
    else:
        x_hat = x_p2_b.copy()
        violated_b = violated_b or syn_r.size != expected_syn
    leak_bits = syn_len

    # 8. sender validation tag
    if d_pe:
        msg_a = build_validation_message(
            cfg.variant, x_p2=x_p2_a, p=p_recv, bases_p=bases_recv,
            sift_set=sift_a, x_p1=x_p1_r, p1=p1_r, p2=p2_r, syndrome=syndrome_a)
        mask = alice.secrets.use_mask(beta_a)
        tag_av = Tag(B.xor(hash_padded(alice.secrets.k1_hash, msg_a), mask.value))
    else:
        tag_av = Tag(B.random_bits(a_rng, th.tag_av_bits))
    m = expect(send("a->b", TagAV(tag_av)), "tag_av", "b")
    msg_b = build_validation_message(
        cfg.variant, x_p2=x_hat, p=p_set, bases_p=raw.basis_b[p_set],
        sift_set=sift_b if cfg.variant == "qake" else None,
        x_p1=x_p1_b, p1=p1_b, p2=p2_b, syndrome=syn_r)
    mask_b = bob.secrets.use_mask(beta_b)
    tag_check = Tag(B.xor(hash_padded(bob.secrets.k1_hash, msg_b), mask_b.value))
    d_av = int(m is not None and not violated_b
               and m.tag.bit_length == tag_check.bit_length
               and bool((m.tag.value == tag_check.value).all()))
    f_b = ACCEPT if d_av else REJECT

    # 9. receiver validation tag
    if f_b == ACCEPT:
        tag_bv = bob.secrets.k2.tag(x_hat)
    else:
        tag_bv = Tag(B.random_bits(b_rng, th.tag_bv_bits))
    m = expect(send("b->a", TagBV(tag_bv)), "tag_bv", "a")
    tag_bv_check = alice.secrets.k2.tag(x_p2_a)
    d_bv = int(m is not None and not violated_a
               and m.tag.bit_length == tag_bv_check.bit_length
               and bool((m.tag.value == tag_bv_check.value).all()))
    f_a = ACCEPT if (d_pe and d_bv) else REJECT

    # 10. key generation or label update
    out_len = th.l_kb + th.l_theta
    k_a = k_b = None
    if f_a == ACCEPT and x_p2_a.size >= out_len:
        full = _pa(alice.secrets.pa_seed, x_p2_a, out_len)
        k_a = full[: th.l_kb]
        if cfg.variant == "prng":
            alice.secrets.basis_seeds[beta_a - 1] = full[th.l_kb:]
    label_a = alice.label if f_a == ACCEPT else beta_a + 1
    if f_b == ACCEPT and x_hat.size >= out_len:
        full = _pa(bob.secrets.pa_seed, x_hat, out_len)
        k_b = full[: th.l_kb]
        if cfg.variant == "prng":
            bob.secrets.basis_seeds[beta_b - 1] = full[th.l_kb:]
    label_b = bob.label if f_b == ACCEPT else beta_b + 1
    if f_a == ACCEPT and k_a is None:
        f_a = REJECT          # degenerate key set: force failure, no key material
        label_a = beta_a + 1
    if f_b == ACCEPT and k_b is None:
        f_b = REJECT
        label_b = beta_b + 1
    alice.label, bob.label = label_a, label_b
    alice.secrets.retire_masks_below(label_a)
    bob.secrets.retire_masks_below(label_b)
    return SessionOutcome(f_a=f_a, f_b=f_b, k_a=k_a, k_b=k_b,
                          label_a=label_a, label_b=label_b, d_pe=d_pe,
                          transcript=transcript, leak_bits=leak_bits)


def _pa(seed: ToeplitzSeed, x: Bits, out_len: int) -> Bits:
    """Privacy amplification over a zero-padded input of the seed's width."""
    if x.size >= seed.msg_len:
        data = x[: seed.msg_len]
    else:
        data = np.zeros(seed.msg_len, dtype=np.uint8)
        data[: x.size] = x
    return privacy_amplify(seed, data, out_len)
