"""Attack strategies over the message hook plus trial statistics.

Strategies only ever see protocol messages in flight; none of them holds
a reference to either party's secret store.  Trials are independent and
seeded, so identical (strategy, seed) pairs reproduce identical tallies.
Empirical frequencies are compared against the security bounds at toy tag
sizes, where events like a 2^-8 forgery are statistically resolvable.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import protocol as P
from .bits import Bits
from .channel import ChannelConfig, SourceConfig, simulate_session
from .errors import ConfigError

WILSON_Z = 2.5758293035489004  # two-sided 99%


# ---------------------------------------------------------------------------
# strategies


class Passive:
    name = "passive"

    def hook(self, rng):
        return None  # honest channel

    phi_side = None
    shared_secrets = False


class TamperField:
    """Flip one bit (or index membership) of the first message of a kind."""

    name = "tamper"
    phi_side = None
    shared_secrets = False

    def __init__(self, kind: str, position: int = 0):
        self.kind = kind
        self.position = position

    def hook(self, rng):
        done = {"fired": False}
        pos = self.position

        def h(direction, msg):
            if done["fired"] or msg.kind != self.kind:
                return msg
            done["fired"] = True
            if msg.kind == "label":
                return P.LabelAnnounce(msg.label + 1)
            if msg.kind == "quantum":
                keep = msg.indices[msg.indices != (pos % max(len(msg.indices), 1))]
                return P.QuantumBlock(keep)
            if msg.kind == "detect":
                if msg.bases.size == 0:
                    return msg
                b = msg.bases.copy()
                b[pos % b.size] ^= 1
                return P.DetectAndBasis(msg.indices, b)
            if msg.kind == "sift":
                if len(msg.indices) == 0:
                    return msg
                keep = np.delete(msg.indices, pos % len(msg.indices))
                return P.SiftAnnounce(keep)
            if msg.kind == "test":
                if msg.test_bits.size == 0:
                    return msg
                tb = msg.test_bits.copy()
                tb[pos % tb.size] ^= 1
                return P.TestAnnounce(msg.p1, msg.p2, tb, msg.basis_seed)
            if msg.kind == "syndrome":
                if msg.bits.size == 0:
                    return msg
                sb = msg.bits.copy()
                sb[pos % sb.size] ^= 1
                return P.SyndromeMsg(sb)
            if msg.kind == "tag_av":
                t = msg.tag.value.copy()
                t[pos % t.size] ^= 1
                return P.TagAV(P.Tag(t))
            if msg.kind == "tag_bv":
                t = msg.tag.value.copy()
                t[pos % t.size] ^= 1
                return P.TagBV(P.Tag(t))
            return msg

        return h


class ReplayTag:
    """Record the sender-validation tag of an honest session, then replay it."""

    name = "replay_tag"
    phi_side = None
    shared_secrets = True  # trials share one secret store so the replay is meaningful

    def __init__(self):
        self.recorded: P.Tag | None = None

    def prepare(self, cfg, secrets, src, raw_seed_base, session_seed):
        raw = _sim_raw(cfg, src, raw_seed_base)
        a = P.PartyConfig(secrets=secrets.clone())
        b = P.PartyConfig(secrets=secrets.clone())
        out = P.run_session(replace(cfg, seed=session_seed), a, b, raw, src=src)
        for _, msg in out.transcript:
            if msg.kind == "tag_av":
                self.recorded = msg.tag
        if self.recorded is None:
            raise ConfigError("recording session produced no tag")

    def hook(self, rng):
        rec = self.recorded

        def h(direction, msg):
            if msg.kind == "tag_av" and rec is not None:
                return P.TagAV(rec)
            return msg

        return h


class ImpersonateAlice:
    """Run the sender's message flow without her secrets; F_A is undefined."""

    name = "impersonate_alice"
    phi_side = "a"
    shared_secrets = False

    def hook(self, rng):
        return None


class ImpersonateBob:
    """Run the receiver's message flow without his secrets; F_B is undefined."""

    name = "impersonate_bob"
    phi_side = "b"
    shared_secrets = False

    def hook(self, rng):
        return None


class DesyncLabels:
    """Shift the sender's label announcement so mask-key indices mismatch."""

    name = "desync_labels"
    phi_side = None
    shared_secrets = False

    def __init__(self, offset: int = 1):
        self.offset = offset

    def hook(self, rng):
        off = self.offset

        def h(direction, msg):
            if direction == "a->b" and msg.kind == "label":
                return P.LabelAnnounce(msg.label + off)
            return msg

        return h


STRATEGIES = {
    "passive": Passive,
    "tamper": TamperField,
    "replay-tag": ReplayTag,
    "impersonate-alice": ImpersonateAlice,
    "impersonate-bob": ImpersonateBob,
    "desync-labels": DesyncLabels,
}


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialConfig:
    n: int = 256
    tag_bits: int = 8
    variant: str = "qake"
    qber: float = 0.02
    transmittance: float = 0.8
    l_kb: int = 16
    ec: str = "reveal"
    src: SourceConfig = SourceConfig(intensities=(0.9, 0.4, 0.0),
                                     intensity_probs=(0.5, 0.3, 0.2))

    def session_config(self, seed: int) -> P.SessionConfig:
        th = P.relaxed_thresholds(tag_bits=self.tag_bits, l_kb=self.l_kb,
                                  variant=self.variant)
        return P.SessionConfig(n=self.n, variant=self.variant, thresholds=th,
                               ec=self.ec, seed=seed)


@dataclass
class TrialStats:
    trials: int
    freq: Counter
    key_mismatch_accepts: int

    def rate(self, event) -> float:
        return self.freq.get(event, 0) / self.trials

    def count_where(self, pred) -> int:
        return sum(c for ev, c in self.freq.items() if pred(ev))

    def wilson(self, count: int) -> tuple[float, float]:
        """99% Wilson interval for count/trials."""
        n = self.trials
        if n == 0:
            return 0.0, 1.0
        p = count / n
        z2 = WILSON_Z**2
        denom = 1.0 + z2 / n
        center = (p + z2 / (2 * n)) / denom
        half = WILSON_Z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
        return max(0.0, center - half), min(1.0, center + half)


def _sim_raw(cfg: P.SessionConfig, src: SourceConfig, seed: int,
             trial_cfg: TrialConfig | None = None):
    tc = trial_cfg
    ch = ChannelConfig(transmittance=tc.transmittance if tc else 0.8,
                       qber=tc.qber if tc else 0.02)
    return simulate_session(src, ch, cfg.n, seed)


def run_trials(strategy, tcfg: TrialConfig, trials: int, seed: int) -> TrialStats:
    """Independent seeded sessions through the strategy's hook, tallied.

    Impersonation strategies replace the impersonated side's secret store
    with fresh material of the same shape; that side's outcome is the
    not-involved marker.
    """
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    ch = ChannelConfig(transmittance=tcfg.transmittance, qber=tcfg.qber)
    freq: Counter = Counter()
    mismatch_accepts = 0
    base_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBA5E)))
    shared = None
    if getattr(strategy, "shared_secrets", False):
        shared = P.make_secrets(base_rng, tcfg.n, tcfg.tag_bits, tcfg.l_kb,
                                n_masks=8, variant=tcfg.variant)
        prep = getattr(strategy, "prepare", None)
        if prep is not None:
            prep(tcfg.session_config(seed=0), shared, tcfg.src, seed ^ 0x5EED, 0)

    for i in range(trials):
        ss = np.random.SeedSequence((seed, i + 1))
        raw_seed, sess_seed, sec_seed, imp_seed = (int(x) for x in
                                                   ss.generate_state(4))
        cfg = tcfg.session_config(seed=sess_seed)
        raw = simulate_session(tcfg.src, ch, tcfg.n, raw_seed)
        if shared is not None:
            secrets = shared
        else:
            secrets = P.make_secrets(np.random.default_rng(sec_seed), tcfg.n,
                                     tcfg.tag_bits, tcfg.l_kb, n_masks=8,
                                     variant=tcfg.variant)
        alice = P.PartyConfig(secrets=secrets.clone())
        bob = P.PartyConfig(secrets=secrets.clone())
        if strategy.phi_side == "a":
            alice = P.PartyConfig(secrets=P.make_secrets(
                np.random.default_rng(imp_seed), tcfg.n, tcfg.tag_bits,
                tcfg.l_kb, n_masks=8, variant=tcfg.variant))
        elif strategy.phi_side == "b":
            bob = P.PartyConfig(secrets=P.make_secrets(
                np.random.default_rng(imp_seed), tcfg.n, tcfg.tag_bits,
                tcfg.l_kb, n_masks=8, variant=tcfg.variant))
        hook = strategy.hook(np.random.default_rng(imp_seed ^ 0xAD))
        out = P.run_session(cfg, alice, bob, raw, hook=hook, src=tcfg.src)
        f_a = P.PHI if strategy.phi_side == "a" else out.f_a
        f_b = P.PHI if strategy.phi_side == "b" else out.f_b
        freq[(f_a, f_b)] += 1
        if (out.f_a == P.ACCEPT and out.f_b == P.ACCEPT
                and strategy.phi_side is None and not out.keys_match):
            mismatch_accepts += 1
    return TrialStats(trials=trials, freq=freq,
                      key_mismatch_accepts=mismatch_accepts)


# ---------------------------------------------------------------------------
# bound checks


@dataclass(frozen=True)
class BoundCheck:
    name: str
    empirical: float
    bound: float
    ci_low: float
    ci_high: float
    passed: bool
    underpowered: bool


@dataclass(frozen=True)
class ToyBounds:
    """Security bounds at the toy parameters of a trial batch."""

    eps_ea_f: float
    eps_ea_af: float
    eps_ms: float
    eps_rob: float | None = None

    @staticmethod
    def for_tag_bits(tag_bits: int, eps_rob: float | None = None) -> "ToyBounds":
        eps = 2.0 ** -tag_bits
        return ToyBounds(eps_ea_f=eps, eps_ea_af=eps, eps_ms=eps, eps_rob=eps_rob)


def check_bounds(stats: TrialStats, bounds: ToyBounds) -> list[BoundCheck]:
    """Compare each empirical frequency with its bound plus Wilson slack.

    A condition passes when the bound is not excluded below the interval;
    comparisons with expected counts under ~5 are flagged under-powered.
    """
    checks = []

    def add(name, count, bound, direction="upper"):
        lo, hi = stats.wilson(count)
        emp = count / stats.trials
        if direction == "upper":
            passed = lo <= bound
        else:
            passed = hi >= bound
        under = bound * stats.trials < 5 if direction == "upper" else False
        checks.append(BoundCheck(name, emp, bound, lo, hi, passed, under))

    add("full_entity_auth", stats.count_where(
        lambda ev: ev[0] == P.ACCEPT and ev[1] != P.ACCEPT), bounds.eps_ea_f)
    add("almost_full_entity_auth", stats.count_where(
        lambda ev: ev[0] == P.PHI and ev[1] == P.ACCEPT), bounds.eps_ea_af)
    add("match_security", stats.key_mismatch_accepts, bounds.eps_ms)
    if bounds.eps_rob is not None:
        add("robustness", stats.count_where(
            lambda ev: ev == (P.ACCEPT, P.ACCEPT)), 1.0 - bounds.eps_rob,
            direction="lower")
    return checks
