"""Attack harness: determinism, capability boundary, bound comparisons."""

import numpy as np
import pytest

from qake import adversary as A
from qake import protocol as P


TCFG = A.TrialConfig(n=256, tag_bits=8)


class TestHarnessMechanics:
    def test_deterministic_replay(self):
        a = A.run_trials(A.TamperField("test"), TCFG, 60, seed=5)
        b = A.run_trials(A.TamperField("test"), TCFG, 60, seed=5)
        assert a.freq == b.freq and a.key_mismatch_accepts == b.key_mismatch_accepts

    def test_frequencies_sum_to_trials(self):
        st = A.run_trials(A.Passive(), TCFG, 40, seed=1)
        assert sum(st.freq.values()) == st.trials == 40

    def test_strategies_cannot_reach_secrets(self):
        # the hook interface passes messages only; no strategy holds secret state
        for cls in (A.Passive, A.ImpersonateAlice, A.ImpersonateBob):
            strategy = cls()
            hook = strategy.hook(np.random.default_rng(0))
            for value in vars(strategy).values():
                assert not isinstance(value, P.SharedSecrets)
            if hook is not None:
                assert not any(isinstance(c, P.SharedSecrets)
                               for c in (hook.__closure__ or ())
                               for c in [c.cell_contents])

    def test_wilson_interval_brackets(self):
        st = A.TrialStats(trials=1000, freq={}, key_mismatch_accepts=0)
        lo, hi = st.wilson(10)
        assert lo < 0.01 < hi


class TestOutcomeDistributions:
    def test_passive_channel_always_accepts(self):
        st = A.run_trials(A.Passive(), TCFG, 200, seed=3)
        assert st.freq[(P.ACCEPT, P.ACCEPT)] == 200
        assert st.key_mismatch_accepts == 0

    def test_impersonate_alice_forgery_rate(self):
        trials = 6000
        st = A.run_trials(A.ImpersonateAlice(), TCFG, trials, seed=4)
        accepted = st.count_where(lambda ev: ev == (P.PHI, P.ACCEPT))
        p = 2.0**-8
        sigma = (p * (1 - p) * trials) ** 0.5
        assert abs(accepted - trials * p) < 4 * sigma
        # Alice never participates, so no (1, *) outcomes at all
        assert st.count_where(lambda ev: ev[0] == P.ACCEPT) == 0

    def test_impersonate_bob_forgery_rate(self):
        trials = 6000
        st = A.run_trials(A.ImpersonateBob(), TCFG, trials, seed=5)
        accepted = st.count_where(lambda ev: ev[0] == P.ACCEPT)
        p = 2.0**-8
        sigma = (p * (1 - p) * trials) ** 0.5
        assert abs(accepted - trials * p) < 4 * sigma

    def test_desync_labels_mask_mismatch(self):
        trials = 1500
        st = A.run_trials(A.DesyncLabels(1), TCFG, trials, seed=6)
        rejected = st.count_where(lambda ev: ev[1] != P.ACCEPT)
        lo, _ = st.wilson(rejected)
        assert lo >= 1 - 2.0**-8 - 0.02

    def test_replay_tag_rejected(self):
        trials = 800
        st = A.run_trials(A.ReplayTag(), TCFG, trials, seed=7)
        rejected = st.count_where(lambda ev: ev[1] != P.ACCEPT)
        assert rejected >= trials * (1 - 2.0**-8) - 4 * (trials * 2.0**-8) ** 0.5

    @pytest.mark.parametrize("kind", ["detect", "sift", "test", "syndrome",
                                      "tag_av", "tag_bv"])
    def test_tampering_detected(self, kind):
        st = A.run_trials(A.TamperField(kind, 0), TCFG, 300, seed=8)
        if kind == "tag_bv":
            # one-sided: the receiver accepted before the tamper
            rejected = st.count_where(lambda ev: ev[0] != P.ACCEPT)
        else:
            rejected = st.count_where(lambda ev: ev[1] != P.ACCEPT)
        assert rejected >= 290


class TestCheckBounds:
    def test_spec_arithmetic_example(self):
        # forged-tag frequency 0.0041 against bound 0.00391 at 1e5 trials
        # stays inside the Wilson interval
        st = A.TrialStats(trials=100_000,
                          freq={(P.PHI, P.ACCEPT): 410,
                                (P.PHI, P.REJECT): 100_000 - 410},
                          key_mismatch_accepts=0)
        checks = {c.name: c for c in A.check_bounds(st, A.ToyBounds.for_tag_bits(8))}
        c = checks["almost_full_entity_auth"]
        assert c.empirical == pytest.approx(0.0041)
        assert c.passed and not c.underpowered

    def test_gross_violation_fails(self):
        st = A.TrialStats(trials=1000,
                          freq={(P.PHI, P.ACCEPT): 500, (P.PHI, P.REJECT): 500},
                          key_mismatch_accepts=0)
        checks = {c.name: c for c in A.check_bounds(st, A.ToyBounds.for_tag_bits(8))}
        assert not checks["almost_full_entity_auth"].passed

    def test_underpowered_flagged(self):
        st = A.TrialStats(trials=100, freq={(P.REJECT, P.REJECT): 100},
                          key_mismatch_accepts=0)
        checks = {c.name: c for c in A.check_bounds(st, A.ToyBounds.for_tag_bits(8))}
        assert checks["match_security"].underpowered

    def test_passive_against_robustness_bound(self):
        st = A.run_trials(A.Passive(), TCFG, 400, seed=9)
        checks = {c.name: c for c in A.check_bounds(
            st, A.ToyBounds.for_tag_bits(8, eps_rob=0.05))}
        assert checks["robustness"].passed
