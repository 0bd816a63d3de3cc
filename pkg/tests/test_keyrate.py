"""Key-length engine: observables, thresholds, optimization invariants."""

import math
from dataclasses import replace

import pytest

from qake import finite_key as fk
from qake import keyrate as kr
from qake.channel import ChannelConfig
from qake.errors import ConfigError


def model(**kw):
    base = dict(n_pulses=1e10, variant="qake",
                channel=ChannelConfig.from_loss_db(20.0, 0.02), qber=0.02,
                leak_mode="formula")
    base.update(kw)
    return kr.ExperimentModel(**base)


class TestExpectedObservables:
    def test_zero_transmittance_zeroes_everything(self):
        m = model(channel=ChannelConfig(0.0, 0.02))
        ex = kr.expected_observables(m, 0.25)
        assert ex.p_det_total == 0 and ex.p_sift == 0
        assert all(v == 0 for row in ex.p_set_v for v in row)

    def test_prng_doubles_sifted_rate(self):
        mq = model()
        mp = model(variant="prng")
        eq = kr.expected_observables(mq, 0.25)
        ep = kr.expected_observables(mp, 0.25)
        assert ep.p_sift == pytest.approx(2 * eq.p_sift)

    def test_unbalanced_half_matches_standard_key_rate(self):
        ms = model(variant="bb84_standard")
        mu = model(variant="bb84_unbalanced")
        es = kr.expected_observables(ms, 0.5)
        eu = kr.expected_observables(mu, 0.5)
        # (1 - pX)^2 = 1/4 = (1/2 sifting) * (1/2 key share)
        assert eu.p_set[1] == pytest.approx(es.p_set[1])

    def test_detection_rate_inversion_from_p_det(self):
        m = model(channel=None, p_det=1.03e-4)
        ex = kr.expected_observables(m, 0.25)
        assert ex.p_det_total == pytest.approx(1.03e-4, rel=1e-9)

    def test_single_photon_consistency(self):
        m = model()
        ex = kr.expected_observables(m, 0.25)
        # single-photon detections can never exceed total detections per set
        assert ex.p_single_set[0] < ex.p_set[0]
        assert ex.p_single_set[1] < ex.p_set[1]


class TestThresholdSelection:
    def test_thresholds_below_expectations(self):
        m = model()
        budget = kr._make_budget(m, 0.45, 0.45)
        ex = kr.expected_observables(m, 0.25)
        pt = kr.select_thresholds(m, ex, 0.25, budget)
        th = pt.thresholds
        assert th.sift_tol < m.n_pulses * ex.p_sift
        assert th.n1_p2_tol < m.n_pulses * ex.p_single_set[1]
        assert th.e1_tol > m.qber

    def test_robustness_certificate_within_target(self):
        m = model()
        budget = kr._make_budget(m, 0.45, 0.45)
        ex = kr.expected_observables(m, 0.25)
        pt = kr.select_thresholds(m, ex, 0.25, budget)
        assert fk.robustness(pt.cert) <= m.eps_rob_target

    def test_estimator_policy_more_conservative(self):
        ma = model()
        me = model(threshold_policy="estimator")
        ra = kr.evaluate(ma, 0.25)
        re = kr.evaluate(me, 0.25)
        assert 0 < re.key_length < ra.key_length


class TestEvaluateAndOptimize:
    def test_reverification_invariant(self):
        m = model()
        r = kr.evaluate(m, 0.25)
        th = r.thresholds
        rep = fk.security_params_qake(th, kr._make_budget(m, r.serf_frac, r.ds_frac),
                                      sp_form=m.sp_form)
        assert rep.eps_sec_int <= m.eps_sec_target
        assert r.eps_rob <= m.eps_rob_target
        assert r.feasible

    def test_optimizer_determinism(self):
        m = model()
        a = kr.optimize(m)
        b = kr.optimize(m)
        assert a.key_length == b.key_length and a.f_p1 == b.f_p1

    def test_infeasible_returns_zero_with_flag(self):
        m = model(n_pulses=1e3)
        r = kr.optimize(m)
        assert r.key_length == 0 and not r.feasible

    def test_relaxing_target_never_decreases_length(self):
        tight = kr.optimize(model(eps_sec_target=1e-15))
        loose = kr.optimize(model(eps_sec_target=1e-6))
        assert loose.key_length >= tight.key_length

    def test_monotone_in_pulse_count(self):
        small = kr.optimize(model(n_pulses=1e9))
        large = kr.optimize(model(n_pulses=1e10))
        assert large.key_length >= small.key_length

    def test_sweep_monotone_in_loss(self):
        m = model()
        results = kr.sweep(m, [16.0, 22.0, 28.0])
        lengths = [r.key_length for r in results]
        assert lengths == sorted(lengths, reverse=True)
        assert all(r.feasible for r in results)

    def test_variant_validation(self):
        with pytest.raises(ConfigError):
            kr.ExperimentModel(n_pulses=1e9, variant="bogus", p_det=1e-4)
        with pytest.raises(ConfigError):
            kr.ExperimentModel(n_pulses=1e9, variant="qake")  # no channel, no p_det


class TestFractionLeakMode:
    def test_fraction_leak_uses_configured_share(self):
        m = model(leak_mode="fraction", leak_fraction=0.30)
        r = kr.evaluate(m, 0.25)
        ex = kr.expected_observables(m, 0.25)
        expected_p2 = m.n_pulses * ex.p_set[1]
        assert r.thresholds.leak_ec == pytest.approx(0.30 * expected_p2, rel=0.01)
