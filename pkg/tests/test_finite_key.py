"""Security-parameter algebra: entropy, bounds, decoy estimates, assembly."""

import math
from dataclasses import replace

import numpy as np
import pytest

from qake import finite_key as fk
from qake.channel import SourceConfig
from qake.errors import ConfigError


@pytest.fixture(scope="module")
def src():
    return SourceConfig()


def make_thresholds(**kw):
    base = dict(sift_tol=1e5, n1_p2_tol=1e5, n1_p1_tol=1e5, e1_tol=0.02,
                ebit_tol=0.05, f_p1=0.25, tag_av_bits=80, tag_bv_bits=80,
                leak_ec=0.0, l_kb=0)
    base.update(kw)
    return fk.ProtocolThresholds(**base)


def make_budget(**kw):
    base = dict(eps_mac1=2.0**-80, eps_mac2=2.0**-80, eps_ds=1e-17,
                eps_serf1=3e-33)
    base.update(kw)
    return fk.EpsilonBudget(**base)


class TestBinaryEntropy:
    def test_endpoints_and_half(self):
        assert fk.binary_entropy(0.0) == 0.0
        assert fk.binary_entropy(1.0) == 0.0
        assert fk.binary_entropy(0.5) == 1.0

    def test_reference_value(self):
        assert fk.binary_entropy(0.02) == pytest.approx(0.141441, abs=1e-6)

    def test_domain(self):
        with pytest.raises(ConfigError):
            fk.binary_entropy(-0.01)


class TestSerflingCorrection:
    def test_reference_value(self):
        assert fk.serfling_correction(100, 100, 1e-9) == pytest.approx(0.457499, abs=1e-5)

    def test_vanishes_as_c_to_one(self):
        assert fk.serfling_correction(100, 100, 1.0) == 0.0

    def test_decreasing_in_sample_size(self):
        assert (fk.serfling_correction(200, 100, 1e-9)
                < fk.serfling_correction(100, 100, 1e-9))

    def test_decreasing_in_target_size_and_increasing_as_c_shrinks(self):
        assert (fk.serfling_correction(100, 200, 1e-9)
                < fk.serfling_correction(100, 100, 1e-9))
        assert (fk.serfling_correction(100, 100, 1e-12)
                > fk.serfling_correction(100, 100, 1e-9))


class TestPhotonNumberStatistics:
    def test_single_photon_prob_paper_source(self, src):
        assert fk.single_photon_prob(src) == pytest.approx(0.165186, abs=1e-5)

    def test_single_intensity_poisson(self):
        one = SourceConfig(intensities=(1.0, 0.5, 0.0),
                           intensity_probs=(1.0, 0.0, 0.0))
        assert fk.single_photon_prob(one) == pytest.approx(math.exp(-1), abs=1e-9)

    def test_vacuum_only(self):
        vac = SourceConfig(intensities=(0.45, 0.225, 0.0),
                           intensity_probs=(0.0, 0.0, 1.0))
        assert fk.single_photon_prob(vac) == 0.0


def poisson_session_counts(rng, src, eta, q, n):
    """Photon-number-resolved per-intensity counts for one simulated set.

    Returns (detections[3], errors[3], true single-photon count, true
    single-photon errors).  The detection law Poisson(mu) thinned by eta
    reproduces 1 - exp(-eta mu) exactly.
    """
    det = np.zeros(3, dtype=np.int64)
    err = np.zeros(3, dtype=np.int64)
    true_s1 = 0
    true_e1 = 0
    counts = rng.multinomial(n, src.intensity_probs)
    for v, (n_v, mu) in enumerate(zip(counts, src.intensities)):
        if n_v == 0 or mu == 0:
            continue
        ks = np.arange(1, 26)
        from scipy.special import gammaln
        pk = np.exp(-mu + ks * math.log(mu) - gammaln(ks + 1.0))
        n_k = rng.multinomial(n_v, np.append(pk, max(0, 1 - pk.sum())))[:-1]
        for k, cnt in zip(ks, n_k):
            if cnt == 0:
                continue
            d = rng.binomial(cnt, 1 - (1 - eta) ** int(k))
            det[v] += d
            e = rng.binomial(d, q)
            err[v] += e
            if k == 1:
                true_s1 += d
                true_e1 += e
    return det, err, true_s1, true_e1


class TestDecoyBounds:
    def test_zero_expectations_give_zero(self, src):
        assert fk.decoy_single_photon_lb(fk.CountBounds(0, 0, 0), src) == 0.0
        assert fk.decoy_single_photon_error_ub(0, 0, src, 100) == 0.0

    def test_intensity_ordering_guard(self):
        with pytest.raises(ConfigError):
            bad = SourceConfig(intensities=(0.45, 0.2, 0.2),
                               intensity_probs=(0.2, 0.6, 0.2))

    def test_pathological_clamp(self, src):
        # dominating negative terms clamp the bound at zero
        assert fk.decoy_single_photon_lb(fk.CountBounds(1e6, 10.0, 1e6), src) == 0.0
        assert fk.decoy_single_photon_error_ub(1.0, 1e9, src, 50) == 0.0

    def test_error_bound_clamped_to_set_size(self, src):
        assert fk.decoy_single_photon_error_ub(1e9, 0, src, 123) == 123

    def test_bounds_bracket_truth_at_exact_expectations(self, src):
        # oracle: photon-number-resolved simulation of the Poisson source
        rng = np.random.default_rng(5)
        eta, q, n = 0.1, 0.02, 10**6
        det, err, s1, e1 = poisson_session_counts(rng, src, eta, q, n)
        exact = fk.CountBounds(mu0_ub=n * src.intensity_probs[0] * (1 - math.exp(-eta * 0.45)),
                               mu1_lb=n * src.intensity_probs[1] * (1 - math.exp(-eta * 0.225)),
                               mu2_ub=0.0)
        lb = fk.decoy_single_photon_lb(exact, src)
        assert lb <= s1 * 1.02  # statistical slack of the oracle itself
        err_ub = fk.decoy_single_photon_error_ub(
            err_mu1_ub=q * exact.mu1_lb, err_mu2_lb=0.0, src=src, set_size=n)
        assert err_ub >= e1 * 0.98

    def test_coeff_decomposition_matches_bound(self, src):
        c0, c1, c2 = fk.decoy_count_coeffs(src)
        vals = fk.CountBounds(mu0_ub=1000.0, mu1_lb=5000.0, mu2_ub=3.0)
        direct = fk.decoy_single_photon_lb(vals, src)
        linear = c1 * 5000.0 - c0 * 1000.0 - c2 * 3.0
        assert direct == pytest.approx(max(0.0, linear))


class TestConcentrationBounds:
    def test_eps_one_collapses(self):
        lo, hi = fk.concentration_bounds(500, 1000, 1.0)
        assert lo == hi == 500

    def test_hoeffding_reference_deviation(self):
        lo, hi = fk.concentration_bounds(5e5, 1e6, 1e-10)
        assert hi - 5e5 == pytest.approx(3393.07, abs=0.01)
        assert 5e5 - lo == pytest.approx(3393.07, abs=0.01)

    def test_kato_scales_with_count_not_trials(self):
        _, hi1 = fk.concentration_bounds(1e5, 1e10, 1e-10, method="kato")
        _, hi2 = fk.concentration_bounds(1e5, 1e12, 1e-10, method="kato")
        dev1, dev2 = hi1 - 1e5, hi2 - 1e5
        hoeff = (1e10 / 2 * math.log(1e10)) ** 0.5
        assert dev1 < 0.03 * 1e5          # scales with the count
        assert dev1 < hoeff / 50          # far below the sqrt(trials) scale
        assert dev2 < 1.5 * dev1          # trial count barely matters

    @pytest.mark.parametrize("method", ["hoeffding", "kato"])
    def test_soundness_monte_carlo(self, method):
        # true mean escapes the two-sided interval with frequency <= 2 eps
        rng = np.random.default_rng(17)
        n, p, eps, trials = 4000, 0.2, 0.01, 10_000
        obs = rng.binomial(n, p, size=trials)
        misses = 0
        for o in obs:
            lo, hi = fk.concentration_bounds(int(o), n, eps, method=method,
                                             anticipated=n * p)
            if not lo <= n * p <= hi:
                misses += 1
        assert misses / trials <= 2 * eps

    def test_domain_errors(self):
        with pytest.raises(ConfigError):
            fk.concentration_bounds(-1, 10, 0.1)
        with pytest.raises(ConfigError):
            fk.concentration_bounds(5, 10, 0.1, method="bogus")


class TestBinomialTail:
    def test_trivials(self):
        assert fk.binomial_tail(10, 0.3, 0).value == 1.0
        assert fk.binomial_tail(10, 0.5, 10).value == pytest.approx(2.0**-10)

    def test_matches_brute_force(self):
        brute = sum(math.comb(100, k) * 0.1**k * 0.9 ** (100 - k)
                    for k in range(20, 101))
        tail = fk.binomial_tail(100, 0.1, 20)
        assert tail.exact
        assert tail.value == pytest.approx(brute, rel=1e-12)

    def test_deep_tail_log_space(self):
        t = fk.binomial_tail(10**6, 1e-4, 600)
        assert t.exact and 0 < t.value < 1e-100

    def test_certified_mode_flagged_beyond_limit(self):
        t = fk.binomial_tail(10**9, 1e-4, 2 * 10**5)
        assert not t.exact
        exact_style = math.exp(-10**9 * fk._kl_bernoulli(2e-4, 1e-4))
        assert t.value == pytest.approx(exact_style)

    def test_quantiles_bracket_mean(self):
        lo = fk.lower_quantile(1e10, 1e-4, 1e-11)
        hi = fk.upper_quantile(1e10, 1e-4, 1e-11)
        assert lo < 1e6 < hi
        assert fk.prob_count_below(10**10, 1e-4, lo) <= 1e-11
        assert fk.prob_count_above(10**10, 1e-4, hi) <= 1e-11


class TestPhaseErrorTol:
    def test_serf_one_reduces_to_e1(self):
        assert fk.phase_error_tol(0.02, 100, 100, 1.0) == pytest.approx(0.02)

    def test_reference_composition(self):
        g = fk.serfling_correction(1e5, 1e5, 1e-20)
        assert fk.phase_error_tol(0.02, 1e5, 1e5, 1e-20) == pytest.approx(0.02 + g)

    def test_prng_correction_value(self):
        base = fk.phase_error_tol(0.02, 1e5, 1e5, 1e-20)
        with_corr = fk.phase_error_tol(0.02, 1e5, 1e5, 1e-20,
                                       eps_irng=1e-10, variant="prng")
        assert with_corr - base == pytest.approx(0.042919, abs=1e-5)


class TestHPrime:
    def test_entropy_term_vanishes_at_half(self):
        th = make_thresholds(leak_ec=50.0)
        assert fk.h_prime(th, 0.5) == pytest.approx(-2 - 160 - 50)

    def test_reference_value(self):
        th = make_thresholds()
        assert fk.h_prime(th, 0.05) == pytest.approx(71198.3, abs=0.2)

    def test_monotone_decreasing_in_leak(self):
        th = make_thresholds()
        assert fk.h_prime(replace(th, leak_ec=100.0), 0.05) \
            < fk.h_prime(th, 0.05)


class TestSecurityParamsQake:
    def test_eps_phi1_reference(self):
        # sift_tol 64, f = 0.5: exponent -128 + log2(65) ~ -121.98
        th = make_thresholds(sift_tol=64, f_p1=0.5)
        budget = make_budget()
        rep = fk.security_params_qake(th, budget)
        eps_phi1 = rep.eps_ea - 2.0**-80
        assert eps_phi1 == pytest.approx(2.0**-80 + 2.0**-121.977, rel=1e-3)

    def test_ks_prime_formula(self):
        # eps_KS' = 2 sqrt(2 eps_serf1) + 0.5 * 2^(-(H' - l)/2); the root term
        # alone evaluates to 2.828e-10 at eps_serf1 = 1e-20
        th = make_thresholds(l_kb=200)
        budget = make_budget(eps_serf1=1e-20)
        rep = fk.security_params_qake(th, budget)
        eps_p_prime = 2 * (budget.eps_mac1 + budget.eps_mac2 + budget.eps_ds)
        ks_prime = rep.eps_ks - eps_p_prime  # eps_SO is negligible here
        expect = 2 * math.sqrt(2e-20) + 0.5 * 2.0 ** (-0.5 * (rep.h_prime - 200))
        assert 2 * math.sqrt(2e-20) == pytest.approx(2.828e-10, rel=1e-3)
        assert ks_prime == pytest.approx(expect, rel=1e-6)

    def test_additivity_identity(self):
        rep = fk.security_params_qake(make_thresholds(), make_budget())
        assert rep.eps_sec_int == rep.eps_sec + rep.eps_sp

    def test_mac1_forms_agree(self):
        th = make_thresholds(leak_ec=500, l_kb=100)
        budget = make_budget(eps_mac1=2.0**-78, eps_mac2=2.0**-79,
                             eps2=1e-17, eps3=3e-18)
        a = fk.security_params_qake(th, budget, sp_form="general",
                                    mac1_form="appendix")
        b = fk.security_params_qake(th, budget, sp_form="general",
                                    mac1_form="main_text")
        assert a.eps_sp == pytest.approx(b.eps_sp, rel=1e-12)

    def test_loose_limit_leaves_serf_roots(self):
        th = make_thresholds(n1_p2_tol=1e7, n1_p1_tol=1e7, l_kb=0)
        budget = make_budget(eps_ds=1e-300, eps_serf1=1e-12)
        rep = fk.security_params_qake(th, budget, sp_form="two_universal")
        expect = 6 * math.sqrt(2e-12)
        irreducible = rep.eps_ks + rep.eps_sp - 4 * (budget.eps_mac1 + budget.eps_mac2)
        assert irreducible == pytest.approx(expect, rel=1e-3)

    def test_monotonicity_suite(self):
        # tag size monotonicity holds with the MAC budget tied to the tags
        th = make_thresholds(l_kb=100)
        base = fk.security_params_qake(th, make_budget(), sp_form="two_universal")
        more_tag = fk.security_params_qake(
            replace(th, tag_av_bits=96, tag_bv_bits=96),
            make_budget(eps_mac1=2.0**-96, eps_mac2=2.0**-96),
            sp_form="two_universal")
        assert more_tag.eps_sec_int <= base.eps_sec_int
        longer = fk.security_params_qake(replace(th, l_kb=5000), make_budget())
        assert longer.eps_sec_int >= base.eps_sec_int

    def test_nonbinding_flagged_never_clipped(self):
        th = make_thresholds(sift_tol=4, n1_p2_tol=2, n1_p1_tol=2, f_p1=0.5,
                             tag_av_bits=2, tag_bv_bits=2, l_kb=0)
        budget = make_budget(eps_mac1=0.25, eps_mac2=0.25, eps_serf1=0.5,
                             eps_ds=0.9)
        rep = fk.security_params_qake(th, budget)
        assert not rep.binding
        assert rep.eps_sec_int > 1.0


class TestSecurityParamsPrng:
    def test_precondition(self):
        th = make_thresholds(l_theta=256)
        with pytest.raises(ConfigError):
            fk.security_params_prng(th, make_budget(), n_pulses=512)

    def test_theta_guess_negligible_at_scale(self):
        th = make_thresholds(l_theta=256)
        budget = make_budget(eps_prng=2.0**-128, eps_irng=1e-10)
        rep = fk.security_params_prng(th, budget, n_pulses=1e10)
        # the 2^(-n + l) term underflows; eps_theta = eps_prng
        assert rep.eps_sp > 0

    def test_sm_algebra(self):
        eps = 1e-20
        th = make_thresholds(l_theta=0)
        budget = make_budget(eps_serf1=eps, eps_irng=eps, eps_prng=eps)
        rep = fk.security_params_prng(th, budget, n_pulses=1e10)
        # eps_sm = sqrt(8 eps) with equal components; KS' leads with 4 eps_sm
        eps_p = 2 * (budget.eps_mac1 + eps + budget.eps_mac2 + budget.eps_ds)
        lead = rep.eps_ks - eps_p
        assert lead == pytest.approx(4 * math.sqrt(8 * eps), rel=1e-2)

    def test_degenerates_to_plain_exponent(self):
        # l_theta = 0, eps_irng -> 1, eps_prng -> 0 reproduce the plain
        # phase-error tolerance and the H'-form exponent bit-for-bit
        th = make_thresholds(l_theta=0, l_kb=777, leak_ec=321)
        budget = make_budget(eps_irng=1.0, eps_prng=0.0)
        plain = fk.security_params_qake(th, budget)
        prng = fk.security_params_prng(th, budget, n_pulses=1e9)
        assert prng.e_ph_tol == plain.e_ph_tol
        assert prng.h_prime == plain.h_prime
        assert prng.eps_sec_int == prng.eps_sec + prng.eps_sp

    def test_ea_floor(self):
        th = make_thresholds(l_theta=0, tag_av_bits=64, tag_bv_bits=80)
        rep = fk.security_params_prng(th, make_budget(), n_pulses=1e9)
        assert rep.eps_ea == pytest.approx(2.0**-64 + 2.0**-80)


class TestRobustness:
    def test_zero_thresholds_vanish(self):
        cert = fk.RobustnessCert(events=(
            fk.RobustnessEvent("a", bound=0, direction="below",
                               n_trials=1000, prob=0.5),
        ), eps_serf2=0.0, eps_ec=0.0)
        assert fk.robustness(cert) == pytest.approx(0.0, abs=1e-12)

    def test_unreachable_threshold_flags_one(self):
        cert = fk.RobustnessCert(events=(
            fk.RobustnessEvent("a", bound=900, direction="below",
                               n_trials=1000, prob=0.5),
        ), eps_serf2=0.0, eps_ec=0.0)
        assert fk.robustness(cert) == 1.0

    def test_components_sum(self):
        ev = fk.RobustnessEvent("a", bound=400, direction="below",
                                n_trials=1000, prob=0.5)
        cert = fk.RobustnessCert(events=(ev,), eps_serf2=1e-4, eps_ec=2e-4)
        assert fk.robustness(cert) == pytest.approx(
            3e-4 + ev.failure_prob(), rel=1e-9)


class TestMaxKeyLength:
    def test_negative_entropy_gives_zero(self):
        th = make_thresholds(n1_p2_tol=10, n1_p1_tol=10, leak_ec=1e4)
        assert fk.max_key_length(th, make_budget(), 1e-15) == 0

    def test_loose_target_approaches_h_prime(self):
        th = make_thresholds()
        budget = make_budget()
        l = fk.max_key_length(th, budget, 0.99)
        rep = fk.security_params_qake(replace(th, l_kb=0), budget)
        assert l >= rep.h_prime - 5

    def test_monotone_in_target(self):
        th = make_thresholds()
        budget = make_budget()
        tight = fk.max_key_length(th, budget, 1e-15)
        loose = fk.max_key_length(th, budget, 1e-6)
        assert loose >= tight > 0

    def test_doubling_counts_more_than_doubles_length(self):
        budget = make_budget()
        th = make_thresholds(leak_ec=20000)
        l1 = fk.max_key_length(th, budget, 1e-15)
        l2 = fk.max_key_length(replace(th, n1_p2_tol=2e5), budget, 1e-15)
        assert l2 > 2 * l1

    def test_result_verifies_at_target(self):
        th = make_thresholds()
        budget = make_budget()
        l = fk.max_key_length(th, budget, 1e-15)
        at = fk.security_params_qake(replace(th, l_kb=l), budget)
        over = fk.security_params_qake(replace(th, l_kb=l + 1), budget)
        assert at.eps_sec_int <= 1e-15 < over.eps_sec_int


class TestDecoyEstimators:
    def test_estimators_track_counts(self, src):
        obs = fk.DecoyObservables(set_sizes=(1000, 3000),
                                  det_counts=[[200, 600, 0], [600, 1800, 0]],
                                  err_counts=[[4, 12, 0], [0, 0, 0]])
        lb = fk.estimate_single_photon_lb(obs, 1, src, 1e6, 0.01)
        assert lb >= 0
        ub = fk.estimate_single_photon_error_ub(obs, src, 1e6, 0.01)
        assert 0 <= ub <= 1000

    def test_invariants(self):
        with pytest.raises(ConfigError):
            fk.DecoyObservables(set_sizes=(1, 1),
                                det_counts=[[1, 1, 1], [1, 1, 1]],
                                err_counts=[[2, 0, 0], [0, 0, 0]])
