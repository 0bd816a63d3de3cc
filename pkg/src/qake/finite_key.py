"""Finite-key statistics and security-parameter algebra.

Closed forms implemented here: binary entropy, the modified Serfling
sampling correction, three-intensity decoy-state bounds on single-photon
counts and errors, concentration bounds on expectations (a Hoeffding-style
default and a Kato-style bound whose free parameter is tuned on an
anticipated count), exact and certified binomial tails, the phase-error
tolerance with and without the pseudorandom-basis correction, the entropy
budget H', the full security-parameter assembly for both protocol
variants, robustness budgeting, and the key-length maximizer.

Security parameters follow the structure eps_sec = eps_EA + eps_MS +
eps_KS and eps_sec_int = eps_sec + eps_SP; all epsilon outputs are plain
probabilities, never silently clipped, and a report whose components
exceed 1 is flagged non-binding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special, stats

from .channel import SourceConfig
from .errors import ConfigError

_EXACT_TAIL_LIMIT = 10**8


def binary_entropy(p: float) -> float:
    """h_bin(p) = -p log2 p - (1-p) log2 (1-p), with 0 log 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"binary entropy argument {p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


def serfling_correction(a: float, b: float, c: float) -> float:
    """Sampling-without-replacement correction g(a, b, c).

    g = sqrt((b + a)(a + 1) / (2 a^2 b) * ln(1/c)) transfers an error rate
    observed on a sample of size a to the complementary set of size b with
    failure probability c.
    """
    if a < 1 or b < 1:
        raise ConfigError("serfling correction needs sample sizes >= 1")
    if not 0 < c <= 1:
        raise ConfigError(f"failure probability must be in (0, 1], got {c}")
    return math.sqrt((b + a) * (a + 1) / (2.0 * a * a * b) * math.log(1.0 / c))


def single_photon_prob(src: SourceConfig) -> float:
    """Probability the source emits exactly one photon: sum_j p_j mu_j e^-mu_j."""
    return float(sum(p * mu * math.exp(-mu)
                     for p, mu in zip(src.intensity_probs, src.intensities)))


def zero_photon_prob(src: SourceConfig) -> float:
    return float(sum(p * math.exp(-mu)
                     for p, mu in zip(src.intensity_probs, src.intensities)))


# ---------------------------------------------------------------------------
# decoy-state estimates


@dataclass(frozen=True)
class CountBounds:
    """Oriented expectation bounds for the three intensities of one set.

    The single-photon lower bound consumes a lower bound for the mu1 term
    and upper bounds for the mu0 and mu2 terms, which enter negatively.
    """

    mu0_ub: float
    mu1_lb: float
    mu2_ub: float


def decoy_single_photon_lb(exp_counts: CountBounds, src: SourceConfig) -> float:
    """Three-intensity lower bound on the single-photon count of a set."""
    mu0, mu1, mu2 = src.intensities
    p0, p1w, p2w = src.intensity_probs
    if not (mu0 > mu1 > mu2 >= 0 and mu0 > mu1 + mu2):
        raise ConfigError("intensity ordering violated")
    if mu1 == mu2:
        raise ConfigError("mu1 and mu2 must differ")
    p1 = single_photon_prob(src)
    lead = p1 * mu0 / ((mu1 - mu2) * (mu0 - mu1 - mu2))
    term1 = math.exp(mu1) / p1w * (1.0 - mu2 * (mu1 + mu2) / mu0**2) * exp_counts.mu1_lb
    term0 = (mu1**2 - mu2**2) * math.exp(mu0) / (mu0**2 * p0) * exp_counts.mu0_ub
    if mu2 > 0 or p2w > 0:
        term2 = math.exp(mu2) / p2w * (1.0 - mu1 * (mu1 + mu2) / mu0**2) * exp_counts.mu2_ub
    else:
        term2 = 0.0
    return max(0.0, lead * (term1 - term0 - term2))


def decoy_single_photon_error_ub(err_mu1_ub: float, err_mu2_lb: float,
                                 src: SourceConfig, set_size: float) -> float:
    """Upper bound on the number of single-photon error bits in a set."""
    mu0, mu1, mu2 = src.intensities
    _, p1w, p2w = src.intensity_probs
    if mu1 == mu2:
        raise ConfigError("mu1 and mu2 must differ")
    p1 = single_photon_prob(src)
    val = p1 / (mu1 - mu2) * (math.exp(mu1) / p1w * err_mu1_ub
                              - (math.exp(mu2) / p2w * err_mu2_lb if p2w > 0 else 0.0))
    return float(min(max(val, 0.0), set_size))


def decoy_count_coeffs(src: SourceConfig) -> tuple[float, float, float]:
    """Linear coefficients (c_mu0, c_mu1, c_mu2) of the single-photon count
    bound: N1_LB = c_mu1 N_mu1 - c_mu0 N_mu0 - c_mu2 N_mu2."""
    mu0, mu1, mu2 = src.intensities
    p0, p1w, p2w = src.intensity_probs
    p1 = single_photon_prob(src)
    lead = p1 * mu0 / ((mu1 - mu2) * (mu0 - mu1 - mu2))
    c1 = lead * math.exp(mu1) / p1w * (1.0 - mu2 * (mu1 + mu2) / mu0**2)
    c0 = lead * (mu1**2 - mu2**2) * math.exp(mu0) / (mu0**2 * p0)
    c2 = lead * math.exp(mu2) / p2w * (1.0 - mu1 * (mu1 + mu2) / mu0**2) if p2w > 0 else 0.0
    return c0, c1, c2


def decoy_error_coeffs(src: SourceConfig) -> tuple[float, float]:
    """Coefficients (c_err_mu1, c_err_mu2) of the single-photon error bound:
    E1_UB = c_err_mu1 N_err_mu1 - c_err_mu2 N_err_mu2."""
    mu0, mu1, mu2 = src.intensities
    _, p1w, p2w = src.intensity_probs
    p1 = single_photon_prob(src)
    ce1 = p1 / (mu1 - mu2) * math.exp(mu1) / p1w
    ce2 = p1 / (mu1 - mu2) * math.exp(mu2) / p2w if p2w > 0 else 0.0
    return ce1, ce2


def decoy_zero_photon_lb(mu1_ub: float, mu2_lb: float, src: SourceConfig) -> float:
    """Two-intensity lower bound on vacuum-origin counts of a set."""
    mu0, mu1, mu2 = src.intensities
    _, p1w, p2w = src.intensity_probs
    if mu1 == mu2:
        raise ConfigError("mu1 and mu2 must differ")
    p0 = zero_photon_prob(src)
    t2 = mu1 * math.exp(mu2) / p2w * mu2_lb if p2w > 0 else 0.0
    t1 = mu2 * math.exp(mu1) / p1w * mu1_ub
    return max(0.0, p0 / (mu1 - mu2) * (t2 - t1))


@dataclass
class DecoyObservables:
    """Per-set, per-intensity detection and error counts from announcements.

    Row 0 is the test set, row 1 the key set.  Error counts are only
    observable on the test set; the key-set row stays zero.
    """

    set_sizes: tuple[int, int]
    det_counts: np.ndarray  # shape (2, 3)
    err_counts: np.ndarray  # shape (2, 3)

    def __post_init__(self):
        self.det_counts = np.asarray(self.det_counts, dtype=np.int64)
        self.err_counts = np.asarray(self.err_counts, dtype=np.int64)
        if self.det_counts.shape != (2, 3) or self.err_counts.shape != (2, 3):
            raise ConfigError("decoy observables must be 2 sets x 3 intensities")
        if (self.err_counts > self.det_counts).any() or (self.det_counts < 0).any():
            raise ConfigError("error counts must be nonnegative and at most detections")


def estimate_single_photon_lb(obs: DecoyObservables, set_idx: int, src: SourceConfig,
                              n_trials: float, eps_each: float,
                              method: str = "hoeffding") -> float:
    """Runtime lower bound on the single-photon count of one set."""
    c = obs.det_counts[set_idx]
    bounds = CountBounds(
        mu0_ub=concentration_bounds(c[0], n_trials, eps_each, method)[1],
        mu1_lb=concentration_bounds(c[1], n_trials, eps_each, method)[0],
        mu2_ub=concentration_bounds(c[2], n_trials, eps_each, method)[1],
    )
    return decoy_single_photon_lb(bounds, src)


def estimate_single_photon_error_ub(obs: DecoyObservables, src: SourceConfig,
                                    n_trials: float, eps_each: float,
                                    method: str = "hoeffding") -> float:
    """Runtime upper bound on the single-photon error count of the test set."""
    e = obs.err_counts[0]
    return decoy_single_photon_error_ub(
        err_mu1_ub=concentration_bounds(e[1], n_trials, eps_each, method)[1],
        err_mu2_lb=concentration_bounds(e[2], n_trials, eps_each, method)[0],
        src=src, set_size=obs.set_sizes[0])


def estimate_zero_photon_lb(obs: DecoyObservables, set_idx: int, src: SourceConfig,
                            n_trials: float, eps_each: float,
                            method: str = "hoeffding") -> float:
    c = obs.det_counts[set_idx]
    return decoy_zero_photon_lb(
        mu1_ub=concentration_bounds(c[1], n_trials, eps_each, method)[1],
        mu2_lb=concentration_bounds(c[2], n_trials, eps_each, method)[0],
        src=src)


# ---------------------------------------------------------------------------
# concentration bounds


def _kato_deviation(n: float, lam: float, eps: float, upper: bool,
                    a_fixed: float | None = None) -> float:
    """Kato-style deviation between observed count and expectation sum.

    For a fixed free parameter a and b = sqrt(a^2 + ln(1/eps)/2 *
    (1 + 4a/(3 sqrt(n)))^2), the deviation (b +- a(2 lam/n - 1)) sqrt(n)
    fails with probability at most eps.  The parameter a is tuned on the
    anticipated count, which keeps the choice independent of the data it
    is applied to.
    """
    if eps >= 1.0:
        return 0.0
    ln = math.log(1.0 / eps)
    sq = math.sqrt(n)
    sign = 1.0 if upper else -1.0

    def dev(a: float) -> float:
        den = 1.0 + 4.0 * a / (3.0 * sq)
        if den <= 0:
            return math.inf
        b = math.sqrt(a * a + 0.5 * ln * den * den)
        return (b + sign * a * (2.0 * lam / n - 1.0)) * sq

    if a_fixed is not None:
        return dev(a_fixed)
    res = optimize.minimize_scalar(dev, bounds=(-0.74 * sq, 2.0 * sq), method="bounded")
    return float(min(dev(0.0), res.fun))


def concentration_bounds(observed: float, n: float, eps: float,
                         method: str = "hoeffding",
                         anticipated: float | None = None) -> tuple[float, float]:
    """Two-sided bounds on the expectation of a count, each side failing
    with probability at most eps.

    method "hoeffding" uses the deviation sqrt(n/2 ln(1/eps)); "kato"
    tunes the Kato bound at the anticipated count (default: the observed
    one), which scales with the count rather than the number of trials.
    """
    if not 0 <= observed <= n:
        raise ConfigError(f"observed count {observed} outside [0, {n}]")
    if not 0 < eps <= 1:
        raise ConfigError(f"eps must be in (0, 1], got {eps}")
    if method == "hoeffding":
        dev_lo = dev_hi = math.sqrt(n / 2.0 * math.log(1.0 / eps)) if eps < 1 else 0.0
    elif method == "kato":
        lam = observed if anticipated is None else anticipated
        dev_hi = _kato_deviation(n, lam, eps, upper=True)
        dev_lo = _kato_deviation(n, lam, eps, upper=False)
    else:
        raise ConfigError(f"unknown concentration method {method!r}")
    return max(0.0, observed - dev_lo), min(float(n), observed + dev_hi)


@dataclass(frozen=True)
class TailBound:
    value: float
    exact: bool


def binomial_tail(n: int, p: float, k: int) -> TailBound:
    """Pr[X >= k] for X ~ Bin(n, p).

    Exact log-space summation at desk scale; a certified Chernoff upper
    bound beyond n = 1e8 (flagged exact=False).
    """
    if not 0 <= p <= 1:
        raise ConfigError(f"p outside [0, 1]: {p}")
    if k < 0 or n < 0 or k > n:
        if k <= 0:
            return TailBound(1.0, True)
        if k > n:
            return TailBound(0.0, True)
    if k <= 0:
        return TailBound(1.0, True)
    if p == 0.0:
        return TailBound(0.0, True)
    if p == 1.0:
        return TailBound(1.0, True)
    if n <= _EXACT_TAIL_LIMIT:
        return TailBound(_exact_upper_tail(n, p, k), True)
    x = k / n
    if x <= p:
        return TailBound(1.0, False)
    return TailBound(math.exp(-n * _kl_bernoulli(x, p)), False)


def _kl_bernoulli(x: float, p: float) -> float:
    if x == 0:
        return math.log(1.0 / (1.0 - p))
    if x == 1:
        return math.log(1.0 / p)
    return x * math.log(x / p) + (1 - x) * math.log((1 - x) / (1 - p))


def _logpmf(n: int, p: float, ks: np.ndarray) -> np.ndarray:
    return (special.gammaln(n + 1) - special.gammaln(ks + 1) - special.gammaln(n - ks + 1)
            + ks * math.log(p) + (n - ks) * math.log1p(-p))


def _exact_upper_tail(n: int, p: float, k: int) -> float:
    mean = n * p
    if k <= mean:
        # complement is the shorter sum
        return float(min(1.0, max(0.0, 1.0 - _exact_lower_tail(n, p, k - 1))))
    logs = []
    j = k
    chunk = 4096
    best = -math.inf
    while j <= n:
        ks = np.arange(j, min(j + chunk, n + 1))
        lp = _logpmf(n, p, ks)
        logs.append(lp)
        best = max(best, float(lp.max()))
        if float(lp[-1]) < best - 60.0:
            break
        j += chunk
    return float(math.exp(special.logsumexp(np.concatenate(logs))))


def _exact_lower_tail(n: int, p: float, k: int) -> float:
    """Pr[X <= k], summed upward from k while terms matter."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    mean = n * p
    if k >= mean:
        return float(min(1.0, max(0.0, 1.0 - _exact_upper_tail(n, p, k + 1))))
    logs = []
    j = k
    chunk = 4096
    best = -math.inf
    while j >= 0:
        ks = np.arange(max(0, j - chunk + 1), j + 1)
        lp = _logpmf(n, p, ks)
        logs.append(lp)
        best = max(best, float(lp.max()))
        if float(lp[0]) < best - 60.0:
            break
        j -= chunk
    return float(math.exp(special.logsumexp(np.concatenate(logs))))


def prob_count_below(n: int, p: float, t: float) -> float:
    """Pr[X < t] with a certified bound beyond the exact-scale limit."""
    k = math.ceil(t) - 1
    if k < 0:
        return 0.0
    if n <= _EXACT_TAIL_LIMIT:
        return _exact_lower_tail(n, p, k)
    x = k / n
    if x >= p:
        return 1.0
    return math.exp(-n * _kl_bernoulli(x, p))


def prob_count_above(n: int, p: float, t: float) -> float:
    """Pr[X > t] with a certified bound beyond the exact-scale limit."""
    k = math.floor(t) + 1
    return binomial_tail(n, p, k).value


def bernstein_slack(var: float, max_coeff: float, eps: float) -> float:
    """Deviation t with Pr[|Y - E[Y]| >= t] <= eps per side, for Y a sum of
    independent terms with total variance var and coefficients bounded by
    max_coeff (Bernstein's inequality, solved for t)."""
    if eps >= 1:
        return 0.0
    ln = math.log(1.0 / eps)
    return max_coeff * ln / 3.0 + math.sqrt((max_coeff * ln / 3.0) ** 2 + 2.0 * var * ln)


def lower_quantile(n: float, p: float, eps: float) -> float:
    """Largest t with Pr[Bin(n, p) < t] <= eps (Bernstein)."""
    mean = n * p
    if mean <= 0 or eps >= 1:
        return 0.0
    return max(0.0, math.floor(mean - bernstein_slack(mean * (1 - p), 1.0, eps)))


def upper_quantile(n: float, p: float, eps: float) -> float:
    """Smallest t with Pr[Bin(n, p) > t] <= eps (Bernstein)."""
    mean = n * p
    if eps >= 1:
        return mean
    return math.ceil(mean + bernstein_slack(mean * (1 - p), 1.0, eps))


# ---------------------------------------------------------------------------
# protocol-level parameter containers


@dataclass(frozen=True)
class ProtocolThresholds:
    """Tolerances checked during parameter estimation plus key-length inputs."""

    sift_tol: float
    n1_p2_tol: float
    n1_p1_tol: float
    e1_tol: float
    ebit_tol: float
    f_p1: float
    tag_av_bits: int
    tag_bv_bits: int
    leak_ec: float
    l_kb: int
    l_theta: int = 0
    n0_p2_tol: float = 0.0

    def __post_init__(self):
        if min(self.sift_tol, self.n1_p2_tol, self.n1_p1_tol, self.leak_ec,
               self.l_kb, self.l_theta, self.n0_p2_tol) < 0:
            raise ConfigError("thresholds and lengths must be nonnegative")
        if not (0 <= self.e1_tol <= 0.5 and 0 <= self.ebit_tol <= 0.5):
            raise ConfigError("error-rate tolerances must lie in [0, 0.5]")
        if not 0 < self.f_p1 < 1:
            raise ConfigError("f_p1 must lie strictly between 0 and 1")


@dataclass(frozen=True)
class EpsilonBudget:
    """All epsilon inputs of the security statements.

    eps_ds is the total decoy-analysis failure budget; eps_ds_terms may
    list per-bound sub-terms (their sum replaces eps_ds when present).
    """

    eps_mac1: float
    eps_mac2: float
    eps_ds: float
    eps_serf1: float
    eps_serf2: float = 1.0
    eps2: float = 1e-18
    eps3: float = 1e-18
    eps_irng: float = 1.0
    eps_prng: float = 0.0
    eps_ec: float = 0.0
    eps_ds_terms: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("eps_mac1", "eps_mac2", "eps_ds", "eps_serf1", "eps_serf2",
                     "eps_irng"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.eps2 <= 0 or self.eps3 <= 0:
            raise ConfigError("eps2 and eps3 must be positive")
        if self.eps_prng < 0 or self.eps_ec < 0:
            raise ConfigError("eps_prng and eps_ec must be nonnegative")

    @property
    def eps_ds_total(self) -> float:
        return sum(self.eps_ds_terms) if self.eps_ds_terms else self.eps_ds


@dataclass(frozen=True)
class SecurityReport:
    """Derived security parameters of one protocol configuration."""

    eps_ea: float
    eps_ms: float
    eps_ks: float
    eps_sp: float
    eps_sec: float
    eps_sec_int: float
    h_prime: float
    e_ph_tol: float
    eps_rob: float = math.nan
    binding: bool = True

    def as_dict(self) -> dict[str, float]:
        return {
            "eps_ea": self.eps_ea, "eps_ms": self.eps_ms, "eps_ks": self.eps_ks,
            "eps_sp": self.eps_sp, "eps_sec": self.eps_sec,
            "eps_sec_int": self.eps_sec_int, "h_prime": self.h_prime,
            "e_ph_tol": self.e_ph_tol, "eps_rob": self.eps_rob,
            "binding": float(self.binding),
        }


def phase_error_tol(e1_tol: float, n1_p1: float, n1_p2: float, eps_serf1: float,
                    eps_irng: float | None = None, variant: str = "qake") -> float:
    """Tolerated single-photon phase error rate in the key set.

    qake: e1_tol + g(n1_p1, n1_p2, eps_serf1).  prng adds the basis-seed
    pseudorandomness correction 2 sqrt(2/n1_p2 ln(1/eps_irng)).
    """
    if n1_p1 < 1 or n1_p2 < 1:
        raise ConfigError("single-photon counts must be >= 1 for the correction")
    e = e1_tol + serfling_correction(n1_p1, n1_p2, eps_serf1)
    if variant == "prng":
        if eps_irng is None:
            raise ConfigError("prng variant needs eps_irng")
        if eps_irng < 1.0:
            e += 2.0 * math.sqrt(2.0 / n1_p2 * math.log(1.0 / eps_irng))
    elif variant != "qake":
        raise ConfigError(f"unknown variant {variant!r}")
    return e


def h_prime(th: ProtocolThresholds, e_ph_tol: float) -> float:
    """Extractable-entropy budget before key length is subtracted.

    H' = N_tol [1 - h_bin(e')] - 2 - log2|T_AV||T_BV| - leak_EC; may be
    negative, in which case callers clamp the key length at zero.
    """
    ent = binary_entropy(min(e_ph_tol, 0.5)) if e_ph_tol < 0.5 else 1.0
    return (th.n1_p2_tol * (1.0 - ent) - 2.0
            - (th.tag_av_bits + th.tag_bv_bits) - th.leak_ec)


def _exp2(x: float) -> float:
    # harmless underflow to 0 for astronomically small terms
    if x < -1074:
        return 0.0
    if x > 1023:
        return math.inf
    return 2.0 ** x


def _sp_mac_radicals(th: ProtocolThresholds, budget: EpsilonBudget, ent_term: float,
                     mac1_form: str) -> tuple[float, float]:
    """The two almost-2-universal penalty radicals of the shared-secret
    privacy bound.  ent_term = N_tol [1 - h_bin(e')].

    The main-text exponent log2((2+eps3)/(eps3 |T_BV|)) - H' and the
    appendix exponent log2(2/eps3+1) + leak + 2 + log2|T_AV| - ent_term
    are algebraically identical once H' is expanded; both entry points are
    kept and must agree.
    """
    t_av, t_bv = th.tag_av_bits, th.tag_bv_bits
    excess1 = max(0.0, _exp2(t_av) * budget.eps_mac1 - 1.0)
    excess2 = max(0.0, _exp2(t_bv) * budget.eps_mac2 - 1.0)
    if mac1_form == "appendix":
        exp1 = math.log2(2.0 / budget.eps3 + 1.0) + th.leak_ec + 2.0 + t_av - ent_term
    elif mac1_form == "main_text":
        hp = ent_term - 2.0 - (t_av + t_bv) - th.leak_ec
        exp1 = math.log2((2.0 + budget.eps3) / budget.eps3) - t_bv - hp
    else:
        raise ConfigError(f"unknown mac1_form {mac1_form!r}")
    exp2_ = math.log2(2.0 / budget.eps2 + 1.0) + th.leak_ec + 2.0 + (t_av + t_bv) - ent_term
    rad1 = math.sqrt(excess1 + _exp2(exp1))
    rad2 = math.sqrt(excess2 + _exp2(exp2_))
    return rad1, rad2


def security_params_qake(th: ProtocolThresholds, budget: EpsilonBudget,
                         sp_form: str = "general",
                         mac1_form: str = "appendix") -> SecurityReport:
    """Security parameters of the sifting-based protocol.

    Assembles the tuple (eps_EA, eps_MS, eps_KS, eps_SP) =
    (eps_phi1 + 2^-|T_BV|, eps_MAC2, eps_KS' + eps_P', eps_SP' + eps_P')
    and the final/intermediate sums.  sp_form "two_universal" selects the
    tightened shared-secret bound valid when both tag hashes are exactly
    2-universal.
    """
    f, pt = th.f_p1, th.sift_tol
    hb_f = binary_entropy(f)
    eps_ds = budget.eps_ds_total
    log2_pt1 = math.log2(pt + 1.0) if pt >= 1 else 0.0

    eps_phi1 = budget.eps_mac1 + _exp2(-pt * (1.0 + hb_f) + log2_pt1)
    eps_so = _exp2(-pt) + _exp2(-th.n1_p2_tol) + _exp2(-pt * hb_f + log2_pt1)
    eps_p_prime = 2.0 * (budget.eps_mac1 + budget.eps_mac2 + eps_ds + eps_so)

    e_ph = phase_error_tol(th.e1_tol, th.n1_p1_tol, th.n1_p2_tol, budget.eps_serf1,
                           variant="qake")
    hp = h_prime(th, e_ph)
    ent_term = th.n1_p2_tol * (1.0 - binary_entropy(min(e_ph, 0.5)))

    serf_root = math.sqrt(2.0 * budget.eps_serf1)
    eps_ks_prime = 2.0 * serf_root + 0.5 * _exp2(-0.5 * (hp - th.l_kb))

    if sp_form == "two_universal":
        eps_sp_prime = (4.0 * serf_root
                        + 0.5 * _exp2(-0.5 * hp) * (1.0 + _exp2(-0.5 * th.tag_av_bits)))
    elif sp_form == "general":
        rad1, rad2 = _sp_mac_radicals(th, budget, ent_term, mac1_form)
        eps_sp_prime = (4.0 * serf_root + 2.0 * (budget.eps2 + budget.eps3)
                        + rad1 + rad2)
    else:
        raise ConfigError(f"unknown sp_form {sp_form!r}")

    eps_ea = eps_phi1 + _exp2(-th.tag_bv_bits)
    eps_ms = budget.eps_mac2
    eps_ks = eps_ks_prime + eps_p_prime
    eps_sp = eps_sp_prime + eps_p_prime
    eps_sec = eps_ea + eps_ms + eps_ks
    report = SecurityReport(
        eps_ea=eps_ea, eps_ms=eps_ms, eps_ks=eps_ks, eps_sp=eps_sp,
        eps_sec=eps_sec, eps_sec_int=eps_sec + eps_sp,
        h_prime=hp, e_ph_tol=e_ph,
        binding=max(eps_ea, eps_ms, eps_ks, eps_sp) <= 1.0 and e_ph < 0.5,
    )
    return report


def security_params_prng(th: ProtocolThresholds, budget: EpsilonBudget,
                         n_pulses: float, sp_form: str = "general") -> SecurityReport:
    """Security parameters of the pseudorandom-basis variant.

    Comparison protocols without pseudorandom bases reuse these formulas
    with eps_prng = 0, eps_irng = 1 and l_theta = 0, which removes every
    pseudorandomness correction.
    """
    if th.l_theta and 2 * th.l_theta >= n_pulses:
        raise ConfigError("theorem precondition 2 l_theta < n violated")
    eps_ds = budget.eps_ds_total
    eps_theta = budget.eps_prng + _exp2(-n_pulses + th.l_theta)
    irng_term = 2.0 * budget.eps_irng if budget.eps_irng < 1.0 else 0.0
    eps_sm = math.sqrt(2.0 * (irng_term + budget.eps_prng + budget.eps_serf1))

    e_ph = phase_error_tol(th.e1_tol, th.n1_p1_tol, th.n1_p2_tol, budget.eps_serf1,
                           eps_irng=budget.eps_irng, variant="prng")
    ent_term = th.n1_p2_tol * (1.0 - binary_entropy(min(e_ph, 0.5)))
    tags = th.tag_av_bits + th.tag_bv_bits
    hp = ent_term - 2.0 - tags - th.leak_ec

    eps_ks_prime = 4.0 * eps_sm + _exp2(
        -0.5 * (ent_term - 2.0 - tags - th.leak_ec - th.l_kb - th.l_theta))
    eps_p_prime = 2.0 * (budget.eps_mac1 + eps_theta + budget.eps_mac2 + eps_ds)
    eps_sp_pa = _exp2(-0.5 * (ent_term - th.leak_ec - tags - th.l_kb - th.l_theta))

    if sp_form == "two_universal":
        eps_sp_prime = (10.0 * eps_sm + eps_sp_pa
                        + _exp2(-0.5 * (ent_term - th.leak_ec - 2.0 - tags))
                        * (1.0 + _exp2(-0.5 * th.tag_bv_bits)))
    elif sp_form == "general":
        rad1, rad2 = _sp_mac_radicals(th, budget, ent_term, "appendix")
        eps_sp_prime = (10.0 * eps_sm + 4.0 * (budget.eps2 + budget.eps3)
                        + eps_sp_pa + rad1 + rad2)
    else:
        raise ConfigError(f"unknown sp_form {sp_form!r}")

    eps_ea = _exp2(-th.tag_av_bits) + _exp2(-th.tag_bv_bits)
    eps_ms = budget.eps_mac2
    eps_ks = eps_ks_prime + eps_p_prime
    eps_sp = eps_sp_prime + eps_theta + eps_p_prime
    eps_sec = eps_ea + eps_ms + eps_ks
    return SecurityReport(
        eps_ea=eps_ea, eps_ms=eps_ms, eps_ks=eps_ks, eps_sp=eps_sp,
        eps_sec=eps_sec, eps_sec_int=eps_sec + eps_sp,
        h_prime=hp, e_ph_tol=e_ph,
        binding=max(eps_ea, eps_ms, eps_ks, eps_sp) <= 1.0 and e_ph < 0.5,
    )


# ---------------------------------------------------------------------------
# robustness


@dataclass(frozen=True)
class RobustnessEvent:
    """One honest-run failure mode: a statistic crossing a constructed bound.

    Plain binomial counts carry (n_trials, prob); derived linear statistics
    carry their mean, variance and largest coefficient instead and are
    evaluated through Bernstein's inequality.
    """

    name: str
    bound: float
    direction: str   # "below": fails if statistic < bound; "above": > bound
    n_trials: float = 0.0
    prob: float = 0.0
    mean: float | None = None
    var: float = 0.0
    max_coeff: float = 1.0

    def failure_prob(self) -> float:
        if self.mean is not None:
            t = self.mean - self.bound if self.direction == "below" else self.bound - self.mean
            if t < 0:
                return 1.0
            if t == 0.0:
                return 1.0 if self.var > 0 else 0.0
            denom = 2.0 * (self.var + self.max_coeff * t / 3.0)
            return math.exp(-t * t / denom) if denom > 0 else 0.0
        if self.direction == "below":
            return prob_count_below(int(self.n_trials), self.prob, self.bound)
        return prob_count_above(int(self.n_trials), self.prob, self.bound)

    def unreachable(self) -> bool:
        mean = self.mean if self.mean is not None else self.n_trials * self.prob
        return ((self.direction == "below" and self.bound > mean)
                or (self.direction == "above" and self.bound < mean))


@dataclass(frozen=True)
class RobustnessCert:
    """Everything needed to re-verify the robustness budget independently."""

    events: tuple[RobustnessEvent, ...]
    eps_serf2: float
    eps_ec: float


def robustness(cert: RobustnessCert, flag_unreachable: bool = True) -> float:
    """Total honest-failure probability; returns 1 when a threshold sits
    on the wrong side of its expectation (flagged unreachable)."""
    total = cert.eps_serf2 + cert.eps_ec
    for ev in cert.events:
        if flag_unreachable and ev.unreachable():
            return 1.0
        total += ev.failure_prob()
    return min(1.0, total)


def max_key_length(th: ProtocolThresholds, budget: EpsilonBudget,
                   eps_sec_target: float, variant: str = "qake",
                   n_pulses: float | None = None, sp_form: str = "general",
                   cap: int | None = None) -> int:
    """Largest key length with eps_sec_int at most the target.

    Monotone bisection over l_kb; returns 0 when even a zero-length key
    misses the target.
    """
    if not 0 < eps_sec_target < 1:
        raise ConfigError("target must be in (0, 1)")

    def report(l: int) -> SecurityReport:
        t = replace(th, l_kb=l)
        if variant == "qake":
            return security_params_qake(t, budget, sp_form=sp_form)
        return security_params_prng(t, budget, n_pulses or 0.0, sp_form=sp_form)

    hp = report(0).h_prime
    hi_limit = int(max(0, hp)) + 1
    if cap is not None:
        hi_limit = min(hi_limit, cap)
    if hi_limit <= 0 or report(0).eps_sec_int > eps_sec_target:
        return 0
    lo, hi = 0, hi_limit
    if report(hi).eps_sec_int <= eps_sec_target:
        return hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if report(mid).eps_sec_int <= eps_sec_target:
            lo = mid
        else:
            hi = mid
    return lo
