"""Expected observables, threshold selection and key-length optimization.

Given an experiment model (source, channel or direct detection rate,
pulse count, protocol variant), this module derives the per-set binomial
observables an honest run would produce, selects parameter-estimation
thresholds by backing off each observable by the concentration slack its
share of the robustness budget buys, splits the secrecy budget among the
epsilon knobs, and maximizes the key length by bisection.  Every returned
operating point is re-verified through the security and robustness
evaluators before it is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from scipy import optimize as sopt

from . import finite_key as fk
from .channel import ChannelConfig, SourceConfig, detection_rate
from .errors import ConfigError

VARIANTS = ("qake", "prng", "bb84_standard", "bb84_unbalanced")


@dataclass(frozen=True)
class ExperimentModel:
    """Channel/source/detector parameters plus the protocol variant."""

    n_pulses: float
    variant: str = "qake"
    src: SourceConfig = SourceConfig()
    channel: ChannelConfig | None = None
    p_det: float | None = None          # direct detection-rate override
    qber: float = 0.02
    leak_mode: str = "formula"          # "fraction" or "formula"
    leak_fraction: float = 0.30
    f_ec: float = 1.2
    tag_av_bits: int = 80
    tag_bv_bits: int = 80
    eps_sec_target: float = 1e-15
    eps_rob_target: float = 1e-10
    eps_ec: float = 0.0
    l_theta: int = 256
    eps_prng: float = 2.0 ** -128
    concentration: str = "kato"
    sp_form: str = "two_universal"
    threshold_policy: str = "analytic"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.threshold_policy not in ("analytic", "estimator"):
            raise ConfigError(f"unknown threshold policy {self.threshold_policy!r}")
        if self.n_pulses < 1:
            raise ConfigError("n_pulses must be positive")
        if self.channel is None and self.p_det is None:
            raise ConfigError("either channel or p_det must be given")
        if self.leak_mode not in ("fraction", "formula"):
            raise ConfigError(f"unknown leak mode {self.leak_mode!r}")
        if not 0 <= self.qber <= 0.5:
            raise ConfigError("qber outside [0, 0.5]")

    @property
    def eta(self) -> float:
        """Transmittance; recovered from p_det when given directly."""
        if self.p_det is None:
            return self.channel.transmittance
        target = self.p_det

        def gap(eta):
            return detection_rate(self.src, ChannelConfig(eta, 0.0)) - target

        if target <= 0:
            return 0.0
        hi = 1.0
        if gap(hi) < 0:
            raise ConfigError(f"p_det {target} unreachable even at unit transmittance")
        return float(sopt.brentq(gap, 0.0, hi, xtol=1e-16, rtol=1e-14))

    @property
    def uses_prng_formulas(self) -> bool:
        return self.variant in ("prng", "bb84_standard", "bb84_unbalanced")


@dataclass(frozen=True)
class ModelExpectations:
    """Per-pulse probabilities of every counted observable."""

    eta: float
    p_det_total: float
    p_sift: float                # probability a pulse enters the sifted/kept set
    p_set: tuple[float, float]   # (test set P1, key set P2)
    p_det_v: tuple[float, float, float]
    p_set_v: tuple[tuple[float, float, float], tuple[float, float, float]]
    p_err_set_v: tuple[tuple[float, float, float], tuple[float, float, float]]
    p_single_set: tuple[float, float]
    p_single_err_set: tuple[float, float]
    exact_split: bool            # P1 carved from the sifted set by exact count


def expected_observables(model: ExperimentModel, f_p1: float) -> ModelExpectations:
    """Honest-run observable probabilities for the given test fraction.

    The sifting-based variants keep half the detections and split them by
    an exact count; the pseudorandom-basis variant keeps all detections;
    the unbalanced comparison assigns whole bases to test and key duty, so
    f_p1 is read as the X-basis probability.
    """
    if not 0 < f_p1 < 1:
        raise ConfigError("test fraction must be in (0, 1)")
    src, eta, q = model.src, model.eta, model.qber
    d_v = tuple(p * (1.0 - math.exp(-eta * mu))
                for p, mu in zip(src.intensity_probs, src.intensities))
    p_det = sum(d_v)
    p1_emit_v = tuple(p * mu * math.exp(-mu)
                      for p, mu in zip(src.intensity_probs, src.intensities))
    s1 = eta * sum(p1_emit_v)

    if model.variant == "bb84_unbalanced":
        w1, w2 = f_p1 ** 2, (1.0 - f_p1) ** 2
        p_sift = (w1 + w2) * p_det
        exact = False
    else:
        sift_factor = 1.0 if model.variant == "prng" else 0.5
        p_sift = sift_factor * p_det
        w1, w2 = f_p1 * sift_factor, (1.0 - f_p1) * sift_factor
        exact = True

    set_v = (tuple(w1 * d for d in d_v), tuple(w2 * d for d in d_v))
    err_v = (tuple(q * x for x in set_v[0]), tuple(q * x for x in set_v[1]))
    return ModelExpectations(
        eta=eta,
        p_det_total=p_det,
        p_sift=p_sift,
        p_set=(w1 * p_det, w2 * p_det),
        p_det_v=d_v,
        p_set_v=set_v,
        p_err_set_v=err_v,
        p_single_set=(w1 * s1, w2 * s1),
        p_single_err_set=(q * w1 * s1, q * w2 * s1),
        exact_split=exact,
    )


@dataclass(frozen=True)
class OperatingPoint:
    """Thresholds plus the robustness certificate they were built from."""

    thresholds: fk.ProtocolThresholds
    cert: fk.RobustnessCert
    p2_lb: int
    p2_ub: int
    ebit_prime_tol: float


def select_thresholds(model: ExperimentModel, expect: ModelExpectations,
                      f_p1: float, budget: fk.EpsilonBudget,
                      l_kb: int = 0) -> OperatingPoint:
    """Back every tolerance off its expectation by the concentration slack
    that spends its share of the robustness budget.

    In the default analytic policy each derived statistic (decoy lower
    bound, error-rate estimate) is positioned at its exact-expectation
    value minus a single Bernstein slack over the linear combination of
    observables that produces it; the gap between the runtime estimator
    and the true expectations is the decoy-analysis failure budget eps_ds
    carried on the security side.  The strict estimator policy instead
    feeds worst-case honest observations through the runtime concentration
    machinery, which is what a live run would check.
    """
    if model.threshold_policy == "analytic":
        return _analytic_thresholds(model, expect, f_p1, budget, l_kb)
    return _estimator_thresholds(model, expect, f_p1, budget, l_kb)


def _split_sizes(expect, f_p1, sift_tol, sift_ub, low, high):
    if expect.exact_split:
        p1_lb = math.ceil(f_p1 * sift_tol)
        p2_lb = int(sift_tol - math.ceil(f_p1 * sift_tol))
        p2_ub = int(sift_ub - math.ceil(f_p1 * sift_ub)) + 1
    else:
        p1_lb = int(low("p1_low", expect.p_set[0]))
        p2_lb = int(low("p2_low", expect.p_set[1]))
        p2_ub = int(high("p2_high", expect.p_set[1]))
    return p1_lb, p2_lb, p2_ub


def _leak_and_thresholds(model, f_p1, sift_tol, n1_p1_tol, n1_p2_tol, e1_tol,
                         ebit_tol, n0_p2_tol, p1_lb, p2_lb, p2_ub, eps_serf2,
                         l_kb, events, p2_size):
    ebit_prime = min(0.5, ebit_tol + fk.serfling_correction(
        max(p1_lb, 1), max(p2_lb, 1), eps_serf2))
    if model.leak_mode == "fraction":
        leak = model.leak_fraction * p2_size
    else:
        leak = model.f_ec * fk.binary_entropy(ebit_prime) * p2_size
    th = fk.ProtocolThresholds(
        sift_tol=sift_tol, n1_p2_tol=n1_p2_tol, n1_p1_tol=n1_p1_tol,
        e1_tol=e1_tol, ebit_tol=ebit_tol, f_p1=f_p1,
        tag_av_bits=model.tag_av_bits, tag_bv_bits=model.tag_bv_bits,
        leak_ec=leak, l_kb=l_kb,
        l_theta=model.l_theta if model.variant == "prng" else 0,
        n0_p2_tol=n0_p2_tol,
    )
    cert = fk.RobustnessCert(events=tuple(events), eps_serf2=eps_serf2,
                             eps_ec=model.eps_ec)
    return th, cert, ebit_prime


def _analytic_thresholds(model: ExperimentModel, expect: ModelExpectations,
                         f_p1: float, budget: fk.EpsilonBudget,
                         l_kb: int) -> OperatingPoint:
    n, src = model.n_pulses, model.src
    rob = max(model.eps_rob_target - model.eps_ec, 1e-300)
    unit = rob / 5.0        # the three key-length-bearing statistics + serfling
    side = rob / 50.0       # checks that only gate acceptance
    eps_serf2 = unit
    events: list[fk.RobustnessEvent] = []

    def low(name, p, eps=None):
        t = fk.lower_quantile(n, p, eps or side)
        events.append(fk.RobustnessEvent(name, bound=t, direction="below",
                                         n_trials=n, prob=p))
        return t

    def high(name, p, eps=None):
        t = fk.upper_quantile(n, p, eps or side)
        events.append(fk.RobustnessEvent(name, bound=t, direction="above",
                                         n_trials=n, prob=p))
        return t

    sift_tol = low("sift_low", expect.p_sift)
    sift_ub = high("sift_high", expect.p_sift)
    p1_lb, p2_lb, p2_ub = _split_sizes(expect, f_p1, sift_tol, sift_ub, low, high)

    c0, c1, c2 = fk.decoy_count_coeffs(src)
    n1_tol = []
    for si, sname in enumerate(("p1", "p2")):
        pv = expect.p_set_v[si]
        mean = (c1 * n * pv[1] - c0 * n * pv[0] - c2 * n * pv[2])
        var = (c1**2 * n * pv[1] * (1 - pv[1]) + c0**2 * n * pv[0] * (1 - pv[0])
               + c2**2 * n * pv[2] * (1 - pv[2]))
        slack = fk.bernstein_slack(var, max(c0, c1, c2), unit)
        tol = max(1, math.floor(mean - slack))
        events.append(fk.RobustnessEvent(f"{sname}_n1_low", bound=tol,
                                         direction="below", mean=mean, var=var,
                                         max_coeff=max(c0, c1, c2)))
        n1_tol.append(tol)
    n1_p1_tol, n1_p2_tol = n1_tol

    # single-photon error check, treated as the linear statistic
    # E1_UB - e1_tol * N1_LB evaluated on the test-set observables
    ce1, ce2 = fk.decoy_error_coeffs(src)
    pe = expect.p_err_set_v[0]
    pv1 = expect.p_set_v[0]
    err_mean = ce1 * n * pe[1] - ce2 * n * pe[2]
    err_var = ce1**2 * n * pe[1] + ce2**2 * n * pe[2]
    n1_mean = c1 * n * pv1[1] - c0 * n * pv1[0] - c2 * n * pv1[2]
    n1_var = c1**2 * n * pv1[1] + c0**2 * n * pv1[0] + c2**2 * n * pv1[2]
    e1_tol = err_mean / max(n1_mean, 1.0)
    for _ in range(4):
        var_t = err_var + e1_tol**2 * n1_var
        mc = max(ce1, ce2, e1_tol * max(c0, c1, c2))
        slack = fk.bernstein_slack(var_t, mc, unit)
        e1_tol = min(0.5, (err_mean + slack) / max(n1_mean, 1.0))
    events.append(fk.RobustnessEvent(
        "p1_e1_high", bound=0.0, direction="above",
        mean=err_mean - e1_tol * n1_mean,
        var=err_var + e1_tol**2 * n1_var,
        max_coeff=max(ce1, ce2, e1_tol * max(c0, c1, c2))))

    # vacuum-origin lower bound on the key set
    pv2 = expect.p_set_v[1]
    z2 = fk.zero_photon_prob(src)
    mu0, mu1, mu2 = src.intensities
    _, p1w, p2w = src.intensity_probs
    za = z2 / (mu1 - mu2) * mu1 * math.exp(mu2) / p2w if p2w > 0 else 0.0
    zb = z2 / (mu1 - mu2) * mu2 * math.exp(mu1) / p1w
    z_mean = za * n * pv2[2] - zb * n * pv2[1]
    z_var = za**2 * n * pv2[2] + zb**2 * n * pv2[1]
    z_slack = fk.bernstein_slack(z_var, max(za, zb), side)
    n0_p2_tol = max(0, math.floor(z_mean - z_slack))
    events.append(fk.RobustnessEvent("p2_n0_low", bound=n0_p2_tol,
                                     direction="below", mean=z_mean, var=z_var,
                                     max_coeff=max(za, zb, 1e-12)))

    p_err_total = sum(expect.p_err_set_v[0])
    err_count_ub = high("p1_ebit_high", p_err_total)
    ebit_tol = min(0.5, err_count_ub / max(p1_lb, 1))

    p2_expected = math.ceil(n * expect.p_set[1])
    th, cert, ebit_prime = _leak_and_thresholds(
        model, f_p1, sift_tol, n1_p1_tol, n1_p2_tol, e1_tol, ebit_tol,
        n0_p2_tol, p1_lb, p2_lb, p2_ub, eps_serf2, l_kb, events, p2_expected)
    return OperatingPoint(th, cert, p2_lb, p2_ub, ebit_prime)


def _estimator_thresholds(model: ExperimentModel, expect: ModelExpectations,
                          f_p1: float, budget: fk.EpsilonBudget,
                          l_kb: int) -> OperatingPoint:
    n = model.n_pulses
    unit = max(model.eps_rob_target - model.eps_ec, 1e-300) / 16.0
    eps_serf2 = unit
    events: list[fk.RobustnessEvent] = []

    def low(name, p):
        t = fk.lower_quantile(n, p, unit)
        events.append(fk.RobustnessEvent(name, bound=t, direction="below",
                                         n_trials=n, prob=p))
        return t

    def high(name, p):
        t = fk.upper_quantile(n, p, unit)
        events.append(fk.RobustnessEvent(name, bound=t, direction="above",
                                         n_trials=n, prob=p))
        return t

    sift_tol = low("sift_low", expect.p_sift)
    sift_ub = high("sift_high", expect.p_sift)
    p1_lb, p2_lb, p2_ub = _split_sizes(expect, f_p1, sift_tol, sift_ub, low, high)

    ds_terms = list(budget.eps_ds_terms) or [budget.eps_ds / 10.0] * 10
    if len(ds_terms) != 10:
        raise ConfigError("expected 10 decoy sub-terms")
    meth = model.concentration

    def est_bounds(obs, mean, eps, side):
        lo, hi = fk.concentration_bounds(obs, n, eps, method=meth, anticipated=mean)
        return lo if side == "lb" else hi

    n1_tol = []
    for si, sname in enumerate(("p1", "p2")):
        pv = expect.p_set_v[si]
        obs1 = low(f"{sname}_mu1_low", pv[1])
        obs0 = high(f"{sname}_mu0_high", pv[0])
        obs2 = high(f"{sname}_mu2_high", pv[2])
        k = 3 * si
        bounds = fk.CountBounds(
            mu0_ub=est_bounds(obs0, n * pv[0], ds_terms[k], "ub"),
            mu1_lb=est_bounds(obs1, n * pv[1], ds_terms[k + 1], "lb"),
            mu2_ub=est_bounds(obs2, n * pv[2], ds_terms[k + 2], "ub"),
        )
        n1_tol.append(max(1, math.floor(fk.decoy_single_photon_lb(bounds, model.src))))
    n1_p1_tol, n1_p2_tol = n1_tol

    ev = expect.p_err_set_v[0]
    err1_obs = high("p1_err_mu1_high", ev[1])
    err1_ub = est_bounds(err1_obs, n * ev[1], ds_terms[6], "ub")
    err2_lb = est_bounds(0.0, n * ev[2], ds_terms[7], "lb")
    e1_count = fk.decoy_single_photon_error_ub(err1_ub, err2_lb, model.src,
                                               set_size=f_p1 * sift_ub)
    e1_tol = min(0.5, e1_count / n1_p1_tol)

    pv2 = expect.p_set_v[1]
    v_obs_lo = low("p2_mu2_low", pv2[2])
    v_obs_hi = high("p2_mu1_high", pv2[1])
    n0_p2_tol = math.floor(fk.decoy_zero_photon_lb(
        mu1_ub=est_bounds(v_obs_hi, n * pv2[1], ds_terms[8], "ub"),
        mu2_lb=est_bounds(v_obs_lo, n * pv2[2], ds_terms[9], "lb"),
        src=model.src))

    p_err_total = sum(expect.p_err_set_v[0])
    err_ub_count = high("p1_ebit_high", p_err_total)
    ebit_tol = min(0.5, err_ub_count / max(p1_lb, 1))

    th, cert, ebit_prime = _leak_and_thresholds(
        model, f_p1, sift_tol, n1_p1_tol, n1_p2_tol, e1_tol, ebit_tol,
        n0_p2_tol, p1_lb, p2_lb, p2_ub, eps_serf2, l_kb, events, p2_ub)
    return OperatingPoint(th, cert, p2_lb, p2_ub, ebit_prime)


def _make_budget(model: ExperimentModel, serf_frac: float, ds_frac: float
                 ) -> fk.EpsilonBudget:
    """Split the secrecy target among the square-root and decoy knobs.

    The Serfling/smoothing roots enter the intermediate security parameter
    with total weight 6 (sifting variant) or 14 (pseudorandom family); the
    decoy budget enters with weight 4 through the idealisation penalty.
    The remainder is spent by the key-length bisection itself.
    """
    target = model.eps_sec_target
    mac1 = 2.0 ** -model.tag_av_bits
    mac2 = 2.0 ** -model.tag_bv_bits
    eps_ds = max(ds_frac * target / 4.0, 1e-300)
    if model.uses_prng_formulas:
        inner = 0.5 * (serf_frac * target / 14.0) ** 2
        if model.variant == "prng":
            share = max((inner - model.eps_prng) / 3.0, 1e-300)
            return fk.EpsilonBudget(
                eps_mac1=mac1, eps_mac2=mac2, eps_ds=eps_ds,
                eps_serf1=share, eps_irng=min(share, 1.0),
                eps_prng=model.eps_prng)
        return fk.EpsilonBudget(
            eps_mac1=mac1, eps_mac2=mac2, eps_ds=eps_ds,
            eps_serf1=max(inner, 1e-300), eps_irng=1.0, eps_prng=0.0)
    serf1 = max(0.5 * (serf_frac * target / 6.0) ** 2, 1e-300)
    return fk.EpsilonBudget(eps_mac1=mac1, eps_mac2=mac2, eps_ds=eps_ds,
                            eps_serf1=serf1)


@dataclass(frozen=True)
class KeyRateResult:
    loss_db: float
    p_det: float
    key_length: int
    f_p1: float
    serf_frac: float
    ds_frac: float
    thresholds: fk.ProtocolThresholds
    report: fk.SecurityReport
    eps_rob: float
    feasible: bool

    @property
    def key_rate(self) -> float:
        return self.key_length  # per-sweep CSV divides by n_pulses


def evaluate(model: ExperimentModel, f_p1: float, serf_frac: float = 0.45,
             ds_frac: float = 0.45) -> KeyRateResult:
    """Key length for one (test fraction, budget split) choice, re-verified."""
    budget = _make_budget(model, serf_frac, ds_frac)
    expect = expected_observables(model, f_p1)
    point = select_thresholds(model, expect, f_p1, budget)
    th = point.thresholds
    variant = "prng" if model.uses_prng_formulas else "qake"
    cap = max(0, point.p2_lb - th.l_theta)
    length = 0
    feasible = th.n1_p1_tol >= 1 and th.n1_p2_tol >= 1 and th.e1_tol < 0.5
    if feasible:
        length = fk.max_key_length(th, budget, model.eps_sec_target,
                                   variant=variant, n_pulses=model.n_pulses,
                                   sp_form=model.sp_form, cap=cap)
    th = replace(th, l_kb=length)
    if variant == "qake":
        report = fk.security_params_qake(th, budget, sp_form=model.sp_form)
    else:
        report = fk.security_params_prng(th, budget, model.n_pulses,
                                         sp_form=model.sp_form)
    eps_rob = fk.robustness(point.cert)
    report = replace(report, eps_rob=eps_rob)
    ok = (report.eps_sec_int <= model.eps_sec_target
          and eps_rob <= model.eps_rob_target and report.binding)
    if not ok:
        length = 0
    loss = math.inf if model.eta == 0 else -10.0 * math.log10(model.eta)
    return KeyRateResult(
        loss_db=loss, p_det=expect.p_det_total, key_length=length, f_p1=f_p1,
        serf_frac=serf_frac, ds_frac=ds_frac, thresholds=th, report=report,
        eps_rob=eps_rob, feasible=ok and length > 0)


_SPLIT_GRID = ((0.30, 0.60), (0.45, 0.45), (0.60, 0.30),
               (0.75, 0.20), (0.90, 0.05))


def optimize(model: ExperimentModel, f_grid: tuple[float, ...] | None = None
             ) -> KeyRateResult:
    """Maximize key length over the test fraction and the budget split.

    Coarse grid followed by local refinement of the test fraction; any
    search strategy is valid because every candidate is re-verified at its
    claimed targets before being returned.
    """
    if f_grid is None:
        f_grid = tuple(0.05 + 0.05 * i for i in range(10))
    best: KeyRateResult | None = None
    for serf_frac, ds_frac in _SPLIT_GRID:
        for f in f_grid:
            r = evaluate(model, f, serf_frac, ds_frac)
            if best is None or r.key_length > best.key_length:
                best = r
    step = 0.025
    for _ in range(4):
        improved = False
        for f in (best.f_p1 - step, best.f_p1 + step):
            if not 0.01 < f < 0.99:
                continue
            r = evaluate(model, f, best.serf_frac, best.ds_frac)
            if r.key_length > best.key_length:
                best, improved = r, True
        if not improved:
            step /= 2
    return best


def sweep(model: ExperimentModel, loss_db_values) -> list[KeyRateResult]:
    """Optimize at each channel loss; p_det overrides are cleared so the
    loss axis is meaningful."""
    results = []
    for loss in loss_db_values:
        ch = ChannelConfig.from_loss_db(loss, model.qber)
        m = replace(model, channel=ch, p_det=None)
        results.append(optimize(m))
    return results
