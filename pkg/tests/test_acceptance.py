"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion
report.  Five statistical clauses (05b, 06b, 07b, 08, 09a) encode
thresholds that the exact statistics provably do not meet at the stated
scales; they are implemented verbatim, fail with measured diagnostics,
and are documented in the README.  Everything else passes.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import binom

from ergostat.asclt import asclt_run, maxima_run, normalized_statistic_atoms
from ergostat.cli import run as cli_run
from ergostat.config import parse_config
from ergostat.entropy import (
    cylinder_log_measures,
    return_times_upto,
    rokhlin_entropy,
)
from ergostat.errors import BudgetExceededError
from ergostat.maps import Observable, coboundary, coin, make_map, orbit, sawtooth, symbol_chunks
from ergostat.measures import (
    GaussianLaw,
    WeightedEmpiricalMeasure,
    build_empirical,
    kantorovich,
    kantorovich_bruteforce,
)
from ergostat.erdos_renyi import er_law_check, ld_probability_mc, rate_estimator, _value_chunks
from ergostat.transfer import (
    green_kubo_sigma2,
    invariant_density,
    legendre,
    pressure_curve,
)


def report(criterion: str, ok: bool, detail: str) -> bool:
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


def cramer(a: float) -> float:
    """Rate function of the +/-1/2 coin (closed form)."""
    return (0.5 + a) * math.log1p(2 * a) + (0.5 - a) * math.log1p(-2 * a)


@pytest.fixture(scope="module")
def doubling():
    return make_map("doubling")


@pytest.fixture(scope="module")
def coin_rate(doubling):
    curve = pressure_curve(doubling, coin(), np.linspace(-3, 3, 121), N=512)
    return legendre(curve, np.linspace(-0.45, 0.45, 181))


# -- 1 ------------------------------------------------------------------------

def test_criterion_01_invariant_density(doubling):
    t0 = time.perf_counter()
    dev_d = float(np.max(np.abs(invariant_density(doubling, 4096) - 1.0)))
    dev_t = float(np.max(np.abs(invariant_density(make_map("tent"), 4096) - 1.0)))
    wall = time.perf_counter() - t0
    ok = dev_d < 1e-3 and dev_t < 1e-3 and wall < 10.0
    assert report("01", ok,
                  f"sup|h-1|: doubling {dev_d:.2e}, tent {dev_t:.2e}, {wall:.1f}s")


# -- 2 ------------------------------------------------------------------------

def test_criterion_02_pressure_exactness(doubling):
    c = 0.7
    u_const = Observable("const", lambda x: np.full_like(np.asarray(x, float), c),
                         lipschitz_constant=0.0)
    curve = pressure_curve(doubling, u_const, np.array([-1.0, 0.0, 1.0]), N=1024)
    dev = float(np.max(np.abs(curve.F_values - c * curve.beta_grid)))
    zero_dev = abs(curve.F_values[1])
    # F(0) = 0 holds on every curve by construction; spot-check two more
    for u in (coin(), sawtooth()):
        cv = pressure_curve(doubling, u, np.array([-1.0, 0.0, 1.0]), N=512)
        zero_dev = max(zero_dev, abs(float(cv.F_values[1])))
    ok = dev < 1e-8 and zero_dev < 1e-10
    assert report("02", ok, f"|F - beta*c| {dev:.2e}, |F(0)| {zero_dev:.2e}")


# -- 3 ------------------------------------------------------------------------

def test_criterion_03_green_kubo(doubling):
    # independent oracle: C_j = int (x-1/2)({2^j x}-1/2) dx = 2^-j / 12
    for j in range(0, 8):
        val, _ = quad(lambda x: (x - 0.5) * ((x * 2.0**j) % 1.0 - 0.5), 0, 1,
                      limit=400, points=[i * 2.0**-j for i in range(2**j + 1)] if j <= 8 else None)
        assert val == pytest.approx(2.0**-j / 12.0, abs=1e-10)
    oracle = 1.0 / 12.0 + 2.0 * sum(2.0**-j / 12.0 for j in range(1, 60))
    assert oracle == pytest.approx(0.25, abs=1e-15)

    s2 = green_kubo_sigma2(doubling, sawtooth(), "quadrature", N=2048)
    s2_cob = green_kubo_sigma2(doubling, coboundary(doubling), "quadrature", N=2048)
    ok = abs(s2 - 0.25) <= 0.02 * 0.25 and abs(s2_cob) < 1e-6
    assert report("03", ok, f"sigma2 {s2:.6f} (target 0.25 +/-2%), coboundary {s2_cob:.2e}")


# -- 4 ------------------------------------------------------------------------

def test_criterion_04_kantorovich_oracles():
    g1 = GaussianLaw(1.0)
    point = kantorovich(build_empirical([0.0], 1), g1)
    dev_point = abs(point - math.sqrt(2.0 / math.pi))

    # two-atom case: the adaptive-quadrature oracle (and scipy.integrate)
    # give 0.53537732155; the closed form must match both to 1e-8
    emp2 = WeightedEmpiricalMeasure(np.array([-1.0, 1.0]), np.array([0.5, 0.5]), 2)
    two_closed = kantorovich(emp2, g1)
    two_brute = kantorovich_bruteforce(emp2, g1)
    dev_two = abs(two_closed - 0.5353773215478800)

    rng = np.random.default_rng(20240817)
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(1, 1001))
        emp = build_empirical(
            rng.normal(loc=rng.normal() * 0.5, scale=0.3 + 2.0 * rng.random(), size=n), n)
        law = GaussianLaw(0.4 + 2.0 * rng.random())
        worst = max(worst, abs(kantorovich(emp, law) - kantorovich_bruteforce(emp, law)))
    ok = dev_point < 1e-9 and dev_two < 1e-6 and abs(two_closed - two_brute) < 1e-8 \
        and worst < 1e-8
    assert report("04", ok,
                  f"kappa(delta0) dev {dev_point:.1e}, two-atom dev {dev_two:.1e}, "
                  f"worst oracle gap {worst:.1e} over 100 measures")


# -- 5 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def asclt_batch(doubling):
    t0 = time.perf_counter()
    diags = [asclt_run(doubling, sawtooth(), 100_000, seed,
                       checkpoints=[1000, 100_000], sigma2=0.25)
             for seed in range(1, 11)]
    return diags, time.perf_counter() - t0


def test_criterion_05a_asclt_median_decrease(asclt_batch):
    diags, wall = asclt_batch
    lo = np.median([d.kappa_values[0] for d in diags])
    hi = np.median([d.kappa_values[1] for d in diags])
    ok = hi < lo and wall < 120.0
    assert report("05a", ok,
                  f"median kappa 1e3 -> 1e5: {lo:.4f} -> {hi:.4f}, {wall:.0f}s")


def test_criterion_05b_asclt_absolute_level(asclt_batch):
    # stated threshold: kappa at 1e5 below 0.1 for >= 9/10 seeds.  The exact
    # statistic concentrates near 0.18 at n = 1e5 (the empirical-CDF noise
    # of the 1/k-weighted measure with correlated atoms); even perfectly
    # independent Gaussian atoms only reach the threshold for ~80% of seeds.
    diags, _ = asclt_batch
    vals = np.array([d.kappa_values[1] for d in diags])
    good = int(np.sum(vals < 0.1))
    ok = good >= 9
    report("05b", ok, f"kappa@1e5 < 0.1 for {good}/10 seeds "
                      f"(values {np.round(vals, 3).tolist()})")
    assert ok, ("criterion demands kappa(E_1e5, N(0,0.25)) < 0.1 for >= 9/10 "
                f"seeds; measured {good}/10. The per-seed probability of the "
                "event is ~3% (see decisions ledger); the threshold sits "
                "below the statistic's sampling floor.")


# -- 6 ------------------------------------------------------------------------

def test_criterion_06a_maxima_degenerate_case(doubling):
    pos = Observable("pos", lambda x: np.asarray(x, float) + 0.1, lipschitz_constant=1.0)
    a_plain = normalized_statistic_atoms(doubling, pos, 20_000, seed=3)
    a_max = normalized_statistic_atoms(doubling, pos, 20_000, seed=3, running_max=True)
    ok = np.array_equal(a_plain, a_max)
    assert report("06a", ok, "M_n = E_n exactly for a nonnegative observable")


def test_criterion_06b_maxima_absolute_level(doubling):
    vals = np.array([
        maxima_run(doubling, coin(), 100_000, seed, checkpoints=[100_000],
                   sigma2=0.25).kappa_values[0]
        for seed in range(1, 11)])
    good = int(np.sum(vals < 0.15))
    ok = good >= 9
    report("06b", ok, f"kappa(M,G(0.5))@1e5 < 0.15 for {good}/10 seeds "
                      f"(values {np.round(vals, 3).tolist()})")
    assert ok, ("criterion demands kappa(M_1e5, G(0.5)) < 0.15 for >= 9/10 "
                f"seeds; measured {good}/10 (per-seed rate ~47%, see ledger)")


# -- 7 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def er_series(doubling, coin_rate):
    series = [er_law_check(doubling, coin(), 0.2, coin_rate, [50, 100, 200], seed)
              for seed in range(1, 21)]
    return series


def test_criterion_07a_er_band_shrinks(er_series):
    med = [np.median([abs(s.averages[i] - 0.2) for s in er_series]) for i in range(3)]
    ok = med[0] > med[1] > med[2]
    assert report("07a", ok,
                  f"median |M_k/k - 0.2| at k=50,100,200: "
                  f"{med[0]:.4f} > {med[1]:.4f} > {med[2]:.4f}")


def test_criterion_07b_er_fluctuation_band(er_series):
    band = er_series[0].band
    flucts = np.array([s.fluctuations for s in er_series])   # (20 seeds, 3 k)
    inside = float(np.mean(np.abs(flucts) <= 1.5 * band))
    ok = inside >= 0.9
    report("07b", ok, f"fluctuations inside +/-1.5/(2 beta) = +/-{1.5*band:.3f} "
                      f"for {inside:.0%} of (seed,k) pairs")
    assert ok, ("criterion demands >= 90% containment; measured "
                f"{inside:.0%}. At k = 50, 100, 200 the window counts "
                "[exp(k phi)] - k are 12, 3646, 1.4e7: far below the "
                "asymptotic regime, the maximum sits beneath the lower band "
                "edge (medians approach -1/(2 beta) from below; see ledger)")


# -- 8 ------------------------------------------------------------------------

def test_criterion_08_rate_estimator(doubling):
    vals = np.concatenate(list(_value_chunks(doubling, coin(), seed=1, total=2**20)))
    est = rate_estimator(vals, np.unique(np.geomspace(30, 600, 25).astype(int)))
    errs = []
    for m, r in zip(est.levels, est.rate_estimates):
        if 0.1 <= m <= 0.35:
            errs.append(abs(r - cramer(m)) / cramer(m))
    worst = max(errs)
    ok = worst <= 0.15 and len(errs) >= 5
    report("08", ok, f"max relative phi error over levels [0.1,0.35]: "
                     f"{worst:.0%} across {len(errs)} points")
    assert ok, ("criterion demands <= 15% relative error in phi; measured "
                f"max {worst:.0%} (median {np.median(errs):.0%}). The raw "
                "inversion log(N)/k systematically overshoots phi(m(k)) by "
                "the window-clustering and prefactor terms "
                "~log(beta sigma sqrt(2 pi k) theta)/(k phi); see ledger")


# -- 9 ------------------------------------------------------------------------

def test_criterion_09a_estime_normalized_ratios(doubling, coin_rate):
    ratios = {}
    refused = {}
    for k in (50, 100, 200, 400):
        try:
            est = ld_probability_mc(doubling, coin(), 0.2, k, 1_000_000, seed=11,
                                    rate=coin_rate)
            ratios[k] = est.normalized_ratio
        except BudgetExceededError as exc:
            refused[k] = str(exc)
    feasible = {k: round(v, 3) for k, v in ratios.items()}
    ok = len(refused) == 0 and max(ratios.values()) / min(ratios.values()) < 10.0
    report("09a", ok, f"ratios {feasible}, refused k={sorted(refused)}")
    # exact tail at k=200: S_200 > 40 means at least 141 heads of 200
    exact_200 = float(binom.sf(140, 200, 0.5))
    assert ok, (
        "criterion demands the sandwich ratio at k in {50,100,200,400} with "
        "1e6 direct trials at alpha=0.2, but k*phi(0.2) = 16.5 (k=200) and "
        "32.9 (k=400) exceed the feasibility cap 12; the exact tail at "
        f"k=200 is P = {exact_200:.2e}, i.e. {1e6 * exact_200:.4f} expected "
        "successes per 1e6 trials, and ~5e-10 at k=400.  Direct Monte Carlo "
        "cannot resolve these; the operation refuses per its guard")


def test_criterion_09b_estime_binomial_oracle(doubling, coin_rate):
    est = ld_probability_mc(doubling, coin(), 0.2, 100, 1_000_000, seed=11,
                            rate=coin_rate)
    exact = float(binom.sf(70, 100, 0.5))
    ok = est.ci_lo <= exact <= est.ci_hi
    assert report("09b", ok,
                  f"p_hat {est.p_hat:.2e} CI [{est.ci_lo:.2e}, {est.ci_hi:.2e}] "
                  f"covers exact binomial tail {exact:.2e}")


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_entropy(doubling):
    h_table = invariant_density(doubling, 2048)
    orb = orbit(doubling, seed=7, n=2000)
    lm = cylinder_log_measures(doubling, orb.symbols, h_table)
    ks = np.arange(1, 2001)
    smb_dev = float(np.max(np.abs(-lm / ks - math.log(2.0))))

    ow_means = []
    for seed in range(1, 101):
        r = return_times_upto(symbol_chunks(doubling, seed=seed), 20, cap=10**8)[19]
        ow_means.append(math.log(r) / 20.0)
    ow_mean = float(np.mean(ow_means))

    l3 = make_map("linear", slopes=[3, 3, 3])
    h3 = rokhlin_entropy(l3, invariant_density(l3, 729))
    ok = smb_dev < 1e-13 and abs(ow_mean - math.log(2)) <= 0.1 * math.log(2) \
        and abs(h3 - math.log(3)) < 1e-6
    assert report("10", ok,
                  f"SMB dev {smb_dev:.1e}, OW mean {ow_mean:.4f} (log2 "
                  f"{math.log(2):.4f} +/-10%), Rokhlin(slope3) err {abs(h3 - math.log(3)):.1e}")


# -- 11 -----------------------------------------------------------------------

def test_criterion_11_sandwich(doubling):
    n, eps = 20, 1.0
    lower = -(1.0 + eps) * math.log(n)
    upper = math.log((1.0 + eps) * math.log(n))
    mu = 2.0 ** -n
    violations = 0
    products = []
    for seed in range(1, 1001):
        r = return_times_upto(symbol_chunks(doubling, seed=seed), n, cap=10**8)[n - 1]
        stat = math.log(r * mu)
        products.append(r * mu)
        if not (lower <= stat <= upper):
            violations += 1
    freq = violations / 1000.0
    mean_prod = float(np.mean(products))
    ok = freq <= 0.05 and abs(mean_prod - 1.0) <= 0.10
    assert report("11", ok,
                  f"sandwich violations {freq:.1%} (cap 5%), "
                  f"mean R*mu {mean_prod:.4f} (1 +/-10%)")


# -- 12 -----------------------------------------------------------------------

def test_criterion_12_determinism(tmp_path):
    base = """
[map]
name = doubling

[observable]
name = coin

[run]
seeds = 3, 5
horizon = 5000
checkpoints = 1000, 5000
output_dir = {out}

[ulam]
resolution = 512

[erdos_renyi]
alpha = 0.2
k_grid = 50, 100
"""
    digests = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        cfg = parse_config(base.format(out=out))
        for sub in ("asclt", "density", "erdos-renyi"):
            assert cli_run(sub, cfg) == 0
        blob = b"".join(p.read_bytes() for p in sorted(out.glob("*.csv")))
        digests.append(blob)
    ok = digests[0] == digests[1]
    assert report("12", ok,
                  "CSV artifacts byte-identical across reruns (asclt, density, "
                  "erdos-renyi; 2 seeds each)")
