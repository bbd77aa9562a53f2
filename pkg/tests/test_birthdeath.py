"""Exact birth-death formulas, the asymptotic rate-ratio family, the
large-deviation profiles, and the binomial bounds."""

import math

import numpy as np
import pytest

import oracles
from sharppeak.bounding import master_class_chain
from sharppeak.birthdeath import (
    BirthDeathSpec,
    LDProfile,
    assumption1_report,
    binomial_bounds,
    binomial_log_limit,
    eta_root,
    exit_point_law,
    ld_integral,
    mean_hitting_time_down,
    mean_hitting_time_up,
    phi_ratio,
    phi_ratio_multi,
    pi_products_log,
    rho_root,
)
from sharppeak.core import Parameters
from sharppeak.errors import (
    SingularChainError,
    UnreachableTargetError,
    ValidationError,
)
from sharppeak.kernels import lumped_mutation_matrix
from sharppeak.quasispecies import rho_star_recurrence


def random_spec(m, rng, lo=0.1, hi=0.4):
    return BirthDeathSpec(
        m=m,
        delta=tuple(rng.uniform(lo, hi, m)),
        gamma=tuple(rng.uniform(lo, hi, m)),
    )


def symmetric_spec(m, rate=0.5):
    return BirthDeathSpec(m=m, delta=(rate,) * m, gamma=(rate,) * m)


# ---------------------------------------------------------------------------
# pi products


def test_pi_symmetric_chain():
    spec = symmetric_spec(10)
    assert np.allclose(pi_products_log(spec), 0.0, atol=1e-14)


def test_pi_constant_ratio():
    spec = BirthDeathSpec(m=8, delta=(0.5,) * 8, gamma=(0.25,) * 8)
    logs = pi_products_log(spec)
    assert np.allclose(logs, np.arange(8) * math.log(2.0), atol=1e-12)


def test_pi_zero_gamma_rejected():
    spec = BirthDeathSpec(m=3, delta=(0.4, 0.4, 0.4), gamma=(0.3, 0.0, 0.3))
    with pytest.raises(SingularChainError):
        pi_products_log(spec)


def test_pi_matches_ld_integral_on_master_chain():
    # (1/m) ln pi(floor(rho m)) approaches the quadrature profile
    a, sigma, m, rho = 0.5, 4.0, 500, 0.3
    params = Parameters(ell=200, m=m, q=a / 200, sigma=sigma, kappa=2)
    mh = lumped_mutation_matrix(params)
    spec = master_class_chain("lower", mh)
    logs = pi_products_log(spec)
    finite = logs[int(rho * m)] / m
    assert abs(finite - ld_integral(a, sigma, rho)) < 0.02


# ---------------------------------------------------------------------------
# hitting times


def test_up_time_trivial_cases():
    spec = symmetric_spec(5)
    assert mean_hitting_time_up(spec, 2, 2) == 0.0
    one = BirthDeathSpec(m=1, delta=(0.5,), gamma=(0.5,))
    assert mean_hitting_time_up(one, 0, 1) == pytest.approx(2.0, rel=1e-14)


def test_up_time_symmetric_closed_form():
    for m in (5, 20):
        spec = symmetric_spec(m)
        got = mean_hitting_time_up(spec, 0, m)
        assert got == pytest.approx(m * (m + 1), rel=1e-12)
    spec = symmetric_spec(20)
    oracle = oracles.bd_up_time(spec.delta, spec.gamma, 0, 20)
    assert mean_hitting_time_up(spec, 0, 20) == pytest.approx(oracle, abs=1e-9)


def test_down_time_trivial_and_mirror():
    spec = symmetric_spec(6)
    assert mean_hitting_time_down(spec, 3, 3) == 0.0
    rng = np.random.default_rng(7)
    orig = random_spec(9, rng)
    m = orig.m
    mirror = BirthDeathSpec(
        m=m,
        delta=tuple(orig.gamma[m - 1 - j] for j in range(m)),
        gamma=tuple(orig.delta[m - 1 - j] for j in range(m)),
    )
    for a, b in [(0, 9), (2, 7), (4, 5)]:
        up = mean_hitting_time_up(mirror, a, b)
        down = mean_hitting_time_down(orig, m - b, m - a)
        assert up == pytest.approx(down, rel=1e-12)


def test_hitting_times_random_spec_oracle():
    rng = np.random.default_rng(2026)
    spec = random_spec(15, rng)
    for a, b in [(0, 15), (3, 11), (7, 8)]:
        want = oracles.bd_up_time(spec.delta, spec.gamma, a, b)
        assert mean_hitting_time_up(spec, a, b) == pytest.approx(want, abs=1e-9)
        want = oracles.bd_down_time(spec.delta, spec.gamma, a, b)
        assert mean_hitting_time_down(spec, a, b) == pytest.approx(want, abs=1e-9)


def test_up_time_unreachable():
    spec = BirthDeathSpec(m=4, delta=(0.3, 0.0, 0.3, 0.3), gamma=(0.3,) * 4)
    with pytest.raises(UnreachableTargetError):
        mean_hitting_time_up(spec, 0, 4)


@pytest.mark.parametrize("m", [6, 14, 25])
def test_oracle_equivalence_range(m):
    rng = np.random.default_rng(m)
    spec = random_spec(m, rng, lo=0.05, hi=0.45)
    up = mean_hitting_time_up(spec, 0, m)
    assert up == pytest.approx(oracles.bd_up_time(spec.delta, spec.gamma, 0, m),
                               rel=1e-12, abs=1e-9)
    down = mean_hitting_time_down(spec, 0, m)
    assert down == pytest.approx(oracles.bd_down_time(spec.delta, spec.gamma, 0, m),
                                 rel=1e-12, abs=1e-9)
    p_low, p_high = exit_point_law(spec, 1, m // 2, m - 1)
    want = oracles.bd_exit_low(spec.delta, spec.gamma, 1, m // 2, m - 1)
    assert p_low == pytest.approx(want, abs=1e-9)
    assert p_low + p_high == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# exit point law


def test_exit_law_gamblers_ruin():
    spec = symmetric_spec(10)
    for a, i, b in [(0, 3, 10), (2, 5, 8)]:
        p_a, p_b = exit_point_law(spec, a, i, b)
        assert p_a == pytest.approx((b - i) / (b - a), rel=1e-12)
        assert p_b == pytest.approx((i - a) / (b - a), rel=1e-12)


def test_exit_law_monte_carlo():
    rng = np.random.default_rng(99)
    spec = random_spec(8, rng)
    a, i, b = 0, 1, 8
    p_a, _ = exit_point_law(spec, a, i, b)
    mean, se = oracles.bd_exit_mc(spec.delta, spec.gamma, a, i, b, 1_000_000, 5)
    assert abs(mean - p_a) <= 3.0 * se


def test_exit_law_validation():
    spec = symmetric_spec(6)
    with pytest.raises(ValidationError):
        exit_point_law(spec, 3, 3, 5)
    with pytest.raises(ValidationError):
        exit_point_law(spec, 4, 3, 5)
    dead = BirthDeathSpec(m=4, delta=(0.3, 0.0, 0.3, 0.3), gamma=(0.3,) * 4)
    with pytest.raises(SingularChainError):
        exit_point_law(dead, 0, 2, 4)


def test_spec_validation():
    with pytest.raises(ValidationError):
        BirthDeathSpec(m=2, delta=(0.6, 0.6), gamma=(0.5, 0.6))  # sum > 1
    with pytest.raises(ValidationError):
        BirthDeathSpec(m=2, delta=(-0.1, 0.2), gamma=(0.2, 0.2))
    spec = symmetric_spec(3)
    assert spec.delta_at(0) == 0.5
    assert spec.gamma_at(3) == 0.5
    with pytest.raises(ValidationError):
        spec.delta_at(3)
    with pytest.raises(ValidationError):
        spec.gamma_at(0)


def test_assumption1_report():
    spec = symmetric_spec(10, rate=0.3)
    c, k = assumption1_report(spec)
    assert k == 2
    assert c == pytest.approx(0.3 * 100)


# ---------------------------------------------------------------------------
# rate-ratio family


def test_phi_at_its_root():
    for sigma, beta, eps in [(4.0, math.exp(-0.5), 0.0), (6.0, 0.4, 0.05)]:
        rho = rho_root(beta, eps, sigma)
        if 0.0 < rho < 1.0:
            assert phi_ratio(beta, eps, rho, sigma) == pytest.approx(1.0, abs=1e-12)


def test_phi_below_one_at_neutral_beta():
    sigma = 5.0
    assert rho_root(1.0 / sigma, 0.0, sigma) == 0.0
    for rho in np.linspace(0.01, 0.99, 25):
        assert phi_ratio(1.0 / sigma, 0.0, float(rho), sigma) < 1.0


def test_rho_root_matches_master_weight():
    sigma, a = 4.0, 0.5
    beta = math.exp(-a)
    want = (sigma * beta - 1.0) / (sigma - 1.0)
    assert rho_root(beta, 0.0, sigma) == pytest.approx(want, rel=1e-14)


def test_phi_ratio_domain():
    with pytest.raises(ValidationError):
        phi_ratio(0.5, 0.0, 0.0, 4.0)
    with pytest.raises(ValidationError):
        phi_ratio(0.5, 0.0, 1.0, 4.0)


def test_multi_ratio_back_substitution():
    sigma, a = 4.0, 0.5
    stars = rho_star_recurrence(sigma, a, 3)
    for k in (1, 2, 3):
        betas = tuple(
            math.exp(-a) * a ** (k - l) / math.factorial(k - l)
            for l in range(k + 1)
        )
        rho = tuple(stars[:k])
        eta = eta_root(betas, 0.0, rho, sigma)
        assert phi_ratio_multi(betas, 0.0, rho, eta, sigma) == pytest.approx(
            1.0, abs=1e-12
        )


def test_eta_root_k0_reduction():
    assert eta_root((0.6,), 0.1, (), 4.0) == rho_root(0.6, 0.1, 4.0)


def test_eta_root_recovers_next_class_weight():
    sigma, a = 4.0, 0.5
    stars = rho_star_recurrence(sigma, a, 1)
    betas = (math.exp(-a) * a, math.exp(-a))
    eta = eta_root(betas, 0.0, (stars[0],), sigma)
    assert eta == pytest.approx(stars[1], rel=1e-12)


# ---------------------------------------------------------------------------
# large-deviation integral


def test_ld_integral_zero():
    assert ld_integral(0.5, 4.0, 0.0) == 0.0


def test_ld_integral_argmax_near_master_weight():
    sigma, a = 4.0, 0.5
    rho0 = rho_root(math.exp(-a), 0.0, sigma)
    grid = np.linspace(1e-3, 0.999, 1000)
    vals = [ld_integral(a, sigma, float(r)) for r in grid]
    best = grid[int(np.argmax(vals))]
    assert abs(best - rho0) < 2e-3


def test_ld_integral_shape():
    sigma, a = 4.0, 0.5
    rho0 = rho_root(math.exp(-a), 0.0, sigma)
    for s in np.linspace(0.01, rho0 - 0.01, 20):
        assert phi_ratio(math.exp(-a), 0.0, float(s), sigma) > 1.0
    for s in np.linspace(rho0 + 0.01, 0.99, 20):
        assert phi_ratio(math.exp(-a), 0.0, float(s), sigma) < 1.0


# ---------------------------------------------------------------------------
# LD profile with a window (k >= 1)


def test_profile_window_shrinks_with_delta_prime():
    sigma, a = 4.0, 0.5
    star1 = rho_star_recurrence(sigma, a, 1)[1]
    errs = []
    for dp in (0.05, 0.01, 0.002):
        prof = LDProfile(a=a, sigma=sigma, k=1, delta_prime=dp)
        lo, hi = prof.rho_window()
        assert lo <= hi
        errs.append(max(abs(lo - star1), abs(hi - star1)))
    assert errs[0] > errs[1] > errs[2]


def test_profile_shape_outside_window():
    prof = LDProfile(a=0.5, sigma=4.0, k=1, delta_prime=0.02)
    lo, hi = prof.rho_window()
    for s in np.linspace(1e-3, lo * 0.98, 25):
        assert prof.psi(float(s)) >= 1.0 - 1e-12
    for s in np.linspace(hi * 1.02, 0.99, 25):
        assert prof.psi(float(s)) <= 1.0 + 1e-12


def test_profile_value_reduces_to_ld_integral():
    prof = LDProfile(a=0.5, sigma=4.0)
    for rho in (0.1, 0.3, 0.7):
        assert prof.value(rho) == pytest.approx(
            ld_integral(0.5, 4.0, rho), abs=1e-10
        )


def test_profile_window_validation():
    with pytest.raises(ValidationError, match="delta_prime"):
        LDProfile(a=0.5, sigma=4.0, k=1)
    with pytest.raises(ValidationError, match="window empty"):
        LDProfile(a=0.5, sigma=4.0, k=1, delta_prime=0.9)


def test_profile_eta_window_tracks_rho_window():
    # finite-size mutation probabilities converge to the Poisson betas
    a, sigma = 0.5, 4.0
    prof = LDProfile(a=a, sigma=sigma, k=1, delta_prime=0.02)
    params = Parameters(ell=2000, m=10, q=a / 2000, sigma=sigma, kappa=2)
    mh = lumped_mutation_matrix(params)
    lo_f, hi_f = prof.eta_window(mh, "lower")
    lo, hi = prof.rho_window()
    assert abs(lo_f - lo) < 1e-3 and abs(hi_f - hi) < 1e-3


# ---------------------------------------------------------------------------
# unimodality of pi for the master-class chain


@pytest.mark.parametrize("theta", ["lower", "upper"])
def test_pi_unimodal_with_peak_at_rho(theta):
    a, sigma, m, ell, K = 0.5, 4.0, 300, 200, 2
    params = Parameters(ell=ell, m=m, q=a / ell, sigma=sigma, kappa=2, K=K)
    mh = lumped_mutation_matrix(params)
    spec = master_class_chain(theta, mh)
    logs = pi_products_log(spec)
    beta = mh.entry(0, 0)
    if theta == "lower":
        eps = mh.entry(ell, 0)
    else:
        from sharppeak.kernels import modified_mutation_matrix

        eps = modified_mutation_matrix(mh, K).entry(K + 1, 0)
    r = rho_root(beta, eps, sigma)
    incr = np.diff(logs)
    for i, d in enumerate(incr, start=1):
        if i / m < r - 1.0 / m:
            assert d >= -1e-12
        elif i / m > r + 1.0 / m:
            assert d <= 1e-12


# ---------------------------------------------------------------------------
# renewal identity on an arbitrary small chain


def test_renewal_identity_five_states():
    rng = np.random.default_rng(11)
    P = rng.uniform(0.05, 1.0, (5, 5))
    P /= P.sum(axis=1, keepdims=True)
    mu = oracles.stationary_dense(P)
    f = rng.uniform(-1.0, 2.0, 5)
    for e in range(5):
        ratio = oracles.renewal_ratio(P, f, e)
        assert abs(ratio - float(mu @ f)) < 1e-9


# ---------------------------------------------------------------------------
# binomial bounds


def test_binomial_bounds_b_zero():
    ell, kappa = 30, 3
    bb = binomial_bounds(ell, kappa, 0)
    assert bb.log_exact == pytest.approx(-ell * math.log(kappa), rel=1e-14)
    assert bb.log_lower == pytest.approx(bb.log_exact, rel=1e-14)


def test_binomial_bounds_ordering():
    bb = binomial_bounds(40, 2, 10)
    assert bb.log_lower <= bb.log_exact <= bb.log_upper
    with pytest.raises(ValidationError):
        binomial_bounds(40, 2, 21)


def test_binomial_limit():
    ell, rho, kappa = 2000, 0.3, 2
    bb = binomial_bounds(ell, kappa, int(rho * ell))
    assert abs(bb.log_exact / ell - binomial_log_limit(kappa, rho)) < 5e-3
