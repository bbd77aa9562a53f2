"""Exact birth-death chain formulas and the asymptotic rate-ratio family.

A birth-death chain on {0,...,m} moves up from i with probability
delta_i, down with probability gamma_i, and holds otherwise.  The
products

    pi(0) = 1,   pi(i) = (delta_1 ... delta_i)/(gamma_1 ... gamma_i)

yield closed forms for mean hitting times and exit-point laws.  These
are evaluated here in log space so that chains with m in the thousands
(whose pi span hundreds of orders of magnitude) remain computable.

The second half of the module covers the scaling limits used in the
analysis of the master-class chain: the ratio function phi(beta,eps,rho),
its root rho(beta,eps), the multi-class ratio and its root eta, the
large-deviation profile of (1/m) ln pi, and elementary bounds on the
binomial law Bin(ell, 1 - 1/kappa).
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import (
    NumericError,
    SingularChainError,
    UnreachableTargetError,
    ValidationError,
)
from .quasispecies import rho_star_recurrence

_RATE_FUZZ = 1e-12


@dataclass(frozen=True)
class BirthDeathSpec:
    """Transition rates of a birth-death chain on {0,...,m}.

    Parameters
    ----------
    m : int
        Top state of the chain.
    delta : sequence of float
        Up probabilities (delta_0, ..., delta_{m-1}).
    gamma : sequence of float
        Down probabilities (gamma_1, ..., gamma_m).
    """

    m: int
    delta: tuple
    gamma: tuple

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("m must be >= 1")
        delta = tuple(float(d) for d in self.delta)
        gamma = tuple(float(g) for g in self.gamma)
        if len(delta) != self.m or len(gamma) != self.m:
            raise ValidationError(
                "need delta_0..delta_{m-1} and gamma_1..gamma_m, i.e. m entries each"
            )
        for name, rates in (("delta", delta), ("gamma", gamma)):
            if any(r < 0.0 or r > 1.0 + _RATE_FUZZ for r in rates):
                raise ValidationError("%s rates must lie in [0, 1]" % name)
        # delta_i + gamma_i <= 1 wherever both are defined (0 < i < m)
        for i in range(1, self.m):
            if delta[i] + gamma[i - 1] > 1.0 + _RATE_FUZZ:
                raise ValidationError(
                    "delta_%d + gamma_%d = %g exceeds 1" % (i, i, delta[i] + gamma[i - 1])
                )
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "gamma", gamma)

    def delta_at(self, i: int) -> float:
        """Up probability from state i, 0 <= i < m."""
        if not 0 <= i < self.m:
            raise ValidationError("delta defined for 0 <= i < m")
        return self.delta[i]

    def gamma_at(self, i: int) -> float:
        """Down probability from state i, 1 <= i <= m."""
        if not 1 <= i <= self.m:
            raise ValidationError("gamma defined for 1 <= i <= m")
        return self.gamma[i - 1]


def pi_products_log(spec: BirthDeathSpec) -> np.ndarray:
    """ln pi(i) for i = 0..m-1 via cumulative log sums.

    pi(0) = 1 and pi(i) = (delta_1...delta_i)/(gamma_1...gamma_i); a zero
    gamma in the range makes the products blow up and raises instead.
    """
    m = spec.m
    if m == 1:
        return np.zeros(1)
    gam = np.asarray(spec.gamma[: m - 1])
    if np.any(gam <= 0.0):
        i = int(np.nonzero(gam <= 0.0)[0][0]) + 1
        raise SingularChainError("gamma_%d = 0: pi products undefined" % i)
    with np.errstate(divide="ignore"):
        steps = np.log(np.asarray(spec.delta[1:m])) - np.log(gam)
    return np.concatenate(([0.0], np.cumsum(steps)))


def _log_up_times(spec: BirthDeathSpec, b: int) -> np.ndarray:
    """ln E(one-step passage time i -> i+1) for i = 0..b-1.

    Uses the recursion u_0 = 1/delta_0, u_i = (1 + gamma_i u_{i-1})/delta_i,
    the log-sum-exp form of the classical sum over pi ratios.  A zero
    gamma_i correctly severs the dependence on the states below i.
    """
    log_u = np.empty(b)
    with np.errstate(divide="ignore"):
        log_delta = np.log(np.asarray(spec.delta[:b]))
    log_u[0] = -log_delta[0]
    for i in range(1, b):
        g = spec.gamma[i - 1]
        if g == 0.0 or not math.isfinite(log_u[i - 1]):
            # either the chain cannot drop below i, or the time below is
            # already infinite and propagates (unless severed)
            prev = 0.0 if g == 0.0 else math.inf
        else:
            prev = np.logaddexp(0.0, math.log(g) + log_u[i - 1])
        log_u[i] = prev - log_delta[i]
    return log_u


def _log_down_times(spec: BirthDeathSpec, a: int) -> np.ndarray:
    """ln E(one-step passage time i -> i-1) for i = m..a+1, stored at [i]."""
    m = spec.m
    log_v = np.full(m + 1, np.nan)
    with np.errstate(divide="ignore"):
        log_v[m] = -math.log(spec.gamma[m - 1]) if spec.gamma[m - 1] > 0 else math.inf
    for i in range(m - 1, a, -1):
        d = spec.delta[i]
        if d == 0.0 or not math.isfinite(log_v[i + 1]):
            prev = 0.0 if d == 0.0 else math.inf
        else:
            prev = np.logaddexp(0.0, math.log(d) + log_v[i + 1])
        g = spec.gamma[i - 1]
        log_v[i] = prev - math.log(g) if g > 0.0 else math.inf
    return log_v


def mean_hitting_time_up(spec: BirthDeathSpec, a: int, b: int) -> float:
    """E(tau({b}) | Z_0 = a) for a <= b, exact.

    Equals sum_{j=a}^{b-1} sum_{i<=j} (1/delta_i) pi(i)/pi(j), the
    first-step solution of the chain (excursions below a included).
    """
    if not (0 <= a <= b <= spec.m):
        raise ValidationError("need 0 <= a <= b <= m")
    if a == b:
        return 0.0
    log_u = _log_up_times(spec, b)[a:b]
    if not np.all(np.isfinite(log_u)):
        raise UnreachableTargetError(
            "a zero up-rate on the path makes E(tau) infinite"
        )
    return float(math.fsum(np.exp(log_u)))


def mean_hitting_time_down(spec: BirthDeathSpec, a: int, b: int) -> float:
    """E(tau({a}) | Z_0 = b) for a <= b, exact (mirror of the up formula)."""
    if not (0 <= a <= b <= spec.m):
        raise ValidationError("need 0 <= a <= b <= m")
    if a == b:
        return 0.0
    log_v = _log_down_times(spec, a)[a + 1 : b + 1]
    if not np.all(np.isfinite(log_v)):
        raise UnreachableTargetError(
            "a zero down-rate on the path makes E(tau) infinite"
        )
    return float(math.fsum(np.exp(log_v)))


def exit_point_law(spec: BirthDeathSpec, a: int, i: int, b: int) -> tuple:
    """(P(exit at a), P(exit at b)) for the chain started at i in (a, b).

    P(Z_{tau({a,b})} = a | Z_0 = i) = [sum_{j=i}^{b-1} 1/pi(j)]
                                    / [sum_{j=a}^{b-1} 1/pi(j)],
    with pi ratios taken relative to pi(a) so only rates inside (a, b)
    enter.  The pair sums to one by construction.
    """
    if not (0 <= a < i < b <= spec.m):
        raise ValidationError("need a < i < b within {0,...,m}")
    for h in range(a + 1, b):
        if spec.delta[h] == 0.0 or spec.gamma[h - 1] == 0.0:
            raise SingularChainError(
                "rate at state %d vanishes: exit law degenerate" % h
            )
    # rel[j] = ln pi(j) - ln pi(a) for j = a..b-1
    steps = [
        math.log(spec.delta[h]) - math.log(spec.gamma[h - 1])
        for h in range(a + 1, b)
    ]
    rel = np.concatenate(([0.0], np.cumsum(steps)))
    neg = -rel
    w = np.exp(neg - np.max(neg))
    p_a = float(math.fsum(w[i - a :]) / math.fsum(w))
    return p_a, 1.0 - p_a


def assumption1_report(spec: BirthDeathSpec) -> tuple:
    """Empirical (C, k) with all rates >= C/m^k; reported with k = 2."""
    rates = [r for r in spec.delta + spec.gamma if r > 0.0]
    return min(rates) * spec.m ** 2, 2


# ---------------------------------------------------------------------------
# the asymptotic rate-ratio family


def phi_ratio(beta: float, eps: float, rho: float, sigma: float) -> float:
    """phi(beta, eps, rho), the limiting up/down rate ratio of the
    master-class chain at occupancy fraction rho.

    phi = (1 - rho)(sigma beta rho + (1 - rho) eps)
          / [rho (sigma (1 - beta) rho + (1 - rho)(1 - eps))].
    """
    if not (0.0 < beta <= 1.0):
        raise ValidationError("beta must lie in (0, 1]")
    if not (0.0 <= eps < 1.0):
        raise ValidationError("eps must lie in [0, 1)")
    if not (0.0 < rho < 1.0):
        raise ValidationError("rho must lie strictly inside (0, 1)")
    up = sigma * beta * rho + (1.0 - rho) * eps
    down = sigma * (1.0 - beta) * rho + (1.0 - rho) * (1.0 - eps)
    return (1.0 - rho) * up / (rho * down)


def rho_root(beta: float, eps: float, sigma: float) -> float:
    """The only non-negative root of phi(beta, eps, rho) = 1.

    rho(beta, eps) = [sigma beta - 1 - eps
                      + sqrt((sigma beta - 1 - eps)^2 + 4 eps (sigma-1))]
                     / (2 (sigma - 1)).
    """
    if sigma <= 1.0:
        raise ValidationError("sigma must exceed 1")
    t = sigma * beta - 1.0 - eps
    return (t + math.sqrt(t * t + 4.0 * eps * (sigma - 1.0))) / (2.0 * (sigma - 1.0))


def phi_ratio_multi(beta, eps: float, rho, eta: float, sigma: float) -> float:
    """Multi-class ratio phi(beta, eps, rho, eta) = delta/gamma at fraction eta.

    beta = (beta_0..beta_k) are the mutation probabilities into class k from
    classes 0..k, eps the probability from the merged remainder class, and
    rho = (rho_0..rho_{k-1}) the frozen fractions of the classes below k.
    For k = 0 the rho_0 slot coincides with eta itself.
    """
    beta = tuple(float(x) for x in beta)
    rho = tuple(float(x) for x in rho)
    k = len(beta) - 1
    if len(rho) != k:
        raise ValidationError("need one rho per class below k")
    if not (0.0 < eta < 1.0):
        raise ValidationError("eta must lie strictly inside (0, 1)")
    if k == 0:
        return phi_ratio(beta[0], eps, eta, sigma)
    s = math.fsum(rho)
    rest = 1.0 - s - eta
    up = (
        sigma * rho[0] * beta[0]
        + math.fsum(rho[l] * beta[l] for l in range(1, k))
        + eta * beta[k]
        + rest * eps
    )
    down = (
        sigma * rho[0] * (1.0 - beta[0])
        + math.fsum(rho[l] * (1.0 - beta[l]) for l in range(1, k))
        + eta * (1.0 - beta[k])
        + rest * (1.0 - eps)
    )
    return (1.0 - eta) * up / (eta * down)


def eta_root(beta, eps: float, rho, sigma: float) -> float:
    """The only root in eta of phi(beta, eps, rho, eta) = 1.

    eta(beta, eps, rho) = [sigma rho_0 beta_0 + sum_{l=1}^{k-1} rho_l beta_l
                           + (1 - sum rho_l) eps]
                          / [(sigma - 1) rho_0 + 1 - beta_k + eps].

    For k = 0 the equation is quadratic in eta and the root is
    rho(beta_0, eps) instead.
    """
    beta = tuple(float(x) for x in beta)
    rho = tuple(float(x) for x in rho)
    k = len(beta) - 1
    if len(rho) != k:
        raise ValidationError("need one rho per class below k")
    if k == 0:
        return rho_root(beta[0], eps, sigma)
    s = math.fsum(rho)
    num = (
        sigma * rho[0] * beta[0]
        + math.fsum(rho[l] * beta[l] for l in range(1, k))
        + (1.0 - s) * eps
    )
    den = (sigma - 1.0) * rho[0] + 1.0 - beta[k] + eps
    if den <= 0.0:
        raise ValidationError("non-positive denominator in eta root")
    return num / den


_LD_SPLIT = 1e-6


def _quad_log_phi(f, lo: float, hi: float) -> tuple:
    """Integrate f over [lo, hi] splitting off the endpoint neighbourhoods
    (0, _LD_SPLIT] and [1-_LD_SPLIT, 1); the log singularities there are
    tamed by exponential substitutions."""
    total = 0.0
    err = 0.0
    cut = min(hi, _LD_SPLIT)
    if lo < cut:
        # substitute s = e^t
        g = lambda t: f(math.exp(t)) * math.exp(t)
        t_lo = -np.inf if lo == 0.0 else math.log(lo)
        val, e = integrate.quad(g, t_lo, math.log(cut), limit=200, epsabs=1e-10)
        total += val
        err += e
        lo = cut
    top = max(lo, 1.0 - _LD_SPLIT)
    if lo < min(hi, top):
        val, e = integrate.quad(f, lo, min(hi, top), limit=200, epsabs=1e-10)
        total += val
        err += e
    if hi > top:
        # substitute s = 1 - e^t near the right edge; once 1 - e^t rounds
        # to 1 the e^t weight makes the contribution negligible
        def g(t):
            u = math.exp(t)
            if 1.0 - u == 1.0:
                return 0.0
            return f(1.0 - u) * u
        t_lo = -np.inf if hi == 1.0 else math.log(1.0 - hi)
        val, e = integrate.quad(g, t_lo, math.log(1.0 - top), limit=200,
                                epsabs=1e-10)
        total += val
        err += e
    return total, err


def ld_integral(a: float, sigma: float, rho: float, tol: float = 1e-8) -> float:
    """The large-deviation profile int_0^rho ln phi(e^{-a}, 0, s) ds.

    This is the limit of (1/m) ln pi(floor(rho m)) for the master-class
    chain.  Adaptive quadrature with absolute tolerance tol.
    """
    if not (0.0 <= rho <= 1.0):
        raise ValidationError("rho must lie in [0, 1]")
    if sigma <= 1.0:
        raise ValidationError("sigma must exceed 1")
    if a <= 0.0:
        raise ValidationError("a must be positive")
    if rho == 0.0:
        return 0.0
    beta = math.exp(-a)

    def f(s):
        # phi(beta, 0, s) = (1-s) sigma beta / (sigma (1-beta) s + 1 - s)
        return math.log((1.0 - s) * sigma * beta) - math.log(
            sigma * (1.0 - beta) * s + 1.0 - s
        )

    total, err = _quad_log_phi(f, 0.0, rho)
    if err > tol:
        raise NumericError(
            "quadrature error %.3e exceeds tolerance %.3e" % (err, tol)
        )
    return total


BinomialBounds = namedtuple("BinomialBounds", ["log_lower", "log_upper", "log_exact"])


def binomial_bounds(ell: int, kappa: int, b: int) -> BinomialBounds:
    """Bounds on B(b), the Binomial(ell, 1 - 1/kappa) mass at b <= ell/2.

    Returns natural logs (the raw values underflow for ell in the
    thousands):

        (1/kappa^ell)(ell/(2b))^b  <=  B(b)  <=  ell^b / kappa^{ell-b}.
    """
    if kappa < 2:
        raise ValidationError("kappa must be an integer >= 2")
    if not (0 <= b <= ell / 2):
        raise ValidationError("bounds require 0 <= b <= ell/2")
    log_kappa = math.log(kappa)
    log_lower = -ell * log_kappa + (b * math.log(ell / (2.0 * b)) if b > 0 else 0.0)
    log_upper = b * math.log(ell) - (ell - b) * log_kappa
    log_exact = (
        math.lgamma(ell + 1)
        - math.lgamma(b + 1)
        - math.lgamma(ell - b + 1)
        + b * math.log1p(-1.0 / kappa)
        - (ell - b) * log_kappa
    )
    return BinomialBounds(log_lower, log_upper, log_exact)


def binomial_log_limit(kappa: int, rho: float) -> float:
    """Limit of (1/ell) ln B(floor(rho ell)):
    -(1-rho) ln(kappa(1-rho)) - rho ln(kappa rho/(kappa-1))."""
    if kappa < 2:
        raise ValidationError("kappa must be an integer >= 2")
    if not (0.0 <= rho <= 1.0):
        raise ValidationError("rho must lie in [0, 1]")
    out = 0.0
    if rho < 1.0:
        out -= (1.0 - rho) * math.log(kappa * (1.0 - rho))
    if rho > 0.0:
        out -= rho * math.log(kappa * rho / (kappa - 1.0))
    return out


@dataclass(frozen=True)
class LDProfile:
    """Large-deviation profile of the class-k conditioned chain.

    For k = 0 this is rho -> int_0^rho ln phi(e^{-a}, 0, s) ds.  For
    k >= 1 the integrand is ln psi, where psi evaluates the multi-class
    ratio at a corner of the window of half-width delta_prime around
    (rho*_0, ..., rho*_{k-1}); which rho_0 corner minimises the up rate
    switches at a fraction eta_switch, computed from the sign of
    d(delta_i)/d(rho_0).

    The profile increases below rho_minus and decreases above rho_plus,
    and both window edges tend to rho*_k as delta_prime -> 0.
    """

    a: float
    sigma: float
    k: int = 0
    delta_prime: float = 0.0
    betas: tuple = field(init=False)
    rho_stars: tuple = field(init=False)
    eta_switch: float = field(init=False)

    def __post_init__(self):
        if self.a <= 0.0:
            raise ValidationError("a must be positive")
        if self.k < 0:
            raise ValidationError("k must be non-negative")
        e_a = math.exp(-self.a)
        betas = tuple(
            e_a * self.a ** (self.k - l) / math.factorial(self.k - l)
            for l in range(self.k + 1)
        )
        object.__setattr__(self, "betas", betas)
        if self.k == 0:
            object.__setattr__(self, "rho_stars", ())
            object.__setattr__(self, "eta_switch", 1.0)
            return
        if self.delta_prime <= 0.0:
            raise ValidationError("k >= 1 requires delta_prime > 0")
        stars = tuple(float(r) for r in rho_star_recurrence(self.sigma, self.a, self.k - 1))
        if self.delta_prime >= stars[0]:
            raise ValidationError("window empty: delta_prime >= rho*_0")
        if any(s - self.delta_prime < 0.0 for s in stars[1:]):
            raise ValidationError("window leaves the simplex at a lower class")
        object.__setattr__(self, "rho_stars", stars)
        # d(delta_i)/d(rho_0) has the sign of
        #   sigma beta_0 - (sigma-1) sum rho_l beta_l - (sigma-1) eta beta_k,
        # which decreases in eta; below the switch the up rate increases
        # with rho_0, so its window minimum sits at the lower corner.
        corr = math.fsum(
            (stars[l] - self.delta_prime) * betas[l] for l in range(1, self.k)
        )
        eta_sw = (self.sigma * betas[0] - (self.sigma - 1.0) * corr) / (
            (self.sigma - 1.0) * betas[self.k]
        )
        object.__setattr__(self, "eta_switch", min(max(eta_sw, 0.0), 1.0))

    def _corner(self, low_rho0: bool) -> tuple:
        d = self.delta_prime
        return (self.rho_stars[0] + (-d if low_rho0 else d),) + tuple(
            s - d for s in self.rho_stars[1:]
        )

    def psi(self, eta: float) -> float:
        """The rate ratio at fraction eta with the window corner that
        extremises the lower chain's rates."""
        if self.k == 0:
            return phi_ratio(self.betas[0], 0.0, eta, self.sigma)
        corner = self._corner(low_rho0=eta <= self.eta_switch)
        return phi_ratio_multi(self.betas, 0.0, corner, eta, self.sigma)

    def value(self, rho: float, tol: float = 1e-8) -> float:
        """int_0^rho ln psi(s) ds, the limit of (1/m) ln pi(floor(rho m))."""
        if not (0.0 <= rho <= 1.0):
            raise ValidationError("rho must lie in [0, 1]")
        if rho == 0.0:
            return 0.0
        if self.k == 0:
            return ld_integral(self.a, self.sigma, rho, tol=tol)
        total = 0.0
        err_budget = 0.0
        cut = min(rho, self.eta_switch)
        if cut > 0.0:
            f = lambda s: math.log(self.psi(s))
            val, err = _quad_log_phi(f, 0.0, cut)
            total += val
            err_budget += err
        if rho > cut:
            f = lambda s: math.log(self.psi(s))
            val, err = integrate.quad(f, cut, rho, limit=200)
            total += val
            err_budget += err
        if err_budget > tol:
            raise NumericError(
                "quadrature error %.3e exceeds tolerance %.3e" % (err_budget, tol)
            )
        return total

    def rho_window(self) -> tuple:
        """(rho_minus, rho_plus): extremes over the two rho_0 corners of the
        root of psi = 1.  Both collapse onto rho*_k as delta_prime -> 0."""
        if self.k == 0:
            r = rho_root(self.betas[0], 0.0, self.sigma)
            return r, r
        roots = [
            eta_root(self.betas, 0.0, self._corner(low), self.sigma)
            for low in (True, False)
        ]
        return min(roots), max(roots)

    def eta_window(self, mh, theta: str = "lower") -> tuple:
        """(eta_minus, eta_plus): same as rho_window but with the finite-size
        mutation probabilities of mh (an object with entry(b, c)).

        theta selects the merged-class row: "lower" uses 0, "upper" uses
        the one-step repair probability entry(k+1, k).
        """
        if theta not in ("lower", "upper"):
            raise ValidationError("theta must be 'lower' or 'upper'")
        betas = tuple(mh.entry(l, self.k) for l in range(self.k + 1))
        eps = 0.0 if theta == "lower" else mh.entry(self.k + 1, self.k)
        if self.k == 0:
            r = rho_root(betas[0], eps, self.sigma)
            return r, r
        roots = [
            eta_root(betas, eps, self._corner(low), self.sigma)
            for low in (True, False)
        ]
        return min(roots), max(roots)
