"""Closed-form quasispecies distribution and phase classification.

When selection beats mutation (sigma * e^{-a} > 1), the equilibrium
frequencies of the Hamming classes concentrate on the distribution

    rho*_k = (sigma e^{-a} - 1) (a^k / k!) sum_{i >= 1} i^k / sigma^i .

This module evaluates these weights three ways (series, recurrence,
generating function), computes the moments of the class law, evaluates
the persistence exponent phi(a), and classifies points of the (a, alpha)
plane against the critical curve alpha * phi(a) = ln kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import QuasispeciesDistribution
from .errors import RegimeError, ValidationError


class Regime(str, Enum):
    """Phase of a point in the (a, alpha) plane."""

    DISORDERED = "disordered"
    QUASISPECIES = "quasispecies"
    CRITICAL = "critical"


@dataclass(frozen=True)
class PhasePoint:
    """A classified point of the parameter plane.

    alpha is the population-to-length ratio; it may be math.inf.
    The regime is consistent with the sign of alpha*phi(a) - ln(kappa)
    within tolerance 1e-12 * max(1, ln kappa).
    """

    a: float
    alpha: float
    sigma: float
    kappa: int
    regime: Regime


def _check_regime(sigma: float, a: float) -> None:
    if sigma <= 1.0:
        raise ValidationError("sigma must exceed 1")
    if a < 0.0:
        raise ValidationError("a must be non-negative")
    if sigma * math.exp(-a) <= 1.0:
        raise RegimeError(
            "quasispecies distribution undefined: sigma*exp(-a) = %g <= 1"
            % (sigma * math.exp(-a))
        )


def rho_star_closed(sigma: float, a: float, k: int, tail_eps: float = 1e-12) -> float:
    """Quasispecies weight rho*_k by direct series summation.

    Parameters
    ----------
    sigma, a : float
        Fitness advantage and mutation pressure; requires sigma*e^{-a} > 1.
    k : int
        Hamming class index.
    tail_eps : float
        Absolute accuracy target; the series over i is truncated once the
        geometric remainder bound drops below this.

    Returns
    -------
    float
        rho*_k = (sigma e^{-a} - 1) (a^k/k!) sum_{i>=1} i^k sigma^{-i}.
    """
    _check_regime(sigma, a)
    if k < 0:
        raise ValidationError("k must be non-negative")
    if tail_eps <= 0.0:
        raise ValidationError("tail_eps must be positive")
    if a == 0.0:
        # a^k kills every class but the master class
        return 1.0 if k == 0 else 0.0

    log_pref = (
        math.log(sigma * math.exp(-a) - 1.0) + k * math.log(a) - math.lgamma(k + 1)
    )
    log_sigma = math.log(sigma)
    log_eps = math.log(tail_eps)

    # The summand i^k sigma^{-i} can dwarf the float range even though
    # rho*_k <= 1, so the running sum is kept in log space.
    log_sum = -math.inf
    i = 0
    while True:
        i += 1
        log_sum = np.logaddexp(log_sum, k * math.log(i) - i * log_sigma)
        # once consecutive term ratios fall below (1+1/i)^k / sigma < 1,
        # the remainder is bounded by a geometric series
        log_ratio = k * math.log1p(1.0 / i) - log_sigma
        if log_ratio < 0.0:
            log_tail = (
                k * math.log(i + 1)
                - (i + 1) * log_sigma
                - math.log1p(-math.exp(log_ratio))
            )
            if log_pref + log_tail < log_eps:
                break
    return math.exp(log_pref + log_sum)


def rho_star_recurrence(sigma: float, a: float, k_max: int) -> np.ndarray:
    """Weights rho*_0..rho*_{k_max} via the triangular recurrence.

    rho*_0 = (sigma e^{-a} - 1)/(sigma - 1) and for k >= 1

        rho*_k = e^{-a} / ((sigma-1) rho*_0 + 1 - e^{-a})
                 * (sigma (a^k/k!) rho*_0
                    + sum_{l=1}^{k-1} (a^{k-l}/(k-l)!) rho*_l).

    The prefactor simplifies to 1/(sigma-1) after substituting rho*_0.
    """
    _check_regime(sigma, a)
    if k_max < 0:
        raise ValidationError("k_max must be non-negative")
    e_a = math.exp(-a)
    rho = np.zeros(k_max + 1)
    rho[0] = (sigma * e_a - 1.0) / (sigma - 1.0)
    if k_max == 0:
        return rho
    pref = e_a / ((sigma - 1.0) * rho[0] + 1.0 - e_a)
    poisson = np.ones(k_max + 1)
    for j in range(1, k_max + 1):
        poisson[j] = poisson[j - 1] * a / j
    for k in range(1, k_max + 1):
        s = sigma * poisson[k] * rho[0]
        if k > 1:
            s += float(np.dot(poisson[1:k][::-1], rho[1:k]))
        rho[k] = pref * s
    return rho


def generating_function(sigma: float, a: float, x: float) -> float:
    """f(x) = (sigma e^{-a} - 1) e^{a x} / (sigma - e^{a x}).

    The power series of f around 0 has coefficients rho*_k, and f(1) = 1.
    Raises if e^{a x} reaches the pole at sigma.
    """
    _check_regime(sigma, a)
    if a * x >= math.log(sigma):
        raise ValidationError(
            "generating function evaluated at or beyond its pole: "
            "exp(a*x) >= sigma"
        )
    e_ax = math.exp(a * x)
    return (sigma * math.exp(-a) - 1.0) * e_ax / (sigma - e_ax)


def q_moments(sigma: float, a: float) -> tuple:
    """Mean and variance of the quasispecies class law.

    E(Q)   = sigma a e^{-a} / (sigma e^{-a} - 1),
    Var(Q) = sigma a e^{-a} (sigma e^{-a} + a - 1) / (sigma e^{-a} - 1)^2.
    """
    _check_regime(sigma, a)
    s = sigma * math.exp(-a)
    mean = s * a / (s - 1.0)
    variance = s * a * (s + a - 1.0) / (s - 1.0) ** 2
    return mean, variance


def phi_threshold(sigma: float, a: float) -> float:
    """Persistence exponent phi(a) of the master-sequence excursions.

    phi(a) = [u ln(u/(sigma-1)) + ln(sigma - u)] / (1 - u)
    with u = sigma(1 - e^{-a}), for a < ln sigma; phi(a) = 0 otherwise.

    The apparent singularity at u = 1 is removable; within |u-1| < 1e-6
    the value comes from the second-order Taylor expansion around u = 1,
    because direct evaluation loses all precision there.
    """
    if sigma < 1.0:
        raise ValidationError("sigma must be >= 1")
    if a <= 0.0:
        raise ValidationError("a must be positive")
    if sigma == 1.0 or a >= math.log(sigma):
        return 0.0
    u = sigma * (1.0 - math.exp(-a))
    t = u - 1.0
    if abs(t) < 1e-6:
        s1 = sigma - 1.0
        c0 = math.log(s1) + 1.0 / s1 - 1.0
        c1 = 0.5 / (s1 * s1) - 0.5
        c2 = 1.0 / 6.0 + 1.0 / (3.0 * s1 ** 3)
        return c0 + c1 * t + c2 * t * t
    return (u * math.log(u / (sigma - 1.0)) + math.log(sigma - u)) / (1.0 - u)


def classify_phase(a: float, alpha: float, sigma: float, kappa: int) -> PhasePoint:
    """Classify a point of the (a, alpha) plane against alpha*phi(a) = ln kappa.

    alpha may be math.inf; phi(a) = 0 forces the disordered phase for any
    alpha, since no quasispecies exists beyond the error threshold.
    """
    if kappa < 2:
        raise ValidationError("kappa must be an integer >= 2")
    if alpha < 0.0:
        raise ValidationError("alpha must be non-negative")
    phi = phi_threshold(sigma, a)
    log_kappa = math.log(kappa)
    if phi == 0.0:
        regime = Regime.DISORDERED
    elif math.isinf(alpha):
        regime = Regime.QUASISPECIES
    else:
        gap = alpha * phi - log_kappa
        if abs(gap) <= 1e-12 * max(1.0, log_kappa):
            regime = Regime.CRITICAL
        elif gap < 0.0:
            regime = Regime.DISORDERED
        else:
            regime = Regime.QUASISPECIES
    return PhasePoint(a=a, alpha=alpha, sigma=sigma, kappa=kappa, regime=regime)


def quasispecies_distribution(
    sigma: float, a: float, k_max: int = 50
) -> QuasispeciesDistribution:
    """Package the weights 0..k_max with the exact truncation deficit as tail."""
    weights = rho_star_recurrence(sigma, a, k_max)
    tail = max(0.0, 1.0 - float(np.sum(weights)))
    return QuasispeciesDistribution(
        sigma=sigma, a=a, weights=tuple(weights), tail_bound=tail
    )
