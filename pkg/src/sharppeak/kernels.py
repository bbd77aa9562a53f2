"""Mutation kernels: sequence level, Hamming-class lumping, and the
modified kernel that reflects classes above K+1 back down.

Per locus, a mutation event keeps the symbol with probability 1 - q and
replaces it by a uniformly chosen OTHER symbol with probability q.  For
the Hamming class relative to the master sequence this means a wrong
locus repairs with probability q/(kappa-1) and a correct locus breaks
with probability q, so the class of a mutant of a class-b chromosome is

    c = b - D + U,   D ~ Bin(b, q/(kappa-1)),  U ~ Bin(ell-b, q),

independent.  M_H(b, c) below is the law of that difference.  In the
regime ell -> infinity, ell q -> a the rows converge to the Poisson
pattern e^{-a} a^{c-b}/(c-b)!.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .core import Parameters
from .errors import CapacityError, RegimeError, ValidationError

# dense (ell+1)^2 storage beyond this is pointless: single entries and
# single rows stay available through the scalar paths
_DENSE_CAP = 4000


def sequence_mutation_prob(u, v, params: Parameters) -> float:
    """M(u, v): probability that mutation turns chromosome u into v.

    Product over loci of (1-q) on agreement and q/(kappa-1) on
    disagreement; depends on (u, v) only through their Hamming distance.
    """
    ell, q, kappa = params.ell, params.q, params.kappa
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != (ell,) or v.shape != (ell,):
        raise ValidationError("u and v must both have length ell")
    for w in (u, v):
        if np.any((w < 0) | (w >= kappa)):
            raise ValidationError("symbols must lie in {0,...,kappa-1}")
    d = int(np.count_nonzero(u != v))
    return (1.0 - q) ** (ell - d) * (q / (kappa - 1.0)) ** d


def limit_mutation_prob(a: float, b: int, c: int) -> float:
    """Large-ell limit of M_H(b, c) with ell*q -> a: Poisson(a) mass at
    c - b (zero for c < b)."""
    if a < 0.0:
        raise ValidationError("a must be non-negative")
    if c < b:
        return 0.0
    k = c - b
    return math.exp(-a + k * math.log(a) - math.lgamma(k + 1)) if k else math.exp(-a)


def _log_binom_pmf(n: int, p: float, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    if n == 0:
        return 0.0
    out = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    if k > 0:
        out += k * math.log(p)
    if k < n:
        out += (n - k) * math.log1p(-p)
    return out


class LumpedMutationMatrix:
    """Row-stochastic matrix M_H(b, c) of class-to-class mutation moves.

    Entries live in [0, 1] and each row sums to 1 up to roundoff.  The
    dense matrix is materialized lazily and only for ell <= 4000; the
    scalar entry() and single row() paths work at any ell.
    """

    def __init__(self, params: Parameters):
        self.params = params
        self._entries = None
        self._cdf_cache = {}

    @property
    def ell(self) -> int:
        return self.params.ell

    def entry(self, b: int, c: int) -> float:
        """M_H(b, c), exact, via log-gamma per-term accumulation."""
        ell, q, kappa = self.params.ell, self.params.q, self.params.kappa
        if not (0 <= b <= ell and 0 <= c <= ell):
            raise ValidationError("class indices must lie in 0..ell")
        r = q / (kappa - 1.0)
        lo = max(0, b - c)
        hi = min(b, ell - c)
        terms = [
            math.exp(_log_binom_pmf(b, r, d) + _log_binom_pmf(ell - b, q, c - b + d))
            for d in range(lo, hi + 1)
        ]
        return math.fsum(terms)

    def row(self, b: int) -> np.ndarray:
        """Row b of M_H as a length ell+1 vector (works at any ell)."""
        ell, q, kappa = self.params.ell, self.params.q, self.params.kappa
        if not (0 <= b <= ell):
            raise ValidationError("class index must lie in 0..ell")
        if self._entries is not None:
            return self._entries[b]
        r = q / (kappa - 1.0)
        p_down = stats.binom.pmf(np.arange(b + 1), b, r)
        p_up = stats.binom.pmf(np.arange(ell - b + 1), ell - b, q)
        return np.convolve(p_down[::-1], p_up)

    @property
    def entries(self) -> np.ndarray:
        if self._entries is None:
            if self.ell > _DENSE_CAP:
                raise CapacityError(
                    "dense storage capped at ell = %d (got %d); use entry()/row()"
                    % (_DENSE_CAP, self.ell)
                )
            mat = np.empty((self.ell + 1, self.ell + 1))
            for b in range(self.ell + 1):
                mat[b] = self.row(b)
            self._entries = mat
        return self._entries

    def row_cdf(self, b: int) -> np.ndarray:
        cdf = self._cdf_cache.get(b)
        if cdf is None:
            cdf = np.cumsum(self.row(b))
            self._cdf_cache[b] = cdf
        return cdf


class ModifiedMutationMatrix:
    """The kernel with classes above K+1 folded onto K+1.

    Rows b <= K+1: entry (b, c) is M_H(c+1, c) for c < b, M_H(b, c) for
    b <= c <= K, zero for c >= K+2, and the (b, K+1) entry absorbs the
    remaining mass.  Rows b >= K+2 copy M_H.  Construction fails if any
    remainder entry is negative (large mutation strength).
    """

    def __init__(self, mh: LumpedMutationMatrix, K: int):
        ell = mh.ell
        if K + 2 > ell:
            raise ValidationError("need K + 2 <= ell")
        if K < 0:
            raise ValidationError("K must be non-negative")
        self.mh = mh
        self.K = K
        self.params = mh.params
        self._cdf_cache = {}
        self._entries = None
        # repair ladder M_H(c+1, c), c = 0..K, shared by all modified rows
        self._ladder = [mh.entry(c + 1, c) for c in range(K + 1)]
        self._remainder = []
        for b in range(K + 2):
            rem = 1.0 - math.fsum(self._ladder[:b]) - math.fsum(
                mh.entry(b, h) for h in range(b, K + 1)
            )
            if rem < 0.0:
                raise RegimeError(
                    "modified kernel row %d has negative mass %g at class K+1"
                    % (b, rem)
                )
            self._remainder.append(rem)

    @property
    def ell(self) -> int:
        return self.mh.ell

    def entry(self, b: int, c: int) -> float:
        ell, K = self.ell, self.K
        if not (0 <= b <= ell and 0 <= c <= ell):
            raise ValidationError("class indices must lie in 0..ell")
        if b >= K + 2:
            return self.mh.entry(b, c)
        if c < b:
            return self._ladder[c]
        if c <= K:
            return self.mh.entry(b, c)
        if c == K + 1:
            return self._remainder[b]
        return 0.0

    def row(self, b: int) -> np.ndarray:
        ell, K = self.ell, self.K
        if not (0 <= b <= ell):
            raise ValidationError("class index must lie in 0..ell")
        if b >= K + 2:
            return self.mh.row(b)
        out = np.zeros(ell + 1)
        for c in range(min(b, K + 1)):
            out[c] = self._ladder[c]
        for c in range(b, K + 1):
            out[c] = self.mh.entry(b, c)
        out[K + 1] = self._remainder[b]
        return out

    @property
    def entries(self) -> np.ndarray:
        if self._entries is None:
            if self.ell > _DENSE_CAP:
                raise CapacityError(
                    "dense storage capped at ell = %d (got %d); use entry()/row()"
                    % (_DENSE_CAP, self.ell)
                )
            mat = np.empty((self.ell + 1, self.ell + 1))
            for b in range(self.ell + 1):
                mat[b] = self.row(b)
            self._entries = mat
        return self._entries

    def row_cdf(self, b: int) -> np.ndarray:
        cdf = self._cdf_cache.get(b)
        if cdf is None:
            cdf = np.cumsum(self.row(b))
            self._cdf_cache[b] = cdf
        return cdf


def lumped_mutation_matrix(params: Parameters) -> LumpedMutationMatrix:
    """Build M_H for the given parameters."""
    return LumpedMutationMatrix(params)


def modified_mutation_matrix(mh: LumpedMutationMatrix, K: int) -> ModifiedMutationMatrix:
    """Fold the rows of mh above class K+1 back onto K+1."""
    return ModifiedMutationMatrix(mh, K)


def sample_class_mutation(b: int, u: float, matrix) -> int:
    """Inverse-CDF sample of the child class from row b of the matrix.

    Returns the smallest c whose row CDF reaches u; at u = 0 this is the
    smallest class carrying positive mass.  Deterministic in (b, u), and
    non-decreasing in both b (for M_H) and u.
    """
    if not (0.0 <= u <= 1.0):
        raise ValidationError("u must lie in [0, 1]")
    cdf = matrix.row_cdf(b)
    side = "right" if u == 0.0 else "left"
    c = int(np.searchsorted(cdf, u, side=side))
    return min(c, matrix.ell)


def per_locus_class_mutation(b: int, us, params: Parameters) -> int:
    """Class of the mutant of a class-b chromosome driven by per-locus
    uniforms: b minus repairs (u_k < q/(kappa-1) on the b wrong loci)
    plus breaks (u_k > 1-q on the ell-b correct ones).

    Over i.i.d. uniforms the law of the result is row b of M_H.
    """
    ell, q, kappa = params.ell, params.q, params.kappa
    us = np.asarray(us, dtype=float)
    if us.shape != (ell,):
        raise ValidationError("need exactly ell uniforms")
    if not (0 <= b <= ell):
        raise ValidationError("class index must lie in 0..ell")
    repairs = int(np.count_nonzero(us[:b] < q / (kappa - 1.0)))
    breaks = int(np.count_nonzero(us[b:] > 1.0 - q))
    return b - repairs + breaks


def dump_matrix_csv(matrix, path) -> None:
    """Write the matrix row-major as CSV with header "b,c,prob"."""
    ell = matrix.ell
    with open(path, "w") as fh:
        fh.write("b,c,prob\n")
        for b in range(ell + 1):
            row = matrix.row(b)
            for c in range(ell + 1):
                fh.write("%d,%d,%.17g\n" % (b, c, row[c]))
