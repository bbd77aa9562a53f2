"""Independent reference implementations used to pin expected values.

Everything here is deliberately written from the definitions with plain
numpy / fractions / mpmath, without importing the package under test:
brute-force summation over sequence space, dense first-step linear
solves, exact rational binomial convolutions, and high-precision series.
"""

import itertools
import math
from fractions import Fraction

import numpy as np


# ---------------------------------------------------------------------------
# sequence space and mutation, by enumeration


def enumerate_seqs(ell, kappa):
    return list(itertools.product(range(kappa), repeat=ell))


def hamming_class(seq):
    return sum(1 for s in seq if s != 0)


def mutation_prob(u, v, q, kappa):
    # product over loci: stay with 1-q, hit a specific other symbol with
    # q/(kappa-1)
    p = 1.0
    for x, y in zip(u, v):
        p *= (1.0 - q) if x == y else q / (kappa - 1.0)
    return p


def mh_enumerated(ell, q, kappa):
    """Class-to-class mutation matrix by brute-force summation over all
    kappa^ell target sequences, one representative source per class."""
    seqs = enumerate_seqs(ell, kappa)
    out = np.zeros((ell + 1, ell + 1))
    for b in range(ell + 1):
        u = tuple([1] * b + [0] * (ell - b))
        for v in seqs:
            out[b, hamming_class(v)] += mutation_prob(u, v, q, kappa)
    return out


def mh_exact(ell, q, kappa, b, c):
    """M_H(b, c) as an exact Fraction: convolution of the repair count
    Bin(b, q/(kappa-1)) against the damage count Bin(ell-b, q)."""
    qf = Fraction(q)
    pr = qf / (kappa - 1)
    pd = qf
    total = Fraction(0)
    for r in range(b + 1):
        d = c - b + r
        if d < 0 or d > ell - b:
            continue
        total += (
            math.comb(b, r) * pr ** r * (1 - pr) ** (b - r)
            * math.comb(ell - b, d) * pd ** d * (1 - pd) ** (ell - b - d)
        )
    return total


# ---------------------------------------------------------------------------
# the two chains on a small instance, built from scratch


def full_moran_chain(ell, m, q, sigma, kappa):
    """Transition matrix of the sequence-level chain on ordered
    m-tuples.  Returns (states, P, class_counts_per_state)."""
    seqs = enumerate_seqs(ell, kappa)
    cls = [hamming_class(s) for s in seqs]
    M = np.array([[mutation_prob(u, v, q, kappa) for v in seqs] for u in seqs])
    states = list(itertools.product(range(len(seqs)), repeat=m))
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    P = np.zeros((n, n))
    counts = []
    for i, x in enumerate(states):
        fitness = np.array([sigma if cls[u] == 0 else 1.0 for u in x])
        w = fitness / fitness.sum()
        for slot in range(m):
            for parent in range(m):
                row = M[x[parent]]
                for v in range(len(seqs)):
                    y = list(x)
                    y[slot] = v
                    P[i, index[tuple(y)]] += w[parent] * row[v] / m
        occ = [0] * (ell + 1)
        for u in x:
            occ[cls[u]] += 1
        counts.append(tuple(occ))
    return states, P, counts


def occupancy_chain(ell, m, q, sigma, kappa):
    """Occupancy chain built directly from the event decomposition:
    dying class by count, parent class by fitness weight, child class by
    the enumerated M_H row."""
    mh = mh_enumerated(ell, q, kappa)
    states = [
        z for z in itertools.product(range(m + 1), repeat=ell + 1) if sum(z) == m
    ]
    index = {z: i for i, z in enumerate(states)}
    n = len(states)
    P = np.zeros((n, n))
    for i, o in enumerate(states):
        denom = (sigma - 1.0) * o[0] + m
        child = np.zeros(ell + 1)
        for l in range(ell + 1):
            weight = sigma * o[l] if l == 0 else o[l]
            if weight:
                child += (weight / denom) * mh[l]
        for k in range(ell + 1):
            if o[k] == 0:
                continue
            for j in range(ell + 1):
                if child[j] == 0.0:
                    continue
                nxt = list(o)
                nxt[k] -= 1
                nxt[j] += 1
                P[i, index[tuple(nxt)]] += (o[k] / m) * child[j]
    return states, P


def stationary_dense(P):
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


# ---------------------------------------------------------------------------
# birth-death first-step solves (the closed forms' referee)


def bd_up_time(delta, gamma, a, b):
    """E(steps to first hit b | start a), chain on {0..m}, by solving
    the first-step equations on {0..b-1} (excursions below a allowed)."""
    m = len(delta)
    assert len(gamma) == m and 0 <= a <= b <= m
    if a == b:
        return 0.0
    A = np.zeros((b, b))
    for i in range(b):
        d = delta[i]
        g = gamma[i - 1] if i > 0 else 0.0
        A[i, i] = d + g
        if i + 1 < b:
            A[i, i + 1] = -d
        if i > 0:
            A[i, i - 1] = -g
    return float(np.linalg.solve(A, np.ones(b))[a])


def bd_down_time(delta, gamma, a, b):
    """E(steps to first hit a | start b), solving on {a+1..m}."""
    m = len(delta)
    if a == b:
        return 0.0
    size = m - a
    A = np.zeros((size, size))
    for idx, i in enumerate(range(a + 1, m + 1)):
        d = delta[i] if i < m else 0.0
        g = gamma[i - 1]
        A[idx, idx] = d + g
        if i < m:
            A[idx, idx + 1] = -d
        if i - 1 > a:
            A[idx, idx - 1] = -g
    return float(np.linalg.solve(A, np.ones(size))[b - a - 1])


def bd_exit_low(delta, gamma, a, i, b):
    """P(hit a before b | start i), solving on {a+1..b-1}."""
    size = b - a - 1
    A = np.zeros((size, size))
    rhs = np.zeros(size)
    for idx, h in enumerate(range(a + 1, b)):
        d, g = delta[h], gamma[h - 1]
        A[idx, idx] = d + g
        if h + 1 < b:
            A[idx, idx + 1] = -d
        if h - 1 > a:
            A[idx, idx - 1] = -g
        if h - 1 == a:
            rhs[idx] = g
    return float(np.linalg.solve(A, rhs)[i - a - 1])


def bd_exit_mc(delta, gamma, a, i, b, n, seed):
    """Monte Carlo exit law: n independent walks, vectorized."""
    rng = np.random.default_rng(seed)
    state = np.full(n, i, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    hit_low = np.zeros(n, dtype=bool)
    d = np.asarray(delta, dtype=float)
    g = np.concatenate(([np.nan], np.asarray(gamma, dtype=float)))
    while active.any():
        idx = np.nonzero(active)[0]
        u = rng.random(idx.size)
        s = state[idx]
        up = u < d[s]
        down = u > 1.0 - g[s]
        state[idx] = s + up.astype(np.int64) - down.astype(np.int64)
        arrived = np.nonzero((state[idx] == a) | (state[idx] == b))[0]
        hit_low[idx[arrived]] = state[idx[arrived]] == a
        active[idx[arrived]] = False
    return hit_low.mean(), hit_low.std(ddof=1) / math.sqrt(n)


# ---------------------------------------------------------------------------
# quasispecies series and generating function at high precision


def rho_star_series(sigma, a, k, dps=60):
    """(sigma e^-a - 1) (a^k / k!) sum_{i>=1} i^k sigma^-i via mpmath."""
    import mpmath

    with mpmath.workdps(dps):
        s = mpmath.mpf(sigma)
        av = mpmath.mpf(a)
        front = (s * mpmath.e ** (-av) - 1) * av ** k / mpmath.factorial(k)
        tail = mpmath.nsum(lambda i: i ** k / s ** i, [1, mpmath.inf])
        return float(front * tail)


def gf_taylor(sigma, a, kmax, dps=60):
    """Taylor coefficients of (sigma e^-a - 1) e^{ax} / (sigma - e^{ax})."""
    import mpmath

    with mpmath.workdps(dps):
        s = mpmath.mpf(sigma)
        av = mpmath.mpf(a)

        def f(x):
            return (s * mpmath.e ** (-av) - 1) * mpmath.e ** (av * x) / (
                s - mpmath.e ** (av * x)
            )

        return [float(c) for c in mpmath.taylor(f, 0, kmax)]


# ---------------------------------------------------------------------------
# the renewal identity on an arbitrary finite chain


def renewal_ratio(P, f, e):
    """E_e(sum_{s<tau} f(X_s)) / E_e(tau) with tau the return time to e,
    both expectations by absorbing-chain solves."""
    n = P.shape[0]
    keep = [i for i in range(n) if i != e]
    Q = P[np.ix_(keep, keep)]
    A = np.eye(n - 1) - Q
    ones = np.linalg.solve(A, np.ones(n - 1))
    fs = np.linalg.solve(A, np.asarray([f[i] for i in keep], dtype=float))
    # one initial step out of e, then absorb on return
    t = 1.0 + float(P[e, keep] @ ones)
    integral = f[e] + float(P[e, keep] @ fs)
    return integral / t
