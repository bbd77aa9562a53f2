"""Statistical harness: equilibrium estimates, discovery/persistence
times, and the renewal decomposition of the bounding chains' stationary
laws.

Equilibrium estimation is plain ergodic averaging with batch-means
standard errors.  Hitting-time runs are replicated, carry a hard step
cap, and report censored replicas separately instead of averaging them
in.  The renewal decomposition expresses the stationary integral of a
function f(N_K/m) under a bounding process through four excursion
quantities; on small instances every ingredient is computed by sparse
linear solves and the identity residual is numerically zero, which is
the strongest self-test this module has.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .bounding import (
    BoundingChainKind,
    EKTransitionMatrix,
    ek_transition_matrix,
    enumerate_ek,
)
from .core import OccupancyDistribution, Parameters
from .errors import CapacityError, CensoredError, NumericError, ValidationError
from .kernels import LumpedMutationMatrix, lumped_mutation_matrix
from .simulate import SimulationConfig, replica_generators, run_trajectory

_EXACT_CAP = 200_000
_DEFAULT_STEP_CAP = 10 ** 9


@dataclass(frozen=True)
class EquilibriumEstimate:
    """Ergodic-average estimate of a vector statistic.

    variance is the plain per-coordinate sample variance of the series;
    standard_error comes from batch means and accounts for
    autocorrelation.  effective_samples <= n_samples always.
    """

    mean: np.ndarray
    variance: np.ndarray
    standard_error: np.ndarray
    effective_samples: float
    burn_in_used: int
    n_samples: int

    def __post_init__(self):
        if np.any(np.asarray(self.standard_error) < 0):
            raise ValidationError("standard errors must be non-negative")
        if self.effective_samples > self.n_samples + 1e-9:
            raise ValidationError("effective sample size exceeds raw sample count")


@dataclass(frozen=True)
class HittingTimeEstimate:
    """Replicated hitting-time estimate.

    count is the number of uncensored replicas entering the mean;
    censored replicas are only counted, never averaged.
    log_scale_per_unit is ln(mean) divided by the relevant scale
    (ell for discovery, m for persistence); -inf when the mean is 0.
    """

    mean: float
    standard_error: float
    count: int
    log_scale_per_unit: float
    censored: int = 0
    step_cap: int = _DEFAULT_STEP_CAP

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("need at least one uncensored replica")


def _pool_batch_means(series_list, batches):
    """Batch-means reduction over one or more equally treated series.

    Each series is (n, d); its last batches*floor(n/batches) samples are
    split into `batches` batches.  Returns (mean, variance, se, ess, n)."""
    if batches < 20:
        raise ValidationError("batch count must be >= 20")
    all_samples = []
    batch_means = []
    batch_len = None
    for series in series_list:
        arr = np.atleast_2d(np.asarray(series, dtype=float))
        if arr.shape[0] == 1 and arr.shape[1] > 1 and np.ndim(series) == 1:
            arr = arr.T
        n = arr.shape[0]
        L = n // batches
        if L < 1:
            raise NumericError(
                "only %d samples for %d batches; run longer or thin less"
                % (n, batches)
            )
        batch_len = L
        used = arr[n - batches * L :]
        all_samples.append(used)
        batch_means.append(used.reshape(batches, L, -1).mean(axis=1))
    pooled = np.concatenate(all_samples, axis=0)
    bm = np.concatenate(batch_means, axis=0)
    mean = pooled.mean(axis=0)
    variance = pooled.var(axis=0, ddof=1) if pooled.shape[0] > 1 else np.zeros(pooled.shape[1])
    n_bm = bm.shape[0]
    var_bm = bm.var(axis=0, ddof=1) if n_bm > 1 else np.zeros(bm.shape[1])
    se = np.sqrt(var_bm / n_bm)
    n_used = pooled.shape[0]
    # effective sample size from the batch-means variance inflation
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(var_bm > 0, variance / (batch_len * var_bm), 1.0)
    ess = float(min(n_used, n_used * float(np.min(ratio))))
    return mean, variance, se, ess, n_used


def equilibrium_from_samples(samples, batches: int = 32, burn_in_used: int = 0) -> EquilibriumEstimate:
    """Batch-means estimate from a single post-burn-in sample series."""
    mean, variance, se, ess, n = _pool_batch_means([samples], batches)
    return EquilibriumEstimate(
        mean=mean,
        variance=variance,
        standard_error=se,
        effective_samples=ess,
        burn_in_used=burn_in_used,
        n_samples=n,
    )


def estimate_equilibrium(chain, statistic, config: SimulationConfig, batches: int = 32) -> EquilibriumEstimate:
    """Ergodic average of statistic(state) over a generic chain.

    chain must expose initial_state and step(state, rng).  Intended for
    small chains; the occupancy chain has a fast path in
    estimate_occupancy_equilibrium."""
    burn_in = config.burn_in if config.burn_in is not None else config.steps // 10
    thin = config.thin if config.thin is not None else 1
    if config.steps <= burn_in:
        raise ValidationError("steps must exceed burn_in")
    gens = replica_generators(config.seed, config.replicas)
    series_list = []
    for rng in gens:
        state = chain.initial_state
        samples = []
        for t in range(1, config.steps + 1):
            state = chain.step(state, rng)
            if t > burn_in and (t - burn_in) % thin == 0:
                samples.append(np.atleast_1d(np.asarray(statistic(state), dtype=float)))
        series_list.append(np.array(samples))
    mean, variance, se, ess, n = _pool_batch_means(series_list, batches)
    return EquilibriumEstimate(
        mean=mean,
        variance=variance,
        standard_error=se,
        effective_samples=ess,
        burn_in_used=burn_in,
        n_samples=n,
    )


def estimate_occupancy_equilibrium(
    params: Parameters, config: SimulationConfig, initial=None, batches: int = 32
):
    """Class frequencies 0..K and N_K/m at equilibrium, via the fast
    trajectory driver.  Returns (frequency estimate, N_K/m estimate)."""
    if initial is None:
        initial = OccupancyDistribution.all_in_class(params.ell, params.m, 0)
    result = run_trajectory(config, params, initial)
    freq_series = [result.class_freqs[r] for r in range(result.class_freqs.shape[0])]
    nk_series = [result.nk_over_m[r][:, None] for r in range(result.nk_over_m.shape[0])]
    burn_in = result.config.burn_in
    fm, fv, fs, fe, fn = _pool_batch_means(freq_series, batches)
    nm, nv, ns, ne, nn = _pool_batch_means(nk_series, batches)
    freq_est = EquilibriumEstimate(fm, fv, fs, fe, burn_in, fn)
    nk_est = EquilibriumEstimate(nm, nv, ns, ne, burn_in, nn)
    return freq_est, nk_est


# ---------------------------------------------------------------------------
# hitting times on the occupancy chain

_HIT_CHUNK = 1 << 14


def _hitting_kernel(counts, row_cdfs, sigma, K, uniforms, mode):
    """Run occupancy events until the stopping condition; returns the
    number of events consumed, or -1 if the chunk was exhausted.

    mode 0 stops when classes 0..K become occupied, mode 1 when they
    empty out.  Event sampling matches the trajectory kernel exactly.
    Written in the numba-compatible subset and compiled when available.
    """
    n_classes = counts.shape[0]
    m = 0
    for c in range(n_classes):
        m += counts[c]
    n = uniforms.shape[0]
    for e in range(n):
        target = int(uniforms[e, 0] * m)
        acc = 0
        k = 0
        while k < n_classes - 1:
            acc += counts[k]
            if target < acc:
                break
            k += 1
        n0 = counts[0]
        v = uniforms[e, 1] * (m + (sigma - 1.0) * n0)
        if v < sigma * n0:
            h = 0
        else:
            t2 = v - sigma * n0
            acc2 = 0.0
            h = 1
            while h < n_classes - 1:
                acc2 += counts[h]
                if t2 < acc2:
                    break
                h += 1
        u2 = uniforms[e, 2]
        if u2 == 0.0:
            l = 0
            while row_cdfs[h, l] <= 0.0 and l < n_classes - 1:
                l += 1
        else:
            l = int(np.searchsorted(row_cdfs[h], u2))
            if l >= n_classes:
                l = n_classes - 1
        counts[k] -= 1
        counts[l] += 1
        nk = 0
        for c in range(K + 1):
            nk += counts[c]
        if mode == 0:
            if nk >= 1:
                return e + 1
        else:
            if nk == 0:
                return e + 1
    return -1


try:  # pragma: no cover - exercised implicitly wherever available
    import numba

    _hitting_kernel = numba.njit(cache=False)(_hitting_kernel)
except ImportError:  # pragma: no cover
    pass


def _dense_row_cdfs(mh: LumpedMutationMatrix) -> np.ndarray:
    ell = mh.params.ell
    cdfs = np.empty((ell + 1, ell + 1))
    for b in range(ell + 1):
        cdfs[b] = mh.row_cdf(b)
    return cdfs


def _run_until(counts, cdfs, sigma, K, rng, mode, budget):
    """Events until the mode condition holds, or None if budget is hit."""
    t = 0
    while t < budget:
        n = int(min(_HIT_CHUNK, budget - t))
        uniforms = rng.random((n, 3))
        r = _hitting_kernel(counts, cdfs, sigma, K, uniforms, mode)
        if r >= 0:
            return t + int(r)
        t += n
    return None


def _finish_estimate(times, censored, scale, step_cap):
    if not times:
        raise CensoredError(
            "all %d replicas censored at the %d-step cap" % (censored, step_cap)
        )
    arr = np.asarray(times, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    log_scale = math.log(mean) / scale if mean > 0 else -math.inf
    return HittingTimeEstimate(
        mean=mean,
        standard_error=se,
        count=int(arr.size),
        log_scale_per_unit=log_scale,
        censored=censored,
        step_cap=step_cap,
    )


def estimate_discovery_time(
    params: Parameters,
    K: int,
    replicas: int,
    seed: int,
    step_cap: int = _DEFAULT_STEP_CAP,
    initial: OccupancyDistribution = None,
) -> HittingTimeEstimate:
    """Events until classes 0..K first hold an individual.

    Starts from all mass in class K+1 unless an initial state is given;
    an initial state already inside the target yields time 0.  The log
    scale reported is (1/ell) ln(mean)."""
    if not (0 <= K < params.ell):
        raise ValidationError("K must satisfy 0 <= K < ell")
    start = initial if initial is not None else OccupancyDistribution.exit_state(
        params.ell, params.m, K
    )
    if start.ell != params.ell or start.m != params.m:
        raise ValidationError("initial state does not match params")
    if start.n_k(K) >= 1:
        return HittingTimeEstimate(
            mean=0.0,
            standard_error=0.0,
            count=replicas,
            log_scale_per_unit=-math.inf,
            censored=0,
            step_cap=step_cap,
        )
    mh = lumped_mutation_matrix(params)
    cdfs = _dense_row_cdfs(mh)
    times = []
    censored = 0
    for rng in replica_generators(seed, replicas):
        counts = np.asarray(start.counts, dtype=np.int64).copy()
        t = _run_until(counts, cdfs, float(params.sigma), K, rng, 0, step_cap)
        if t is None:
            censored += 1
        else:
            times.append(t)
    return _finish_estimate(times, censored, params.ell, step_cap)


def estimate_persistence_time(
    params: Parameters,
    K: int,
    replicas: int,
    seed: int,
    step_cap: int = _DEFAULT_STEP_CAP,
    initial: OccupancyDistribution = None,
) -> HittingTimeEstimate:
    """Events between the discovery of classes 0..K and their next
    extinction, started (by default) from all mass in class K+1.

    The step cap covers a replica's whole run, discovery included.  The
    log scale reported is (1/m) ln(mean)."""
    if not (0 <= K < params.ell):
        raise ValidationError("K must satisfy 0 <= K < ell")
    start = initial if initial is not None else OccupancyDistribution.exit_state(
        params.ell, params.m, K
    )
    if start.ell != params.ell or start.m != params.m:
        raise ValidationError("initial state does not match params")
    mh = lumped_mutation_matrix(params)
    cdfs = _dense_row_cdfs(mh)
    times = []
    censored = 0
    for rng in replica_generators(seed, replicas):
        counts = np.asarray(start.counts, dtype=np.int64).copy()
        if start.n_k(K) >= 1:
            t_star = 0
        else:
            t_star = _run_until(counts, cdfs, float(params.sigma), K, rng, 0, step_cap)
        if t_star is None:
            censored += 1
            continue
        t_out = _run_until(
            counts, cdfs, float(params.sigma), K, rng, 1, step_cap - t_star
        )
        if t_out is None:
            censored += 1
        else:
            times.append(t_out)
    return _finish_estimate(times, censored, params.m, step_cap)


# ---------------------------------------------------------------------------
# exact solves on the E_K chains


def _substochastic_solve(P, keep, rhs):
    """Solve (I - P[keep, keep]) x = rhs on the kept index set."""
    sub = P[keep][:, keep]
    A = sparse.identity(len(keep), format="csr") - sub
    x = spsolve(A.tocsc(), rhs)
    return np.atleast_1d(x)


def ek_mean_hitting_times(ekm: EKTransitionMatrix, target) -> dict:
    """Expected steps to reach the target set for every other state,
    by one sparse linear solve on the modified chain."""
    target = {tuple(z) for z in target}
    if not target:
        raise ValidationError("target set is empty")
    keep = [i for i, z in enumerate(ekm.states) if z not in target]
    if not keep:
        return {}
    h = _substochastic_solve(ekm.matrix, keep, np.ones(len(keep)))
    if np.any(~np.isfinite(h)) or np.any(h < 0):
        raise NumericError("hitting-time solve produced invalid values")
    return {ekm.states[i]: float(v) for i, v in zip(keep, h)}


def ek_stationary(ekm: EKTransitionMatrix):
    """Stationary law of the modified chain on its recurrent class.

    Returns (states, weights); states with z_0 = 0 other than the zero
    vector are transient and get weight 0."""
    zero = ekm.zero_state
    keep = [i for i, z in enumerate(ekm.states) if z[0] >= 1 or z == zero]
    sub = ekm.matrix[keep][:, keep]
    n = len(keep)
    A = (sub.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    nu = spsolve(A.tocsc(), b)
    nu = np.maximum(np.atleast_1d(nu), 0.0)
    nu /= nu.sum()
    weights = np.zeros(len(ekm.states))
    for pos, i in enumerate(keep):
        weights[i] = nu[pos]
    return ekm.states, weights


def uk_window_states(ekm: EKTransitionMatrix, rho_star, delta: float):
    """States z with |z_k/m - rho*_k| <= delta for every coordinate."""
    m = ekm.params.m
    rho_star = tuple(rho_star)
    if len(rho_star) != ekm.K + 1:
        raise ValidationError("need one rho*_k per tracked class")
    out = []
    for z in ekm.states:
        if all(abs(z[k] / m - rho_star[k]) <= delta for k in range(ekm.K + 1)):
            out.append(z)
    return out


def occupancy_transition_matrix(params: Parameters, max_states: int = _EXACT_CAP):
    """One-step law of the occupancy chain on all ell+1 classes.

    Returns (states, P) where states are the C(m+ell, ell) full count
    tuples and P is sparse CSR.  Unlike the bounded-window chain this
    has no modified boundary and no class cap, so it is only usable on
    small instances.
    """
    ell, m = params.ell, params.m
    n = math.comb(m + ell, ell)
    if n > max_states:
        raise CapacityError(
            "occupancy chain has C(%d, %d) = %d states, above the cap %d"
            % (m + ell, ell, n, max_states)
        )
    states = tuple(z + (m - sum(z),) for z in enumerate_ek(m, ell - 1))
    index = {z: i for i, z in enumerate(states)}
    mh = lumped_mutation_matrix(params)
    M = np.vstack([mh.row(b) for b in range(ell + 1)])
    sigma = params.sigma
    rows, cols, vals = [], [], []
    for i, o in enumerate(states):
        denom = (sigma - 1.0) * o[0] + m
        w = np.array(o, dtype=float)
        w[0] *= sigma
        child = (w / denom) @ M
        for k in range(ell + 1):
            if o[k] == 0:
                continue
            pk = o[k] / m
            for j in range(ell + 1):
                if child[j] == 0.0:
                    continue
                nxt = list(o)
                nxt[k] -= 1
                nxt[j] += 1
                rows.append(i)
                cols.append(index[tuple(nxt)])
                vals.append(pk * child[j])
    P = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return states, P


def occupancy_stationary(params: Parameters, max_states: int = _EXACT_CAP):
    """Stationary law of the full occupancy chain by sparse solve."""
    states, P = occupancy_transition_matrix(params, max_states=max_states)
    return states, _stationary(P)


# ---------------------------------------------------------------------------
# the renewal decomposition


@dataclass(frozen=True)
class RenewalDecomposition:
    """The five ingredients of the stationary-law decomposition and the
    identity residual.

    left_side is the stationary integral of f(N_K/m) under the bounding
    process; right_side the assembled excursion expression
    excursion_integral/(tau_star + tau0) + (1 + tau0)/(tau_star + tau0)
    times nu_integral.  In exact mode the residual is a pure
    linear-algebra roundoff; in Monte Carlo mode standard_errors carries
    the propagated uncertainties.
    """

    theta: BoundingChainKind
    params: Parameters
    K: int
    mode: str
    tau_star_mean: float
    tau0_mean: float
    excursion_integral: float
    nu_integral: float
    left_side: float
    right_side: float
    residual: float
    standard_errors: dict = field(default_factory=dict)


def _enumerate_masterless(ell: int, m: int):
    """All occupancy tuples with o(0) = 0, mass m over classes 1..ell."""
    states = []

    def rec(prefix, remaining, cls):
        if cls == ell:
            states.append(prefix + (remaining,))
            return
        for c in range(remaining + 1):
            rec(prefix + (c,), remaining - c, cls + 1)

    rec((0,), m, 1)
    return states


def _exit_tuple(theta: BoundingChainKind, ell: int, m: int):
    if theta is BoundingChainKind.LOWER:
        return OccupancyDistribution.lower_exit(ell, m).counts
    return OccupancyDistribution.upper_exit(ell, m).counts


class _RestrictedChain:
    """The bounding occupancy process restricted to masterless states
    plus the embedded E_K block, as one sparse transition matrix.

    States are the masterless occupancy tuples followed by the E_K
    states with z_0 >= 1.  Master births in the masterless block are
    rerouted to the entry state of the E_K block; the E_K block's exit
    mass lands on the theta exit state.
    """

    def __init__(self, theta: BoundingChainKind, params: Parameters, K: int,
                 mh: LumpedMutationMatrix, ekm: EKTransitionMatrix):
        ell, m, sigma = params.ell, params.m, params.sigma
        self.theta = theta
        self.params = params
        self.K = K
        self.ekm = ekm
        self.n_states = _enumerate_masterless(ell, m)
        self.n_index = {o: i for i, o in enumerate(self.n_states)}
        self.w_states = [z for z in ekm.states if z[0] >= 1]
        self.w_index = {z: len(self.n_states) + i for i, z in enumerate(self.w_states)}
        self.exit_idx = self.n_index[_exit_tuple(theta, ell, m)]
        self.entry_idx = self.w_index[ekm.entry_state]
        n_total = len(self.n_states) + len(self.w_states)

        M = mh.entries
        rows, cols, vals = [], [], []
        for oi, o in enumerate(self.n_states):
            occ = np.asarray(o, dtype=float)
            # child-class law: parent proportional to occupancy (fitness
            # trivial with no master), child from the parent's row
            w = occ[1:] @ M[1:] / m
            for k in range(1, ell + 1):
                if o[k] == 0:
                    continue
                pk = o[k] / m
                for l in range(1, ell + 1):
                    pr = pk * w[l]
                    if pr > 0.0:
                        t = list(o)
                        t[k] -= 1
                        t[l] += 1
                        rows.append(oi)
                        cols.append(self.n_index[tuple(t)])
                        vals.append(pr)
            if w[0] > 0.0:
                rows.append(oi)
                cols.append(self.entry_idx)
                vals.append(float(w[0]))
        zero = ekm.zero_state
        for z in self.w_states:
            zi = self.w_index[z]
            row = ekm.matrix.getrow(ekm.index_of(z))
            for j, pr in zip(row.indices, row.data):
                zt = ekm.states[j]
                rows.append(zi)
                if zt == zero:
                    cols.append(self.exit_idx)
                else:
                    cols.append(self.w_index[zt])
                vals.append(float(pr))
        self.matrix = sparse.coo_matrix(
            (vals, (rows, cols)), shape=(n_total, n_total)
        ).tocsr()

    def nk_fraction(self, idx: int) -> float:
        if idx < len(self.n_states):
            o = self.n_states[idx]
            return sum(o[: self.K + 1]) / self.params.m
        z = self.w_states[idx - len(self.n_states)]
        return sum(z) / self.params.m


def _stationary(P) -> np.ndarray:
    n = P.shape[0]
    A = (P.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    mu = np.atleast_1d(spsolve(A.tocsc(), b))
    mu = np.maximum(mu, 0.0)
    return mu / mu.sum()


def _renewal_exact(theta, params, K, f, mh, ekm):
    chain = _RestrictedChain(theta, params, K, mh, ekm)
    P = chain.matrix
    nN = len(chain.n_states)
    f_all = np.array([f(chain.nk_fraction(i)) for i in range(P.shape[0])])

    # masterless block: expected entry time and f-sum from the exit state
    keepN = list(range(nN))
    tau_star = _substochastic_solve(P, keepN, np.ones(nN))
    f_excursion = _substochastic_solve(P, keepN, f_all[:nN])
    e_tau_star = float(tau_star[chain.exit_idx])
    e_excursion = float(f_excursion[chain.exit_idx])

    # E_K block: expected exit time and f-sum from the entry state
    keepW = list(range(nN, P.shape[0]))
    tau0 = _substochastic_solve(P, keepW, np.ones(len(keepW)))
    f_w = _substochastic_solve(P, keepW, f_all[nN:])
    e_tau0 = float(tau0[chain.entry_idx - nN])
    e_fw = float(f_w[chain.entry_idx - nN])

    nu_integral = e_fw / (1.0 + e_tau0)
    denom = e_tau_star + e_tau0
    right = e_excursion / denom + (1.0 + e_tau0) / denom * nu_integral

    mu = _stationary(P)
    left = float(mu @ f_all)
    return RenewalDecomposition(
        theta=theta,
        params=params,
        K=K,
        mode="exact",
        tau_star_mean=e_tau_star,
        tau0_mean=e_tau0,
        excursion_integral=e_excursion,
        nu_integral=nu_integral,
        left_side=left,
        right_side=right,
        residual=left - right,
    )


class _RowSampler:
    """Per-row inverse-CDF sampling with cached cumulative rows."""

    def __init__(self, P):
        self.indices = []
        self.cdfs = []
        indptr, indices, data = P.indptr, P.indices, P.data
        for i in range(P.shape[0]):
            lo, hi = indptr[i], indptr[i + 1]
            self.indices.append(indices[lo:hi])
            self.cdfs.append(np.cumsum(data[lo:hi]))

    def step(self, i, rng):
        cdf = self.cdfs[i]
        pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        idx = self.indices[i]
        return int(idx[min(pick, len(idx) - 1)])


def _renewal_mc(theta, params, K, f, mh, ekm, config, batches):
    chain = _RestrictedChain(theta, params, K, mh, ekm)
    P = chain.matrix
    f_all = np.array([f(chain.nk_fraction(i)) for i in range(P.shape[0])])
    nN = len(chain.n_states)
    sampler = _RowSampler(P)
    rng_left, rng_cycles = replica_generators(config.seed, 2)

    # left side: long-run average over an independent trajectory
    burn_in = config.burn_in if config.burn_in is not None else config.steps // 10
    idx = chain.exit_idx
    samples = []
    for t in range(1, config.steps + 1):
        idx = sampler.step(idx, rng_left)
        if t > burn_in:
            samples.append(f_all[idx])
    left_mean, _, left_se, _, _ = _pool_batch_means(
        [np.asarray(samples)[:, None]], batches
    )
    left = float(left_mean[0])

    # right side: renewal cycles from the exit state
    n_cycles = config.replicas
    a = np.empty(n_cycles)  # f-sum over the masterless leg
    b = np.empty(n_cycles)  # its length tau*
    c = np.empty(n_cycles)  # f-sum over the E_K leg
    d = np.empty(n_cycles)  # its length tau0
    for cyc in range(n_cycles):
        idx = chain.exit_idx
        fs = 0.0
        steps = 0
        while idx < nN:
            fs += f_all[idx]
            idx = sampler.step(idx, rng_cycles)
            steps += 1
        a[cyc] = fs
        b[cyc] = steps
        fs = 0.0
        steps = 0
        while idx >= nN:
            fs += f_all[idx]
            idx = sampler.step(idx, rng_cycles)
            steps += 1
        c[cyc] = fs
        d[cyc] = steps
    u = a + c
    v = b + d
    right = float(u.mean() / v.mean())
    # delta-method standard error of the ratio estimator
    vu = np.cov(u, v, ddof=1)
    se_right = math.sqrt(
        max(
            (vu[0, 0] - 2 * right * vu[0, 1] + right * right * vu[1, 1])
            / (n_cycles * v.mean() ** 2),
            0.0,
        )
    )
    tau0_mean = float(d.mean())
    return RenewalDecomposition(
        theta=theta,
        params=params,
        K=K,
        mode="mc",
        tau_star_mean=float(b.mean()),
        tau0_mean=tau0_mean,
        excursion_integral=float(a.mean()),
        nu_integral=float(c.mean()) / (1.0 + tau0_mean),
        left_side=left,
        right_side=right,
        residual=left - right,
        standard_errors={
            "left_side": float(left_se[0]),
            "right_side": se_right,
            "residual": math.sqrt(float(left_se[0]) ** 2 + se_right ** 2),
        },
    )


def renewal_decomposition(
    theta: BoundingChainKind,
    params: Parameters,
    K: int,
    config: SimulationConfig = None,
    f=None,
    mode: str = "auto",
    batches: int = 32,
    max_states: int = _EXACT_CAP,
) -> RenewalDecomposition:
    """Decompose the stationary integral of f(N_K/m) under the bounding
    process into excursion ingredients and check the identity.

    f must vanish at 0 (the decomposition drops an f(0) term); default
    is the identity.  Exact sparse solves are used when the restricted
    state space is small enough, Monte Carlo otherwise (config required).
    """
    if f is None:
        f = lambda x: x
    if f(0.0) != 0.0:
        raise ValidationError("f(0) must be 0 for the decomposition to close")
    ell, m = params.ell, params.m
    n_total = math.comb(m + ell - 1, ell - 1) + (
        math.comb(m + K + 1, K + 1) - math.comb(m + K, K + 1)
    )
    if mode == "auto":
        mode = "exact" if n_total < max_states else "mc"
    if mode not in ("exact", "mc"):
        raise ValidationError("mode must be auto, exact or mc")
    if mode == "exact" and n_total >= max_states:
        raise CapacityError(
            "restricted chain has %d states, above the cap %d" % (n_total, max_states)
        )
    mh = lumped_mutation_matrix(params)
    ekm = ek_transition_matrix(theta, params, K)
    if mode == "exact":
        return _renewal_exact(theta, params, K, f, mh, ekm)
    if config is None:
        raise ValidationError("Monte Carlo mode needs a SimulationConfig")
    if config.replicas < 2:
        raise ValidationError(
            "Monte Carlo mode uses config.replicas as the renewal cycle count; "
            "need at least 2 for a standard error"
        )
    return _renewal_mc(theta, params, K, f, mh, ekm, config, batches)


# ---------------------------------------------------------------------------
# JSON result records


def _format_floats(obj):
    if isinstance(obj, dict):
        return {k: _format_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_format_floats(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float("%.17g" % float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_format_floats(v) for v in obj.tolist()]
    return obj


def json_record(kind: str, params: Parameters, payload: dict, seed=None) -> dict:
    """Experiment result record: resolved parameters, seed, payload and
    wall clock.  wall_clock_s is informational and excluded from
    byte-identity comparisons."""
    record = {
        "kind": kind,
        "parameters": {
            "ell": params.ell,
            "m": params.m,
            "q": params.q,
            "sigma": params.sigma,
            "kappa": params.kappa,
            "K": params.K,
            "a": params.a,
            "alpha": params.alpha,
        },
        "seed": seed,
        "payload": payload,
        "wall_clock_s": time.time(),
    }
    return _format_floats(record)


def write_json_record(path, record: dict) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
