"""Monotone bounding dynamics for the occupancy chain.

The occupancy chain is sandwiched pathwise between a lower and an upper
process driven by shared randomness.  Outside the master-present region
all three move identically; once a master appears, the lower process
dumps every class above K to the bottom class ell (and redirects any
downward mutation there), while the upper process folds classes above
K+1 onto K+1 and replaces every downward mutation probability by the
one-step repair probability M_H(c+1, c).

While masters are present, the occupancy numbers of classes 0..K of
either bounding process form a Markov chain on

    E_K = { z in N^{K+1} : z_0 + ... + z_K <= m },

whose transition matrix is built here explicitly, together with the
boundary modification: from any state with z_0 = 0 the chain jumps to
its entry state, and the exit from {z_0 >= 1} is collapsed onto the
zero vector.  The entry states follow the construction of the processes
(lower (1,0,...,0), upper (1,m-1,0,...,0)); one later display in the
source analysis swaps the two, which is inconsistent with the process
definitions and is deliberately not followed.

The last part of the module carries the class-k conditioned birth-death
rates delta_i(rho), gamma_i(rho), their window extremes, and the
coupling map C used to compare the conditioned coordinate with constant
birth-death chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import product

import numpy as np
from scipy import sparse

from .birthdeath import BirthDeathSpec
from .core import (
    ClassVector,
    OccupancyDistribution,
    Parameters,
    project_lower,
    project_upper,
)
from .errors import CapacityError, ValidationError
from .kernels import (
    LumpedMutationMatrix,
    ModifiedMutationMatrix,
    per_locus_class_mutation,
    sample_class_mutation,
)


class BoundingChainKind(Enum):
    """Which bounding process: LOWER sends strays to class ell, UPPER
    folds them onto class K+1."""

    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class FullRecord:
    """One step of shared randomness (s, i, j, u_1..u_ell): s selects the
    parent class, j the dying individual, the u_k drive the per-locus
    mutation.  i is carried along unused, for fidelity to the coupling
    space of the sequence-level construction."""

    s: float
    i: int
    j: int
    us: tuple


@dataclass(frozen=True)
class SingleRecord:
    """Like FullRecord but with one uniform u driving the inverse-CDF
    class mutation."""

    s: float
    i: int
    j: int
    u: float


def draw_full_record(rng, m: int, ell: int) -> FullRecord:
    return FullRecord(
        s=float(rng.random()),
        i=int(rng.integers(1, m + 1)),
        j=int(rng.integers(1, m + 1)),
        us=tuple(rng.random(ell)),
    )


def draw_single_record(rng, m: int) -> SingleRecord:
    return SingleRecord(
        s=float(rng.random()),
        i=int(rng.integers(1, m + 1)),
        j=int(rng.integers(1, m + 1)),
        u=float(rng.random()),
    )


def selection_class(o: OccupancyDistribution, s: float, sigma: float) -> int:
    """Parent class: the unique l whose cumulative fitness-weighted
    occupancy straddles s times the total weight."""
    if not (0.0 <= s <= 1.0):
        raise ValidationError("s must lie in [0, 1]")
    w = np.asarray(o.counts, dtype=float)
    w[0] *= sigma
    cw = np.cumsum(w)
    side = "right" if s == 0.0 else "left"
    return min(int(np.searchsorted(cw, s * cw[-1], side=side)), o.ell)


def dying_class(o: OccupancyDistribution, j: int) -> int:
    """Class of the j-th individual (individuals ordered by class)."""
    if not (1 <= j <= o.m):
        raise ValidationError("j must lie in 1..m")
    cum = np.cumsum(o.counts)
    return int(np.searchsorted(cum, j, side="left"))


def phi_occupancy(o: OccupancyDistribution, r: FullRecord, params: Parameters):
    """The coupled occupancy step: dying class from j, parent class from
    s, child class from the per-locus mutation map."""
    l = selection_class(o, r.s, params.sigma)
    k = dying_class(o, r.j)
    c = per_locus_class_mutation(l, r.us, params)
    return o.transfer(k, c)


def phi_occupancy_under(o: OccupancyDistribution, r: FullRecord, params: Parameters):
    """Like phi_occupancy but any downward mutation is sent to class ell."""
    l = selection_class(o, r.s, params.sigma)
    k = dying_class(o, r.j)
    c = per_locus_class_mutation(l, r.us, params)
    if c < l:
        c = params.ell
    return o.transfer(k, c)


def phi_occupancy_prime(o: OccupancyDistribution, r: SingleRecord, matrix):
    """Single-uniform coupled step: the child class is the inverse-CDF
    sample from the parent row of the given kernel (plain or modified)."""
    params = matrix.params
    l = selection_class(o, r.s, params.sigma)
    k = dying_class(o, r.j)
    c = sample_class_mutation(l, r.u, matrix)
    return o.transfer(k, c)


def phi_occupancy_prime_under(o: OccupancyDistribution, r: SingleRecord, matrix):
    """Single-uniform variant of the underline map: inverse-CDF child,
    redirected to class ell when it falls below the parent class.  Same
    law as the per-locus underline map, and pathwise below
    phi_occupancy_prime on shared records."""
    params = matrix.params
    l = selection_class(o, r.s, params.sigma)
    k = dying_class(o, r.j)
    c = sample_class_mutation(l, r.u, matrix)
    if c < l:
        c = params.ell
    return o.transfer(k, c)


def lower_step(
    o: OccupancyDistribution, r: FullRecord, K: int, mh: LumpedMutationMatrix
) -> OccupancyDistribution:
    """One step of the lower process (per-locus records).

    No master present: follow the plain coupled step, entering at
    (1,0,...,0,m-1) if a master appears.  Master present: project onto
    classes 0..K plus ell, apply the underline map, exit to (0,...,0,m)
    if the master dies out."""
    params = mh.params
    ell, m = params.ell, params.m
    if o.counts[0] == 0:
        nxt = phi_occupancy(o, r, params)
        if nxt.counts[0] >= 1:
            return OccupancyDistribution.lower_enter(ell, m)
        return nxt
    under = phi_occupancy_under(project_lower(o, K), r, params)
    if under.counts[0] == 0:
        return OccupancyDistribution.lower_exit(ell, m)
    return project_lower(under, K)


def lower_step_single(
    o: OccupancyDistribution, r: SingleRecord, K: int, mh: LumpedMutationMatrix
) -> OccupancyDistribution:
    """Single-uniform lower step, for triple couplings on shared
    SingleRecord streams; law-identical to lower_step."""
    params = mh.params
    ell, m = params.ell, params.m
    if o.counts[0] == 0:
        nxt = phi_occupancy_prime(o, r, mh)
        if nxt.counts[0] >= 1:
            return OccupancyDistribution.lower_enter(ell, m)
        return nxt
    under = phi_occupancy_prime_under(project_lower(o, K), r, mh)
    if under.counts[0] == 0:
        return OccupancyDistribution.lower_exit(ell, m)
    return project_lower(under, K)


def upper_step(
    o: OccupancyDistribution,
    r: SingleRecord,
    K: int,
    mh: LumpedMutationMatrix,
    modified: ModifiedMutationMatrix,
) -> OccupancyDistribution:
    """One step of the upper process (single-uniform records).

    No master: plain inverse-CDF step, entering at (1,m-1,0,...,0) if a
    master appears.  Master present: project onto classes 0..K+1, apply
    the modified-kernel step, exit to (0,m,0,...,0) if the master dies."""
    params = mh.params
    ell, m = params.ell, params.m
    if o.counts[0] == 0:
        nxt = phi_occupancy_prime(o, r, mh)
        if nxt.counts[0] >= 1:
            return OccupancyDistribution.upper_enter(ell, m)
        return nxt
    bar = phi_occupancy_prime(project_upper(o, K), r, modified)
    if bar.counts[0] == 0:
        return OccupancyDistribution.upper_exit(ell, m)
    return project_upper(bar, K)


# ---------------------------------------------------------------------------
# the induced chains on E_K

_EK_CAP = 200_000


def enumerate_ek(m: int, K: int):
    """All z in N^{K+1} with z_0+...+z_K <= m, lexicographic."""
    states = []

    def rec(prefix, remaining, depth):
        if depth == K:
            for z in range(remaining + 1):
                states.append(prefix + (z,))
            return
        for z in range(remaining + 1):
            rec(prefix + (z,), remaining - z, depth + 1)

    rec((), m, 0)
    return states


@dataclass(frozen=True)
class EKTransitionMatrix:
    """The chain of (occupancy of classes 0..K) for a bounding process
    while masters are present, with the boundary modification: z_0 = 0
    jumps to the entry state, exits land on the zero vector.

    matrix is the modified transition kernel p^theta; unmodified the raw
    p whose boundary rows are not rerouted.  states[i] is the tuple for
    row/column i."""

    theta: BoundingChainKind
    params: Parameters
    K: int
    states: tuple
    index: dict = field(repr=False)
    matrix: object = field(repr=False)
    unmodified: object = field(repr=False)

    @property
    def entry_state(self) -> tuple:
        if self.theta is BoundingChainKind.LOWER:
            return ClassVector.entry_lower(self.K, self.params.m).z
        return ClassVector.entry_upper(self.K, self.params.m).z

    @property
    def zero_state(self) -> tuple:
        return (0,) * (self.K + 1)

    def index_of(self, z) -> int:
        return self.index[tuple(z)]


def _mutation_block(theta: BoundingChainKind, mh, modified, K: int):
    """B[l][i] = relevant mutation probability from source class l to
    target i, l in 0..K plus the merged remainder row at index K+1."""
    B = np.zeros((K + 2, K + 1))
    for i in range(K + 1):
        for l in range(K + 1):
            if theta is BoundingChainKind.LOWER:
                # downward moves are rerouted to ell: only l <= i feeds i
                B[l, i] = mh.entry(l, i) if l <= i else 0.0
            else:
                B[l, i] = modified.entry(l, i)
        B[K + 1, i] = 0.0 if theta is BoundingChainKind.LOWER else modified.entry(K + 1, i)
    return B


def ek_transition_matrix(
    theta: BoundingChainKind, params: Parameters, K: int, max_states: int = _EK_CAP
) -> EKTransitionMatrix:
    """Build p and p^theta on E_K as sparse matrices.

    Raises a capacity error when |E_K| = C(m+K+1, K+1) exceeds
    max_states."""
    m, sigma = params.m, params.sigma
    if K + 2 > params.ell:
        raise ValidationError("need K + 2 <= ell")
    n_states = math.comb(m + K + 1, K + 1)
    if n_states > max_states:
        raise CapacityError(
            "|E_K| = C(%d, %d) = %d exceeds the cap %d"
            % (m + K + 1, K + 1, n_states, max_states)
        )
    mh = LumpedMutationMatrix(params)
    modified = (
        ModifiedMutationMatrix(mh, K) if theta is BoundingChainKind.UPPER else None
    )
    B = _mutation_block(theta, mh, modified, K)
    states = enumerate_ek(m, K)
    index = {z: i for i, z in enumerate(states)}
    if theta is BoundingChainKind.LOWER:
        entry = ClassVector.entry_lower(K, m).z
    else:
        entry = ClassVector.entry_upper(K, m).z
    zero = (0,) * (K + 1)

    def attraction(z, target):
        # fitness-weighted mutation flow into class `target`
        s = sigma * z[0] * B[0, target]
        for l in range(1, K + 1):
            s += z[l] * B[l, target]
        s += (m - sum(z)) * B[K + 1, target]
        return s

    def leave_weight(z):
        # flow out of classes 0..K: per parent, 1 - mass kept in 0..K
        kept0 = B[0, : K + 1].sum()
        s = sigma * z[0] * (1.0 - kept0)
        for l in range(1, K + 1):
            s += z[l] * (1.0 - B[l, : K + 1].sum())
        s += (m - sum(z)) * (1.0 - B[K + 1, : K + 1].sum())
        return s

    raw_r, raw_c, raw_v = [], [], []
    mod_r, mod_c, mod_v = [], [], []

    def put(rows, cols, vals, ri, ci, pr):
        rows.append(ri)
        cols.append(ci)
        vals.append(pr)

    for zi, z in enumerate(states):
        tot = sum(z)
        den = m * ((sigma - 1.0) * z[0] + m)
        moves = {}
        if 0 < tot:
            for i in range(K + 1):
                if tot < m:
                    up = (m - tot) * attraction(z, i) / den
                    if up > 0.0:
                        zp = list(z)
                        zp[i] += 1
                        moves[tuple(zp)] = moves.get(tuple(zp), 0.0) + up
                if z[i] >= 1:
                    down = z[i] * leave_weight(z) / den
                    if down > 0.0:
                        zp = list(z)
                        zp[i] -= 1
                        moves[tuple(zp)] = moves.get(tuple(zp), 0.0) + down
                    for jj in range(K + 1):
                        if jj == i:
                            continue
                        tr = z[i] * attraction(z, jj) / den
                        if tr > 0.0:
                            zp = list(z)
                            zp[i] -= 1
                            zp[jj] += 1
                            moves[tuple(zp)] = moves.get(tuple(zp), 0.0) + tr
        off = sum(moves.values())
        put(raw_r, raw_c, raw_v, zi, zi, 1.0 - off)
        for zp, pr in moves.items():
            put(raw_r, raw_c, raw_v, zi, index[zp], pr)
        # the rerouted kernel: duplicate (row, col) pairs are summed when
        # the COO triplets are converted to CSR
        if z[0] == 0:
            put(mod_r, mod_c, mod_v, zi, index[entry], 1.0)
        elif z[0] == 1:
            put(mod_r, mod_c, mod_v, zi, zi, 1.0 - off)
            for zp, pr in moves.items():
                target = zero if zp[0] == 0 else zp
                put(mod_r, mod_c, mod_v, zi, index[target], pr)
        else:
            put(mod_r, mod_c, mod_v, zi, zi, 1.0 - off)
            for zp, pr in moves.items():
                put(mod_r, mod_c, mod_v, zi, index[zp], pr)

    shape = (n_states, n_states)
    raw = sparse.coo_matrix((raw_v, (raw_r, raw_c)), shape=shape).tocsr()
    mod = sparse.coo_matrix((mod_v, (mod_r, mod_c)), shape=shape).tocsr()
    return EKTransitionMatrix(
        theta=theta,
        params=params,
        K=K,
        states=tuple(states),
        index=index,
        matrix=mod,
        unmodified=raw,
    )


def sample_ek_path(ekm: EKTransitionMatrix, steps: int, rng, start=None):
    """Sample a path of the modified chain; returns (states, events) with
    events in {"enter", "interior", "exit"}."""
    z = ekm.entry_state if start is None else tuple(start)
    idx = ekm.index_of(z)
    mat = ekm.matrix
    path = [z]
    events = ["enter" if z == ekm.entry_state else "interior"]
    for _ in range(steps):
        row = mat.getrow(idx)
        cols = row.indices
        cdf = np.cumsum(row.data)
        pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        prev = path[-1]
        idx = int(cols[min(pick, len(cols) - 1)])
        z = ekm.states[idx]
        path.append(z)
        if z == ekm.zero_state:
            events.append("exit")
        elif prev[0] == 0:
            events.append("enter")
        else:
            events.append("interior")
    return path, events


def write_excursions_csv(path, states, events) -> None:
    """CSV log "t,z0,...,zK,event" of an E_K chain path."""
    K = len(states[0]) - 1
    cols = ",".join("z%d" % i for i in range(K + 1))
    with open(path, "w") as fh:
        fh.write("t,%s,event\n" % cols)
        for t, (z, ev) in enumerate(zip(states, events)):
            fh.write("%d,%s,%s\n" % (t, ",".join(str(c) for c in z), ev))


# ---------------------------------------------------------------------------
# conditioned birth-death rates for one coordinate of the E_K chain


@dataclass(frozen=True)
class ConditionedRates:
    """The up/down rates of coordinate k of the E_K chain as functions of
    the frozen fractions rho = (rho_0..rho_{k-1}) and the count i.

    delta(rho, i) is the probability that coordinate k gains an
    individual, gamma(rho, i) that it loses one, given z_l = rho_l m for
    l < k and z_k = i; the expressions do not depend on z_{k+1..K}.  By
    convention delta(rho, m) = 0 and gamma(rho, 0) = 0.  Values are
    clipped to [0, 1]: outside the feasible set (sum rho + i/m > 1) the
    algebraic expressions can stray out of range.
    """

    k: int
    theta: BoundingChainKind
    m: int
    sigma: float
    betas: tuple  # M_H(l, k) for l = 0..k
    eps: float  # merged probability from classes above k into k

    def _sums(self, rho, i):
        if len(rho) != self.k:
            raise ValidationError("need one rho per class below k")
        if not (0 <= i <= self.m):
            raise ValidationError("i must lie in 0..m")
        eta = i / self.m
        if self.k == 0:
            up = self.sigma * eta * self.betas[0] + (1.0 - eta) * self.eps
            down = self.sigma * eta * (1.0 - self.betas[0]) + (1.0 - eta) * (
                1.0 - self.eps
            )
            pref = (self.sigma - 1.0) * eta + 1.0
            return eta, up / pref, down / pref
        s = math.fsum(rho)
        rest = 1.0 - s - eta
        up = (
            self.sigma * rho[0] * self.betas[0]
            + math.fsum(rho[l] * self.betas[l] for l in range(1, self.k))
            + eta * self.betas[self.k]
            + rest * self.eps
        )
        down = (
            self.sigma * rho[0] * (1.0 - self.betas[0])
            + math.fsum(rho[l] * (1.0 - self.betas[l]) for l in range(1, self.k))
            + eta * (1.0 - self.betas[self.k])
            + rest * (1.0 - self.eps)
        )
        pref = (self.sigma - 1.0) * rho[0] + 1.0
        return eta, up / pref, down / pref

    def delta(self, rho, i: int) -> float:
        if i == self.m:
            return 0.0
        eta, up, _ = self._sums(rho, i)
        return min(max((1.0 - eta) * up, 0.0), 1.0)

    def gamma(self, rho, i: int) -> float:
        if i == 0:
            return 0.0
        eta, _, down = self._sums(rho, i)
        return min(max(eta * down, 0.0), 1.0)


def conditioned_rates(
    k: int, theta: BoundingChainKind, mh: LumpedMutationMatrix
) -> ConditionedRates:
    """Rates of coordinate k for the chosen bounding chain.

    The merged remainder probability is 0 for the lower chain (strays
    fall to class ell and never return) and the one-step repair
    probability M_H(k+1, k) for the upper chain."""
    params = mh.params
    if k < 0 or k + 1 > params.ell:
        raise ValidationError("k out of range")
    betas = tuple(mh.entry(l, k) for l in range(k + 1))
    eps = 0.0 if theta is BoundingChainKind.LOWER else mh.entry(k + 1, k)
    return ConditionedRates(
        k=k, theta=theta, m=params.m, sigma=params.sigma, betas=betas, eps=eps
    )


def coupling_map_C(rho, i: int, u: float, rates: ConditionedRates) -> int:
    """C(rho, i, u) = i - 1_{u < gamma_i(rho)} + 1_{u > 1 - delta_i(rho)};
    steps down on small u, up on large u, holds in between."""
    if not (0.0 <= u <= 1.0):
        raise ValidationError("u must lie in [0, 1]")
    out = i
    if u < rates.gamma(rho, i):
        out -= 1
    if u > 1.0 - rates.delta(rho, i):
        out += 1
    return out


def bd_coupling_map(spec: BirthDeathSpec, i: int, u: float) -> int:
    """The same threshold map with constant rates from a BirthDeathSpec."""
    if not (0 <= i <= spec.m):
        raise ValidationError("i must lie in 0..m")
    out = i
    if i >= 1 and u < spec.gamma_at(i):
        out -= 1
    if i <= spec.m - 1 and u > 1.0 - spec.delta_at(i):
        out += 1
    return out


def master_class_chain(theta: BoundingChainKind, mh: LumpedMutationMatrix) -> BirthDeathSpec:
    """The master-class (k = 0) birth-death chain of the bounding
    process, boundary rule included: delta_0 = 1 (the chain re-enters
    immediately after the master dies out)."""
    rates = conditioned_rates(0, theta, mh)
    m = mh.params.m
    delta = [1.0] + [rates.delta((), i) for i in range(1, m)]
    gamma = [rates.gamma((), i) for i in range(1, m + 1)]
    return BirthDeathSpec(m=m, delta=tuple(delta), gamma=tuple(gamma))


def _window_corners(rho_star, radius: float, k: int):
    """All 2^k corner points of the window around rho_star, clipped to
    [0, 1]."""
    corners = []
    for offs in product((-radius, radius), repeat=k):
        corners.append(
            tuple(min(max(rho_star[l] + offs[l], 0.0), 1.0) for l in range(k))
        )
    return corners


def _tailored_corners(rho_star, radius: float, k: int, rates, minimize_delta: bool):
    """Two candidate corners attaining the requested delta extreme (and
    the opposite gamma extreme): each rho_l (l >= 1) is monotone with
    direction sign(beta_l - eps), while the rho_0 direction flips once
    in i, so both rho_0 ends are kept."""
    lo = [max(r - radius, 0.0) for r in rho_star]
    hi = [min(r + radius, 1.0) for r in rho_star]
    rest = []
    for l in range(1, k):
        increasing = rates.betas[l] >= rates.eps
        rest.append(lo[l] if increasing == minimize_delta else hi[l])
    return [tuple([lo[0]] + rest), tuple([hi[0]] + rest)]


def coupled_bd_bounds(
    k: int,
    theta: BoundingChainKind,
    delta_prime: float,
    rho_star,
    mh: LumpedMutationMatrix,
):
    """Constant-rate envelopes of the conditioned rates over the window
    of radius 2*delta_prime around rho_star = (rho*_0..rho*_{k-1}).

    Returns (lower, upper): the lower spec takes the minimal up rate and
    maximal down rate over the window (and vice versa), so that the
    coupled chains sandwich the conditioned coordinate while the frozen
    coordinates stay inside the window.  Extremes are exact: the rates
    are monotone in every rho_l, so they are attained at window corners,
    all 2^k of which are evaluated for k <= 8.  Beyond that the corner
    set is trimmed by the derivative signs: the rates are monotone in
    rho_l (l >= 1) with a fixed direction, while the direction in rho_0
    flips once at a switch index i*.
    """
    params = mh.params
    m = params.m
    rho_star = tuple(float(r) for r in rho_star)
    if len(rho_star) != k:
        raise ValidationError("need one rho*_l per class below k")
    if delta_prime <= 0.0:
        raise ValidationError("delta_prime must be positive")
    if k >= 1 and rho_star[0] - delta_prime <= 0.0:
        raise ValidationError("empty window: delta_prime >= rho*_0")
    rates = conditioned_rates(k, theta, mh)
    radius = 2.0 * delta_prime
    if k == 0:
        corners_min = corners_max = [()]
    elif k <= 8:
        corners_min = corners_max = _window_corners(rho_star, radius, k)
    else:
        corners_min = _tailored_corners(rho_star, radius, k, rates, True)
        corners_max = _tailored_corners(rho_star, radius, k, rates, False)
    delta_lo = np.empty(m)
    delta_hi = np.empty(m)
    gamma_lo = np.empty(m)
    gamma_hi = np.empty(m)
    for i in range(m):
        delta_lo[i] = min(rates.delta(c, i) for c in corners_min)
        delta_hi[i] = max(rates.delta(c, i) for c in corners_max)
    for i in range(1, m + 1):
        gamma_hi[i - 1] = max(rates.gamma(c, i) for c in corners_min)
        gamma_lo[i - 1] = min(rates.gamma(c, i) for c in corners_max)
    lower = BirthDeathSpec(m=m, delta=tuple(delta_lo), gamma=tuple(gamma_hi))
    upper = BirthDeathSpec(m=m, delta=tuple(delta_hi), gamma=tuple(gamma_lo))
    return lower, upper
