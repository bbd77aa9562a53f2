"""Simulators for the sequence-level chain and its Hamming-class lumping.

One event of the sequence chain: a uniformly chosen individual j dies; a
uniformly chosen individual i reproduces with probability A(x(i))/sigma
(so the master reproduces surely, everyone else with probability
1/sigma); the child is a per-locus mutant of x(i) and replaces x(j);
otherwise nothing happens.  The class-occupancy process induced by this
chain is itself Markov, and occupancy_step realizes its transition law
directly: dying class proportional to occupancy, parent class
proportional to occupancy times fitness, child class drawn from the
parent's row of the lumped kernel.

run_trajectory drives either chain for many events with burn-in,
thinning and independent replicas.  Replica r draws its stream from
numpy's SeedSequence(seed).spawn(replicas)[r]; this derivation rule is
stable and part of the output contract.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import OccupancyDistribution, Parameters
from .errors import ValidationError
from .kernels import LumpedMutationMatrix, lumped_mutation_matrix

_CHUNK = 1 << 15


class Population:
    """State of the sequence-level chain: m chromosomes of length ell.

    The master sequence is the all-zero word; the model only ever sees
    Hamming distances to it, so this convention loses nothing.
    """

    def __init__(self, params: Parameters, chromosomes):
        chrom = np.array(chromosomes, dtype=np.int64)
        if chrom.shape != (params.m, params.ell):
            raise ValidationError(
                "population must be m x ell = %d x %d" % (params.m, params.ell)
            )
        if np.any((chrom < 0) | (chrom >= params.kappa)):
            raise ValidationError("symbols must lie in {0,...,kappa-1}")
        self.params = params
        self.chromosomes = chrom
        self.chromosomes.setflags(write=False)

    @classmethod
    def all_master(cls, params: Parameters) -> "Population":
        return cls(params, np.zeros((params.m, params.ell), dtype=np.int64))

    @classmethod
    def random(cls, params: Parameters, rng) -> "Population":
        return cls(params, rng.integers(0, params.kappa, size=(params.m, params.ell)))

    def distances(self) -> np.ndarray:
        """Hamming distance of each individual to the master sequence."""
        return np.count_nonzero(self.chromosomes, axis=1)

    def to_occupancy(self) -> OccupancyDistribution:
        counts = np.bincount(self.distances(), minlength=self.params.ell + 1)
        return OccupancyDistribution(tuple(int(c) for c in counts))

    def n_k(self, K: int) -> int:
        return int(np.count_nonzero(self.distances() <= K))

    def __eq__(self, other):
        return isinstance(other, Population) and np.array_equal(
            self.chromosomes, other.chromosomes
        )

    def __hash__(self):
        return hash(self.chromosomes.tobytes())


@dataclass(frozen=True)
class SimulationConfig:
    """Run-length plumbing: seed, total events, burn-in, replicas, thinning.

    burn_in and thin may be left None and are then resolved against the
    model parameters (burn_in = 10*m*ell events, thin = m events).
    """

    seed: int
    steps: int
    burn_in: int = None
    replicas: int = 1
    thin: int = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1")
        if self.burn_in is not None:
            if self.burn_in < 0:
                raise ValidationError("burn_in must be >= 0")
            if self.steps <= self.burn_in:
                raise ValidationError("need steps > burn_in")
        if self.thin is not None and self.thin < 1:
            raise ValidationError("thin must be >= 1")

    def resolved(self, params: Parameters) -> "SimulationConfig":
        burn_in = 10 * params.m * params.ell if self.burn_in is None else self.burn_in
        thin = params.m if self.thin is None else self.thin
        if self.steps <= burn_in:
            raise ValidationError(
                "steps = %d does not exceed burn_in = %d" % (self.steps, burn_in)
            )
        return replace(self, burn_in=burn_in, thin=thin)


def replica_generators(seed: int, replicas: int):
    """One PCG64 generator per replica, spawned from the master seed."""
    children = np.random.SeedSequence(seed).spawn(replicas)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _mutate(parent: np.ndarray, params: Parameters, rng) -> np.ndarray:
    """Per-locus mutant of parent: each locus flips with probability q to
    a uniformly chosen other symbol."""
    child = parent.copy()
    if params.q == 0.0:
        return child
    flips = rng.random(params.ell) < params.q
    n = int(np.count_nonzero(flips))
    if n:
        child[flips] = (child[flips] + rng.integers(1, params.kappa, size=n)) % params.kappa
    return child


def _draw_parent(dist: np.ndarray, sigma: float, rng) -> int:
    """Index of the reproducing individual, proportional to fitness.

    Masters (distance 0) carry weight sigma, everyone else weight 1.
    This is the law of the propose-uniformly/accept-with-A/sigma loop
    run until acceptance, realized with a bounded number of draws.
    """
    m = dist.shape[0]
    masters = np.flatnonzero(dist == 0)
    n0 = masters.shape[0]
    if n0 == 0:
        return int(rng.integers(m))
    v = rng.random() * (sigma * n0 + (m - n0))
    if v < sigma * n0:
        return int(masters[int(rng.random() * n0)])
    others = np.flatnonzero(dist != 0)
    return int(others[int(rng.random() * (m - n0))])


def moran_step_full(x: Population, rng) -> Population:
    """One event of the sequence chain: a uniform individual dies and is
    replaced by a mutated copy of a fitness-proportional parent.

    Draw order (fixed): dying j, parent selection uniforms, then the
    mutation uniforms."""
    params = x.params
    j = int(rng.integers(params.m))
    dist = x.distances()
    i = _draw_parent(dist, params.sigma, rng)
    child = _mutate(x.chromosomes[i], params, rng)
    chrom = x.chromosomes.copy()
    chrom[j] = child
    return Population(params, chrom)


def occupancy_step(
    o: OccupancyDistribution, mh: LumpedMutationMatrix, rng
) -> OccupancyDistribution:
    """One event of the class-occupancy chain (law-exact realization)."""
    params = mh.params
    if o.ell != params.ell:
        raise ValidationError("occupancy length does not match the kernel")
    counts = np.asarray(o.counts, dtype=float)
    m = o.m
    # dying class: uniform individual
    cum = np.cumsum(counts)
    k = int(np.searchsorted(cum, rng.random() * m, side="right"))
    # parent class: occupancy weighted by fitness (sigma on class 0)
    w = counts.copy()
    w[0] *= params.sigma
    cw = np.cumsum(w)
    h = int(np.searchsorted(cw, rng.random() * cw[-1], side="right"))
    # child class: inverse CDF of the parent row
    u = rng.random()
    cdf = mh.row_cdf(h)
    side = "right" if u == 0.0 else "left"
    l = min(int(np.searchsorted(cdf, u, side=side)), params.ell)
    return o.transfer(k, l)


def n_k_statistic(state, K: int) -> int:
    """Number of individuals in classes 0..K, for either state type."""
    if isinstance(state, Population):
        return state.n_k(K)
    if isinstance(state, OccupancyDistribution):
        return state.n_k(K)
    raise ValidationError("state must be a Population or an OccupancyDistribution")


def _occupancy_kernel(counts, row_cdfs, sigma, uniforms, t0, burn_in, thin, out, s_idx):
    """Drive the occupancy chain for one chunk of pre-drawn uniforms.

    counts is modified in place; samples of counts[0..K] land in out
    starting at row s_idx; returns the next free row.  Written in the
    numba-compatible subset and compiled when numba is available.
    """
    n_classes = counts.shape[0]
    K1 = out.shape[1]
    m = 0
    for c in range(n_classes):
        m += counts[c]
    n = uniforms.shape[0]
    for e in range(n):
        # dying class: uniform individual
        target = int(uniforms[e, 0] * m)
        acc = 0
        k = 0
        while k < n_classes - 1:
            acc += counts[k]
            if target < acc:
                break
            k += 1
        # parent class: master weighted by sigma, everyone else by 1
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
        # child class from the parent row
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
        t = t0 + e + 1
        if t > burn_in and (t - burn_in) % thin == 0:
            for c in range(K1):
                out[s_idx, c] = counts[c]
            s_idx += 1
    return s_idx


try:  # pragma: no cover - exercised implicitly wherever available
    import numba

    _occupancy_kernel = numba.njit(cache=False)(_occupancy_kernel)
except ImportError:  # pragma: no cover
    pass


@dataclass(frozen=True)
class TrajectoryResult:
    """Thinned post-burn-in samples, one block per replica.

    class_freqs has shape (replicas, samples, K+1) and holds the class
    frequencies o(c)/m for c = 0..K; nk_over_m the corresponding sums.
    sample_times are absolute event indices, shared by all replicas.
    """

    params: Parameters
    config: SimulationConfig
    mode: str
    sample_times: np.ndarray
    class_freqs: np.ndarray
    nk_over_m: np.ndarray


def _sample_times(config: SimulationConfig) -> np.ndarray:
    return np.arange(
        config.burn_in + config.thin, config.steps + 1, config.thin, dtype=np.int64
    )


def _run_occupancy_replica(counts0, mh, config, rng, n_samples, K):
    params = mh.params
    cdfs = np.empty((params.ell + 1, params.ell + 1))
    for b in range(params.ell + 1):
        cdfs[b] = mh.row_cdf(b)
    counts = np.asarray(counts0, dtype=np.int64).copy()
    out = np.zeros((n_samples, K + 1), dtype=np.int64)
    s_idx = 0
    done = 0
    while done < config.steps:
        n = min(_CHUNK, config.steps - done)
        uniforms = rng.random((n, 3))
        s_idx = _occupancy_kernel(
            counts, cdfs, float(params.sigma), uniforms, done,
            config.burn_in, config.thin, out, s_idx,
        )
        done += n
    return out


def _run_full_replica(chrom0, params, config, rng, n_samples, K):
    m, ell, q, kappa, sigma = params.m, params.ell, params.q, params.kappa, params.sigma
    chrom = chrom0.copy()
    dist = np.count_nonzero(chrom, axis=1)
    out = np.zeros((n_samples, K + 1), dtype=np.int64)
    s_idx = 0
    done = 0
    while done < config.steps:
        n = min(_CHUNK, config.steps - done)
        j_idx = rng.integers(0, m, size=n)
        u_sel = rng.random((n, 2))
        for e in range(n):
            masters = np.flatnonzero(dist == 0)
            n0 = masters.shape[0]
            if n0 == 0:
                i = int(u_sel[e, 1] * m)
            elif u_sel[e, 0] * (sigma * n0 + (m - n0)) < sigma * n0:
                i = int(masters[int(u_sel[e, 1] * n0)])
            else:
                others = np.flatnonzero(dist != 0)
                i = int(others[int(u_sel[e, 1] * (m - n0))])
            j = j_idx[e]
            child = chrom[i].copy()
            if q > 0.0:
                flips = rng.random(ell) < q
                nf = int(np.count_nonzero(flips))
                if nf:
                    child[flips] = (child[flips] + rng.integers(1, kappa, size=nf)) % kappa
            chrom[j] = child
            dist[j] = int(np.count_nonzero(child))
            t = done + e + 1
            if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
                counts = np.bincount(dist, minlength=ell + 1)
                out[s_idx] = counts[: K + 1]
                s_idx += 1
        done += n
    return out


def run_trajectory(config: SimulationConfig, params: Parameters, initial) -> TrajectoryResult:
    """Drive the chain selected by the initial state type.

    A Population initial state runs the sequence-level chain; an
    OccupancyDistribution runs the lumped chain.  Deterministic given
    config.seed; replica r consumes SeedSequence(seed).spawn(replicas)[r].
    """
    config = config.resolved(params)
    K = params.K
    times = _sample_times(config)
    n_samples = times.shape[0]
    gens = replica_generators(config.seed, config.replicas)

    if isinstance(initial, Population):
        if initial.params.ell != params.ell or initial.params.m != params.m:
            raise ValidationError("initial population does not match params")
        runs = [
            _run_full_replica(initial.chromosomes, params, config, g, n_samples, K)
            for g in gens
        ]
        mode = "full"
    elif isinstance(initial, OccupancyDistribution):
        if initial.ell != params.ell or initial.m != params.m:
            raise ValidationError("initial occupancy does not match params")
        mh = lumped_mutation_matrix(params)
        runs = [
            _run_occupancy_replica(initial.counts, mh, config, g, n_samples, K)
            for g in gens
        ]
        mode = "occupancy"
    else:
        raise ValidationError("initial must be a Population or an OccupancyDistribution")

    counts = np.stack(runs).astype(float)
    return TrajectoryResult(
        params=params,
        config=config,
        mode=mode,
        sample_times=times,
        class_freqs=counts / params.m,
        nk_over_m=counts.sum(axis=2) / params.m,
    )


def write_trajectory_csv(result: TrajectoryResult, path) -> None:
    """CSV emission: header "t,class0,...,classK,nK_over_m", plus a
    leading replica column when there is more than one replica."""
    K = result.params.K
    cols = ",".join("class%d" % c for c in range(K + 1))
    multi = result.class_freqs.shape[0] > 1
    with open(path, "w") as fh:
        fh.write(("replica," if multi else "") + "t,%s,nK_over_m\n" % cols)
        for r in range(result.class_freqs.shape[0]):
            for s, t in enumerate(result.sample_times):
                row = ",".join(
                    "%.17g" % v for v in result.class_freqs[r, s]
                )
                prefix = ("%d," % r) if multi else ""
                fh.write(
                    "%s%d,%s,%.17g\n" % (prefix, t, row, result.nk_over_m[r, s])
                )
