"""Domain types for the sharp peak Moran model.

The model knobs live in :class:`Parameters`.  Population states are
tracked at two levels: occupancy distributions (how many of the m
individuals sit in each Hamming class 0..ell relative to the master
sequence) and class vectors (the first K+1 coordinates of an occupancy
distribution, the state of the auxiliary bounding chains).

Occupancy distributions carry the prefix-sum partial order: o <= o'
iff every prefix sum o(0)+...+o(l) is <= the corresponding prefix sum
of o'.  Smaller prefix sums mean mass pushed away from the master
sequence, so "lower" states are worse for the master class.  The two
projections defined here truncate an occupancy distribution to its
first K+1 classes and dump the remaining mass either at class ell
(a lower bound for the order) or at class K+1 (an upper bound).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class Parameters:
    """Model parameters.

    Attributes
    ----------
    ell : int
        Chromosome length (number of loci), >= 1.
    m : int
        Population size, >= 1.
    q : float
        Per-locus mutation probability, in (0, 1 - 1/kappa).
    sigma : float
        Fitness of the master sequence (> 1); all other sequences have
        fitness 1.  sigma == 1 is accepted for neutral-control runs.
    kappa : int
        Alphabet size, >= 2.
    K : int
        Number of tracked Hamming classes beyond class 0; 0 <= K < ell.
    """

    ell: int
    m: int
    q: float
    sigma: float
    kappa: int
    K: int = 0

    def __post_init__(self):
        if self.ell < 1:
            raise ValidationError("ell must be a positive integer")
        if self.m < 1:
            raise ValidationError("m must be a positive integer")
        if self.kappa < 2:
            raise ValidationError("kappa must be an integer >= 2")
        # q = 0 is the no-mutation control (kernels degenerate to identity)
        if not (0.0 <= self.q < 1.0 - 1.0 / self.kappa):
            raise ValidationError(
                "q must lie in [0, 1 - 1/kappa); got q=%r, kappa=%r"
                % (self.q, self.kappa)
            )
        # sigma = 1 is the neutral control; the sharp peak proper needs sigma > 1.
        if self.sigma < 1.0:
            raise ValidationError("sigma must be >= 1")
        if not (0 <= self.K < self.ell):
            raise ValidationError("K must satisfy 0 <= K < ell")

    @property
    def a(self) -> float:
        """Mutation pressure ell * q."""
        return self.ell * self.q

    @property
    def alpha(self) -> float:
        """Population-to-length ratio m / ell."""
        return self.m / self.ell

    @classmethod
    def from_a(cls, ell, m, a, sigma, kappa, K=0):
        """Build parameters from the scaled mutation pressure a, with q = a/ell."""
        return cls(ell=ell, m=m, q=a / ell, sigma=sigma, kappa=kappa, K=K)


@dataclass(frozen=True)
class OccupancyDistribution:
    """Counts of individuals per Hamming class, (o(0), ..., o(ell)).

    Immutable; the total sum(counts) is the population size m.
    """

    counts: tuple

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValidationError("occupancy counts must be non-negative")
        if len(self.counts) < 2:
            raise ValidationError("occupancy vector needs at least classes 0 and 1")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def ell(self) -> int:
        return len(self.counts) - 1

    @property
    def m(self) -> int:
        return sum(self.counts)

    def transfer(self, k: int, l: int) -> "OccupancyDistribution":
        """Move one individual from class k to class l."""
        if self.counts[k] <= 0:
            raise ValidationError("cannot transfer out of empty class %d" % k)
        c = list(self.counts)
        c[k] -= 1
        c[l] += 1
        return OccupancyDistribution(tuple(c))

    def n_k(self, K: int) -> int:
        """Number of individuals in classes 0..K."""
        return sum(self.counts[: K + 1])

    def master_present(self) -> bool:
        return self.counts[0] >= 1

    # Distinguished states used by the bounding dynamics and the
    # discovery/persistence experiments.

    @staticmethod
    def all_in_class(ell: int, m: int, l: int) -> "OccupancyDistribution":
        c = [0] * (ell + 1)
        c[l] = m
        return OccupancyDistribution(tuple(c))

    @staticmethod
    def lower_exit(ell: int, m: int) -> "OccupancyDistribution":
        """All mass at class ell: worst state, entered when the master dies out."""
        return OccupancyDistribution.all_in_class(ell, m, ell)

    @staticmethod
    def lower_enter(ell: int, m: int) -> "OccupancyDistribution":
        """One master, the rest at class ell: lower-chain discovery state."""
        c = [0] * (ell + 1)
        c[0] = 1
        c[ell] = m - 1
        return OccupancyDistribution(tuple(c))

    @staticmethod
    def upper_exit(ell: int, m: int) -> "OccupancyDistribution":
        """All mass at class 1: best master-free state."""
        return OccupancyDistribution.all_in_class(ell, m, 1)

    @staticmethod
    def upper_enter(ell: int, m: int) -> "OccupancyDistribution":
        """One master, the rest at class 1: upper-chain discovery state."""
        c = [0] * (ell + 1)
        c[0] = 1
        c[1] += m - 1
        return OccupancyDistribution(tuple(c))

    @staticmethod
    def exit_state(ell: int, m: int, K: int) -> "OccupancyDistribution":
        """All mass at class K+1: regeneration point for discovery/persistence runs."""
        if K + 1 > ell:
            raise ValidationError("exit state needs K + 1 <= ell")
        return OccupancyDistribution.all_in_class(ell, m, K + 1)


@dataclass(frozen=True)
class ClassVector:
    """State of a bounding chain: counts z = (z_0, ..., z_K) with sum <= m."""

    z: tuple
    m: int

    def __post_init__(self):
        object.__setattr__(self, "z", tuple(int(v) for v in self.z))
        if any(v < 0 for v in self.z):
            raise ValidationError("class-vector entries must be non-negative")
        if sum(self.z) > self.m:
            raise ValidationError("class-vector total exceeds population size")

    @property
    def K(self) -> int:
        return len(self.z) - 1

    def total(self) -> int:
        return sum(self.z)

    @staticmethod
    def zero(K: int, m: int) -> "ClassVector":
        return ClassVector((0,) * (K + 1), m)

    @staticmethod
    def entry_lower(K: int, m: int) -> "ClassVector":
        """Entry point of the lower bounding chain: a single master."""
        return ClassVector((1,) + (0,) * K, m)

    @staticmethod
    def entry_upper(K: int, m: int) -> "ClassVector":
        """Entry point of the upper bounding chain: one master, the rest in class 1."""
        if K == 0:
            # only the master count is tracked; the m-1 others sit untracked in class 1
            return ClassVector((1,), m)
        return ClassVector((1, m - 1) + (0,) * (K - 1), m)


@dataclass(frozen=True)
class QuasispeciesDistribution:
    """The limiting class-frequency law, weights rho*_k for k = 0..len-1.

    The weights sum to 1 up to tail_bound (the mass beyond the truncation
    index); they are a probability distribution exactly when sigma*e^{-a} > 1.
    """

    sigma: float
    a: float
    weights: tuple
    tail_bound: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(w < -1e-15 for w in self.weights):
            raise ValidationError("quasispecies weights must be non-negative")
        s = sum(self.weights)
        if s > 1.0 + 1e-9:
            raise ValidationError("quasispecies weights sum above 1")

    def mean(self) -> float:
        return sum(k * w for k, w in enumerate(self.weights))

    def variance(self) -> float:
        mu = self.mean()
        return sum(k * k * w for k, w in enumerate(self.weights)) - mu * mu


def partial_order_leq(o: OccupancyDistribution, o2: OccupancyDistribution) -> bool:
    """Prefix-sum order: True iff o(0)+...+o(l) <= o2(0)+...+o2(l) for all l."""
    if o.ell != o2.ell or o.m != o2.m:
        raise ValidationError("occupancy distributions live on different (ell, m)")
    s1 = 0
    s2 = 0
    for c1, c2 in zip(o.counts, o2.counts):
        s1 += c1
        s2 += c2
        if s1 > s2:
            return False
    return True


def project_lower(o: OccupancyDistribution, K: int) -> OccupancyDistribution:
    """Keep classes 0..K, push everything else to class ell.

    The result is below o in the prefix-sum order.
    """
    if not (0 <= K < o.ell):
        raise ValidationError("K must satisfy 0 <= K < ell")
    c = [0] * (o.ell + 1)
    c[: K + 1] = o.counts[: K + 1]
    c[o.ell] = o.m - sum(o.counts[: K + 1])
    return OccupancyDistribution(tuple(c))


def project_upper(o: OccupancyDistribution, K: int) -> OccupancyDistribution:
    """Keep classes 0..K, pull everything else up to class K+1.

    The result is above o in the prefix-sum order.
    """
    if not (0 <= K < o.ell):
        raise ValidationError("K must satisfy 0 <= K < ell")
    c = [0] * (o.ell + 1)
    c[: K + 1] = o.counts[: K + 1]
    c[K + 1] = o.m - sum(o.counts[: K + 1])
    return OccupancyDistribution(tuple(c))
