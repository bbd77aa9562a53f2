"""Mutation kernels: sequence level, lumped, modified, and the
inverse-CDF / per-locus sampling maps."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sharppeak.core import Parameters
from sharppeak.errors import RegimeError, ValidationError
from sharppeak.kernels import (
    dump_matrix_csv,
    limit_mutation_prob,
    lumped_mutation_matrix,
    modified_mutation_matrix,
    per_locus_class_mutation,
    sample_class_mutation,
    sequence_mutation_prob,
)


def params(ell, q, kappa=2, m=4, sigma=2.0, K=0):
    return Parameters(ell=ell, m=m, q=q, sigma=sigma, kappa=kappa, K=K)


# ---------------------------------------------------------------------------
# sequence-level kernel


def test_sequence_mutation_prob_basics():
    p = params(2, 0.1)
    assert sequence_mutation_prob((0, 0), (0, 0), p) == pytest.approx(0.81)
    assert sequence_mutation_prob((0, 0), (0, 1), p) == pytest.approx(0.09)
    p5 = params(5, 0.1)
    assert sequence_mutation_prob((0,) * 5, (0,) * 5, p5) == pytest.approx(0.9 ** 5)
    with pytest.raises(ValidationError):
        sequence_mutation_prob((0, 0, 0), (0, 0), p)
    with pytest.raises(ValidationError):
        sequence_mutation_prob((0, 2), (0, 0), p)  # symbol out of range


def test_sequence_mutation_rows_sum_to_one():
    p = params(3, 0.17)
    total = sum(
        sequence_mutation_prob((0, 1, 0), v, p)
        for v in oracles.enumerate_seqs(3, 2)
    )
    assert total == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# lumped kernel M_H


def test_mh_master_diagonal():
    # staying on the master class means zero damage events
    for kappa in (2, 3):
        p = params(6, 0.2, kappa=kappa)
        mh = lumped_mutation_matrix(p)
        assert mh.entry(0, 0) == pytest.approx(0.8 ** 6, rel=1e-14)


@pytest.mark.parametrize("ell,q,kappa", [(5, 0.13, 3), (8, 0.3, 2), (12, 0.02, 4)])
def test_mh_rows_stochastic(ell, q, kappa):
    mh = lumped_mutation_matrix(params(ell, q, kappa=kappa))
    for b in range(ell + 1):
        row = mh.row(b)
        assert np.all(row >= 0.0) and np.all(row <= 1.0)
        assert abs(row.sum() - 1.0) < 1e-12


def test_mh_matches_exact_convolution():
    ell, q, kappa = 20, 0.13, 3
    mh = lumped_mutation_matrix(params(ell, q, kappa=kappa))
    for b in (0, 1, 7, 20):
        for c in range(ell + 1):
            exact = float(oracles.mh_exact(ell, q, kappa, b, c))
            assert mh.entry(b, c) == pytest.approx(exact, abs=1e-14)


@pytest.mark.parametrize("ell", [2, 4, 6])
def test_mh_lumping_consistency(ell):
    # summing M(u, v) over v in class c reproduces M_H(b, c)
    q = 0.21
    p = params(ell, q)
    mh = lumped_mutation_matrix(p)
    brute = oracles.mh_enumerated(ell, q, 2)
    for b in range(ell + 1):
        for c in range(ell + 1):
            assert mh.entry(b, c) == pytest.approx(brute[b, c], abs=1e-12)


def test_mh_poisson_limit():
    # ell q -> a regime: M_H(b, c) -> e^-a a^{c-b} / (c-b)!
    p = Parameters.from_a(ell=500, m=4, a=0.5, sigma=2.0, kappa=2)
    mh = lumped_mutation_matrix(p)
    for b in range(4):
        for c in range(b, 4):
            lim = limit_mutation_prob(0.5, b, c)
            assert abs(mh.entry(b, c) - lim) < 2e-3


def test_limit_mutation_prob():
    assert limit_mutation_prob(0.5, 3, 1) == 0.0
    assert limit_mutation_prob(0.5, 1, 1) == pytest.approx(math.exp(-0.5))
    assert limit_mutation_prob(0.5, 0, 2) == pytest.approx(
        math.exp(-0.5) * 0.25 / 2
    )
    with pytest.raises(ValidationError):
        limit_mutation_prob(-0.1, 0, 0)


# ---------------------------------------------------------------------------
# modified kernel M_H^{K+1}


def test_modified_structure():
    ell, K = 8, 2
    mh = lumped_mutation_matrix(params(ell, 0.1))
    mod = modified_mutation_matrix(mh, K)
    for b in range(ell + 1):
        row = mod.row(b)
        assert abs(row.sum() - 1.0) < 1e-12
        if b >= K + 2:
            assert np.allclose(row, mh.row(b), atol=0.0)
        else:
            assert np.all(row[K + 2:] == 0.0)
            for c in range(min(b, K + 1)):
                assert row[c] == mh.entry(c + 1, c)
            for c in range(b, K + 1):
                assert row[c] == mh.entry(b, c)
            assert row[K + 1] >= 0.0


def test_modified_negative_remainder_rejected():
    # strong mutation leaves row 2 with negative leftover mass
    mh = lumped_mutation_matrix(params(6, 0.15))
    with pytest.raises(RegimeError, match="row 2"):
        modified_mutation_matrix(mh, 4)


def test_modified_limit_of_leftover():
    # b = 0 row: kept mass tends to sum_{k<=K} a^k e^-a / k! < 1
    a, K = 0.5, 2
    p = Parameters.from_a(ell=500, m=4, a=a, sigma=2.0, kappa=2)
    mod = modified_mutation_matrix(lumped_mutation_matrix(p), K)
    kept = sum(mod.entry(0, c) for c in range(K + 1))
    target = sum(a ** k * math.exp(-a) / math.factorial(k) for k in range(K + 1))
    assert target < 1.0
    assert abs(kept - target) < 2e-3


def test_modified_cdf_domination():
    # sum_{h<=c} M_H(b,h) <= sum_{h<=c} M'(b,h) for all b, c
    ell, K = 10, 2
    for q in (0.05, 0.25):
        mh = lumped_mutation_matrix(params(ell, q))
        mod = modified_mutation_matrix(mh, K)
        for b in range(ell + 1):
            cum_raw = np.cumsum(mh.row(b))
            cum_mod = np.cumsum(mod.row(b))
            assert np.all(cum_raw <= cum_mod + 1e-15)


# ---------------------------------------------------------------------------
# inverse-CDF class sampling


def test_sample_class_mutation_edges():
    mh = lumped_mutation_matrix(params(6, 0.1))
    # u = 0 lands on the smallest class with positive mass
    row = mh.row(3)
    first = int(np.nonzero(row > 0.0)[0][0])
    assert sample_class_mutation(3, 0.0, mh) == first
    assert sample_class_mutation(3, 1.0 - 1e-15, mh) == 6


def test_sample_class_mutation_domination_and_monotonicity():
    ell, K = 10, 2
    mh = lumped_mutation_matrix(params(ell, 0.15))
    mod = modified_mutation_matrix(mh, K)
    grid = np.linspace(0.0, 0.999999, 997)
    for b in range(ell + 1):
        for u in grid[::7]:
            assert sample_class_mutation(b, float(u), mh) >= sample_class_mutation(
                b, float(u), mod
            )
    for u in grid[::11]:
        samples = [sample_class_mutation(b, float(u), mh) for b in range(ell + 1)]
        assert all(x <= y for x, y in zip(samples, samples[1:]))


def test_sample_class_mutation_law():
    mh = lumped_mutation_matrix(params(5, 0.3))
    rng = np.random.default_rng(0)
    draws = np.array(
        [sample_class_mutation(2, float(u), mh) for u in rng.random(200_000)]
    )
    freqs = np.bincount(draws, minlength=6) / draws.size
    row = mh.row(2)
    se = np.sqrt(row * (1 - row) / draws.size)
    assert np.all(np.abs(freqs - row) <= 3.5 * se + 1e-9)


# ---------------------------------------------------------------------------
# per-locus sampling map


def test_per_locus_hold_region():
    p = params(8, 0.01)
    assert per_locus_class_mutation(3, [0.5] * 8, p) == 3


def test_per_locus_exact_effects():
    p = params(4, 0.2)  # repair threshold 0.2, damage threshold 0.8
    # first b coordinates drive repairs, the rest damages
    assert per_locus_class_mutation(2, [0.1, 0.5, 0.5, 0.5], p) == 1
    assert per_locus_class_mutation(2, [0.5, 0.5, 0.9, 0.5], p) == 3
    assert per_locus_class_mutation(2, [0.1, 0.1, 0.9, 0.9], p) == 2


@given(st.lists(st.floats(min_value=0.0, max_value=1.0, exclude_max=True),
                min_size=6, max_size=6))
@settings(max_examples=300, deadline=None)
def test_per_locus_monotone_in_class(us):
    p = params(6, 0.22)
    out = [per_locus_class_mutation(b, us, p) for b in range(7)]
    assert all(x <= y for x, y in zip(out, out[1:]))


def test_per_locus_empirical_law():
    from scipy import stats

    p = params(50, 0.01)
    mh = lumped_mutation_matrix(p)
    rng = np.random.default_rng(42)
    us = rng.random((1_000_000, 50))
    # vectorized equivalent of the per-locus map for b = 1
    repairs = (us[:, :1] < 0.01).sum(axis=1)
    damages = (us[:, 1:] > 0.99).sum(axis=1)
    draws = 1 - repairs + damages
    # spot check the vectorization against the real function
    for k in range(200):
        assert per_locus_class_mutation(1, list(us[k]), p) == draws[k]
    observed = np.bincount(draws, minlength=51)
    expected = mh.row(1) * draws.size
    # pool the far tail so every bin has decent mass
    cut = 6
    obs = np.concatenate([observed[:cut], [observed[cut:].sum()]])
    exp = np.concatenate([expected[:cut], [expected[cut:].sum()]])
    stat, pvalue = stats.chisquare(obs, exp)
    assert pvalue > 0.001


def test_dump_matrix_csv(tmp_path):
    mh = lumped_mutation_matrix(params(3, 0.1))
    path = tmp_path / "mh.csv"
    dump_matrix_csv(mh, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "b,c,prob"
    assert len(lines) == 1 + 4 * 4
    b, c, prob = lines[1].split(",")
    assert (int(b), int(c)) == (0, 0)
    assert float(prob) == pytest.approx(mh.entry(0, 0))
