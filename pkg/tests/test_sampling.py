import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochograd.linops import IdentityOperator, MatrixOperator, RowSubset, Shape, make_circulant_blur
from stochograd.sampling import (Sampler, herman_meyer_order, make_sampler, partition_contiguous,
                                 partition_staggered, prime_factors, smoothness_info)


@given(st.integers(1, 10_000), st.data())
def test_partition_invariants(n_items, data):
    n_sub = data.draw(st.integers(1, min(n_items, 500)))
    for part in (partition_staggered(n_items, n_sub), partition_contiguous(n_items, n_sub)):
        part.check()
        assert part.n_subsets == n_sub


def test_staggered_240_60():
    part = partition_staggered(240, 60)
    assert len(part) == 60
    assert all(s.size == 4 for s in part.subsets)
    assert list(part[1]) == [1, 61, 121, 181]


def test_partition_errors():
    with pytest.raises(ValueError):
        partition_staggered(3, 4)
    with pytest.raises(ValueError):
        partition_contiguous(0, 1)


@given(st.sampled_from(["uniform", "permutation", "cyclic", "herman-meyer"]), st.integers(1, 50),
       st.integers(0, 2**64 - 1))
def test_sampler_determinism_and_range(kind, n, seed):
    a, b = Sampler(kind, n, seed), Sampler(kind, n, seed)
    xs = [next(a) for _ in range(300)]
    assert xs == [next(b) for _ in range(300)]
    assert all(0 <= i < n for i in xs)
    c = Sampler(kind, n, seed)
    drawn = np.concatenate([c.draw(7), c.draw(293)])
    assert drawn.tolist() == xs


def test_permutation_sampler_epochs():
    s = Sampler("permutation", 9, 3)
    for _ in range(5):
        assert sorted(next(s) for _ in range(9)) == list(range(9))


def test_importance_frequencies():
    L = np.array([1.0, 2.0, 3.0, 4.0])
    p = L / L.sum()
    s = make_sampler("importance", 4, seed=1, weights=p)
    counts = np.bincount(s.draw(100_000), minlength=4) / 100_000
    assert np.all(np.abs(counts - p) <= 0.02)
    with pytest.raises(ValueError):
        make_sampler("importance", 4)


def test_herman_meyer_oracle_values():
    # frozen from tests/oracles/make_oracles.py (explicit digit-tuple enumeration)
    assert herman_meyer_order(8).tolist() == [0, 4, 2, 6, 1, 5, 3, 7]
    assert herman_meyer_order(6).tolist() == [0, 3, 1, 4, 2, 5]
    assert herman_meyer_order(12).tolist() == [0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11]
    assert herman_meyer_order(30).tolist() == [0, 15, 5, 20, 10, 25, 1, 16, 6, 21, 11, 26, 2, 17, 7, 22, 12,
                                               27, 3, 18, 8, 23, 13, 28, 4, 19, 9, 24, 14, 29]


def test_herman_meyer_power_of_two_is_bit_reversal():
    for bits in range(1, 9):
        rev = [int(format(k, f"0{bits}b")[::-1], 2) for k in range(2**bits)]
        assert herman_meyer_order(2**bits).tolist() == rev


@given(st.integers(1, 10_000))
def test_herman_meyer_bijection(n):
    assert np.array_equal(np.sort(herman_meyer_order(n)), np.arange(n))


@given(st.integers(2, 5000))
def test_prime_factors(n):
    ps = prime_factors(n)
    assert int(np.prod(ps)) == n and ps == sorted(ps)


@pytest.mark.parametrize("kappa", [1, 5, 25, 99])
def test_upsilon_equals_kappa_exact(kappa):
    K = make_circulant_blur(1000, kappa)
    ops = [RowSubset(K, [i]) for i in range(1000)]
    info = smoothness_info(operators=ops, full=K)
    assert info.upsilon == kappa
    assert info.L == 1.0 and info.L_max == 1.0 / kappa


def test_upsilon_identity_split():
    I = IdentityOperator(Shape.flat(12))
    ops = [RowSubset(I, s) for s in partition_contiguous(12, 4).subsets]
    assert smoothness_info(operators=ops, full=I).upsilon == 1


def test_upsilon_gaussian_vs_dense_svd():
    rng = np.random.Generator(np.random.PCG64(9))
    A = rng.standard_normal((64, 32))
    op = MatrixOperator(A)
    part = partition_contiguous(64, 8)
    info = smoothness_info(operators=[RowSubset(op, s) for s in part.subsets], full=op, tol=1e-12)
    L = np.linalg.norm(A, 2) ** 2
    Lmax = max(np.linalg.norm(A[s], 2) ** 2 for s in part.subsets)
    assert abs(info.upsilon - L / Lmax) / (L / Lmax) <= 0.01


@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 1000))
def test_upsilon_between_one_and_n(rows_per, n, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    A = rng.standard_normal((rows_per * n, 5))
    op = MatrixOperator(A)
    part = partition_staggered(rows_per * n, n)
    info = smoothness_info(operators=[RowSubset(op, s) for s in part.subsets], full=op, tol=1e-12)
    assert 1 - 1e-6 <= info.upsilon <= n + 1e-6
