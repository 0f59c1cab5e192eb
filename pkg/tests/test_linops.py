import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from stochograd.linops import (BlockOperator, CirculantBlur, IdentityOperator, MatrixOperator, ParallelRadon,
                               RowSubset, ScaledOperator, Shape, ShapeError, ZeroOperator, dot_product_test,
                               estimate_norm, make_block_operator, make_circulant_blur, make_grad_2d,
                               make_parallel_radon, make_tgv_operator)


def all_variants():
    rng = np.random.Generator(np.random.PCG64(1))
    radon = make_parallel_radon(8, 8, 4)
    return {
        "dense": MatrixOperator(rng.standard_normal((7, 5))),
        "sparse": MatrixOperator(np.eye(6)[[0, 2, 3]] * 2.0 + 0.0),
        "identity": IdentityOperator(Shape.flat(9)),
        "zero": ZeroOperator(4, 3),
        "scaled": ScaledOperator(-1.5, make_grad_2d(4, 5)),
        "blur": make_circulant_blur(31, 5),
        "grad": make_grad_2d(6, 7),
        "radon": radon,
        "radon-16": make_parallel_radon(16, 16, 12),
        "rowsubset": RowSubset(radon, np.arange(3, 20)),
        "rowsubset-blur": RowSubset(make_circulant_blur(20, 3), [1, 7, 13]),
        "block": make_block_operator([[IdentityOperator(3), None], [make_circulant_blur(3, 3),
                                                                    MatrixOperator(np.ones((3, 2)))]]),
        "tgv": make_tgv_operator(5, 4),
    }


@pytest.mark.parametrize("name", list(all_variants()))
def test_dot_product_every_variant(name):
    assert dot_product_test(all_variants()[name], n_pairs=20, seed=3) <= 1e-10


@pytest.mark.parametrize("name", list(all_variants()))
def test_linearity(name, rng):
    op = all_variants()[name]
    x = rng.standard_normal(op.domain.size)
    ax = op.apply(x)
    assert np.allclose(op.apply(2 * x), 2 * ax, rtol=1e-12, atol=1e-12 * (1 + np.abs(ax).max()))


def test_shape_errors():
    op = make_circulant_blur(10, 3)
    with pytest.raises(ShapeError):
        op.apply(np.zeros(9))
    with pytest.raises(ShapeError):
        op.adjoint(np.zeros(11))
    with pytest.raises(ValueError):
        make_circulant_blur(10, 4)


def test_blur_small_case_and_dense_agreement():
    K = make_circulant_blur(4, 3)
    e0 = np.array([1.0, 0, 0, 0])
    assert np.allclose(K.apply(e0), [1 / 3, 1 / 3, 0, 1 / 3])
    K = make_circulant_blur(50, 7)
    assert np.allclose(K.to_dense(), K.to_sparse().toarray())
    x = np.random.default_rng(0).standard_normal(50)
    assert np.allclose(K.apply(x), K.to_sparse() @ x, atol=1e-13)


@given(st.sampled_from([1, 3, 5, 7, 25, 99]))
def test_blur_row_norms_closed_form(kappa):
    d = 200
    K = make_circulant_blur(d, kappa)
    M = K.to_sparse().toarray()
    assert np.allclose(np.linalg.norm(M, axis=1), 1 / np.sqrt(kappa), rtol=0, atol=1e-15)
    assert K.row_norm() == 1 / np.sqrt(kappa)
    assert RowSubset(K, [17]).exact_norm_squared() == Fraction(1, kappa)


def test_blur_norm_is_one():
    K = make_circulant_blur(101, 5)
    assert abs(K.norm() - 1.0) <= 1e-6
    assert abs(estimate_norm(K, tol=1e-12, max_iter=5000) - 1.0) <= 1e-6
    assert np.isclose(np.linalg.norm(K.to_dense(), 2), 1.0)


def test_row_norm_kappa5_value():
    assert abs(make_circulant_blur(10, 5).row_norm() - 0.4472135954999579) < 1e-15


def test_grad_norm_vs_svd_16():
    G = make_grad_2d(16, 16)
    s = np.linalg.norm(G.to_dense(), 2)
    est = G.norm(tol=1e-12, max_iter=20000)
    assert s <= np.sqrt(8)
    assert est <= s * (1 + 1e-6)
    assert abs(est - s) / s <= 1e-3


@given(st.integers(2, 12), st.integers(2, 12))
def test_grad_norm_squared_bound(h, w):
    assert estimate_norm(make_grad_2d(h, w), tol=1e-8, max_iter=3000) ** 2 <= 8 + 1e-6


def test_grad_neumann_boundary():
    G = make_grad_2d(3, 4)
    u = np.arange(12.0)
    g = G.apply(u).reshape(2, 3, 4)
    assert np.all(g[0, -1] == 0) and np.all(g[1, :, -1] == 0)
    assert np.all(g[0, :-1] == 4) and np.all(g[1, :, :-1] == 1)


def test_radon_angle_zero_all_ones_column_sums():
    R = ParallelRadon(4, 4, 1, n_det=4)
    M = R.to_dense()
    # angle 0 integrates along columns: each detector sees one column of length 4
    assert np.allclose(M @ np.ones(16), 4.0)
    assert np.allclose(M.sum(axis=0), 1.0)
    for det in range(4):
        assert np.allclose(M[det].reshape(4, 4)[:, det], 1.0)


def _ray_sample_oracle(h, w, theta, offset, n_samples=400001):
    # dense sampling of the ray; length per pixel = count * dt
    c, s = np.cos(theta), np.sin(theta)
    L = np.hypot(h, w)
    t = np.linspace(-L, L, n_samples)
    dt = t[1] - t[0]
    x = offset * c - t * s
    y = offset * s + t * c
    col = np.floor(x + w / 2.0).astype(int)
    row = np.floor(h / 2.0 - y).astype(int)
    ok = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    out = np.zeros(h * w)
    np.add.at(out, row[ok] * w + col[ok], dt)
    return out


def test_radon_intersection_lengths_vs_sampling_oracle():
    h = w = 5
    angles = np.array([0.3, 1.1, 2.0])
    R = ParallelRadon(h, w, 3, n_det=7, angles=angles)
    M = R.to_dense()
    offsets = np.arange(7) - 3.0
    for a, th in enumerate(angles):
        for j, s in enumerate(offsets):
            assert np.allclose(M[a * 7 + j], _ray_sample_oracle(h, w, th, s), atol=2e-4)


def test_radon_adjoint_16_12():
    assert dot_product_test(make_parallel_radon(16, 16, 12), 20, seed=5) <= 1e-10


@pytest.mark.parametrize("shape", [(5, 3), (12, 12), (32, 20), (32, 32)])
def test_power_method_vs_svd(shape):
    rng = np.random.Generator(np.random.PCG64(shape[0]))
    A = rng.standard_normal(shape)
    op = MatrixOperator(A)
    tol = 1e-10
    est = estimate_norm(op, tol=tol, max_iter=10000, seed=2)
    s = np.linalg.norm(A, 2)
    assert abs(est - s) / s <= 1e-3
    assert est <= s * (1 + tol)
    assert est == estimate_norm(op, tol=tol, max_iter=10000, seed=2)


def test_power_method_grad_and_radon_vs_svd():
    for op in (make_grad_2d(8, 4), make_parallel_radon(6, 6, 5)):
        s = np.linalg.norm(op.to_dense(), 2)
        assert abs(estimate_norm(op, tol=1e-12, max_iter=20000) - s) / s <= 1e-3


def test_block_operator_examples():
    I = IdentityOperator(1)
    assert np.allclose(make_block_operator([[IdentityOperator(3)]]).to_dense(), np.eye(3))
    I2 = IdentityOperator(2)
    stack = make_block_operator([[I2], [I2]])
    assert np.allclose(stack.apply(np.array([1.0, 2.0])), [1, 2, 1, 2])
    T = make_tgv_operator(4, 4)
    z = np.concatenate([np.full(16, 3.0), np.zeros(32)])
    assert np.allclose(T.apply(z), 0)
    with pytest.raises(ShapeError):
        make_block_operator([[I, IdentityOperator(2)], [I, None]])
    assert I.shape == (1, 1)


def test_materialise_limit_guard():
    big = ZeroOperator(5000, 20000)
    with pytest.raises(ValueError):
        big.to_dense()
