import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from stochograd.functionals import (AffineComposed, Box, CapabilityError, GroupL1, HuberTV, KullbackLeibler,
                                    L1Norm, LeastSquares, SeparableSum, TotalVariation, ZeroFunctional,
                                    huber, isotropic_tv, kl_divergence, soft_threshold, tv_prox_fgp)
from stochograd.linops import IdentityOperator, MatrixOperator, ScaledOperator, make_grad_2d

D = 6
finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
vec = arrays(np.float64, D, elements=finite)
steps = st.floats(0.05, 5.0)


def closed_form():
    v = np.linspace(0.5, 2.0, D)
    return {
        "zero": ZeroFunctional(),
        "l1": L1Norm(0.7),
        "l1-shift": L1Norm(0.4, shift=np.linspace(-1, 1, D)),
        "group-l1": GroupL1(0.8, 2),
        "box": Box(-0.5, 1.5),
        "ls": LeastSquares(v, 1.3),
        "kl": KullbackLeibler(v, background=0.2),
        "sep": SeparableSum([L1Norm(1.0), LeastSquares(np.ones(3))], [3, 3]),
    }


CF = closed_form()


@pytest.mark.parametrize("name", [n for n in CF if n != "box"])
@given(z=vec, sigma=steps)
def test_moreau_identity(name, z, sigma):
    F = CF[name]
    lhs = F.prox_conjugate(z, sigma) + sigma * F.prox(z / sigma, 1 / sigma)
    assert np.max(np.abs(lhs - z)) <= 1e-10 * (1 + np.max(np.abs(z)))


@pytest.mark.parametrize("name", list(CF))
@given(z1=vec, z2=vec, tau=steps)
def test_prox_nonexpansive(name, z1, z2, tau):
    F = CF[name]
    p1, p2 = F.prox(z1, tau), F.prox(z2, tau)
    assert np.linalg.norm(p1 - p2) <= np.linalg.norm(z1 - z2) + 1e-12


@pytest.mark.parametrize("name", list(CF))
def test_prox_optimality(name):
    F = CF[name]
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(5):
        z = rng.standard_normal(D) * 2
        tau = float(rng.uniform(0.1, 3))
        p = F.prox(z, tau)
        fp = F(p) + np.sum((p - z) ** 2) / (2 * tau)
        for _ in range(100):
            x = p + rng.standard_normal(D) * rng.choice([1e-3, 1e-1, 1.0])
            if name == "kl":
                x = np.maximum(x, -0.19)
            assert fp <= F(x) + np.sum((x - z) ** 2) / (2 * tau) + 1e-9


def test_closed_forms_exact():
    z = np.array([-2.0, -0.5, 0.0, 0.3, 1.0, 4.0])
    assert np.array_equal(L1Norm(1.0).prox(z, 0.5), np.sign(z) * np.maximum(np.abs(z) - 0.5, 0))
    assert np.array_equal(soft_threshold(z, 1.0), np.array([-1.0, 0, 0, 0, 0, 3.0]))
    assert np.array_equal(Box(0, 1).prox(z, 3.0), np.clip(z, 0, 1))
    v = np.ones(6)
    assert np.array_equal(LeastSquares(v, 2.0).prox(z, 0.25), (z + 0.5 * v) / 1.5)
    g = GroupL1(1.0, 2).prox(np.array([3.0, 0.0, 4.0, 0.0]), 1.0)
    assert np.allclose(g, [3 * 0.8, 0, 4 * 0.8, 0])


def test_kl_three_case_table():
    assert kl_divergence(np.array([0.0]), np.array([1.0]))[0] == 1.0
    assert kl_divergence(np.array([0.0]), np.array([0.0]))[0] == np.inf
    assert kl_divergence(np.array([2.0]), np.array([0.0]))[0] == np.inf
    assert kl_divergence(np.array([2.0]), np.array([-1.0]))[0] == np.inf
    assert kl_divergence(np.array([0.0]), np.array([-1.0]))[0] == np.inf
    val = kl_divergence(np.array([2.0]), np.array([1.0]))[0]
    assert val == pytest.approx(1.0 - 2.0 + 2.0 * math.log(2.0), rel=1e-15)


def test_kl_conjugate_prox_vs_golden_section_oracle():
    # oracle: 1-D golden-section on the conjugate's Moreau envelope (tests/oracles)
    p = KullbackLeibler(np.array([1.0])).prox_conjugate(np.array([2.0]), 0.5)
    assert abs(p[0] - 0.6339745877448792) <= 1e-8


def test_affine_composed_vs_grid_oracle():
    A = ScaledOperator(2.0, IdentityOperator(1))
    F = AffineComposed(L1Norm(1.0), A, alpha=4.0)
    assert abs(F.prox(np.array([1.7]), 0.3)[0] - 1.1000000000000005) <= 1e-8
    assert abs(F.prox(np.array([0.4]), 0.3)[0]) <= 1e-8
    with pytest.raises(ValueError):
        AffineComposed(L1Norm(1.0), MatrixOperator(np.array([[1.0, 2.0]])), alpha=1.0)


def _fd_check(F, x, h=1e-6):
    g = F.gradient(x)
    fd = np.array([(F(x + h * e) - F(x - h * e)) / (2 * h) for e in np.eye(x.size)])
    return np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)


def test_gradients_finite_differences():
    rng = np.random.Generator(np.random.PCG64(11))
    K = MatrixOperator(rng.uniform(0.1, 1.0, (5, 4)))
    smooth = [LeastSquares(rng.standard_normal(5), 0.7, K),
              KullbackLeibler(rng.uniform(0.5, 2, 5), 0.3, K),
              HuberTV(0.1, 0.5, shape=(3, 3)),
              SeparableSum([LeastSquares(np.ones(2)), LeastSquares(np.zeros(2), 3.0)], [2, 2])]
    for F in smooth:
        size = 9 if isinstance(F, HuberTV) else 4
        for _ in range(10):
            x = rng.uniform(0.1, 1.0, size)
            assert _fd_check(F, x) <= 1e-5


def test_huber_lipschitz_and_shape():
    H = HuberTV(0.5, 2.0, shape=(4, 4))
    assert H.lipschitz == 2.0 * 8 / 0.5
    assert huber(np.array([0.1]), 0.5)[0] == pytest.approx(0.1**2 / 1.0 + 0.25)
    assert huber(np.array([-2.0]), 0.5)[0] == 2.0


def test_capability_errors():
    F = LeastSquares(np.ones(3), 1.0, MatrixOperator(np.eye(3)))
    with pytest.raises(CapabilityError):
        F.prox(np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        L1Norm(1.0).prox(np.zeros(2), 0.0)


def test_tv_prox_pair_vs_grid_oracle():
    u, _ = tv_prox_fgp(1.0, np.array([0.0, 2.0]), 1.0, iters=2000, shape=(1, 2))
    assert np.allclose(u, [1.0, 1.0], atol=1e-8)


def _dual_pg_oracle(z, theta, h, w, iters=200000):
    # plain projected gradient on min ||z - theta div p||^2 s.t. |p_i| <= 1, forward differences built by loops
    n = h * w
    Dm = np.zeros((2 * n, n))
    for r in range(h):
        for c in range(w):
            i = r * w + c
            if r + 1 < h:
                Dm[i, i], Dm[i, i + w] = -1.0, 1.0
            if c + 1 < w:
                Dm[n + i, i], Dm[n + i, i + 1] = -1.0, 1.0
    p = np.zeros(2 * n)
    step = 1.0 / (8.0 * theta)
    for _ in range(iters):
        u = z - theta * Dm.T @ p
        q = (p + step * Dm @ u).reshape(2, n)
        q /= np.maximum(1.0, np.sqrt(q[0] ** 2 + q[1] ** 2))
        p = q.reshape(-1)
    return z - theta * Dm.T @ p


def test_tv_prox_4x4_vs_long_run_dual_oracle():
    rng = np.random.Generator(np.random.PCG64(4))
    z = rng.uniform(0, 1, 16)
    oracle = _dual_pg_oracle(z, 0.15, 4, 4, iters=60000)
    u = TotalVariation(0.3, (4, 4), warm_start=False).prox(z, 0.5, iters=2000)
    assert np.linalg.norm(u - oracle) / np.linalg.norm(oracle) <= 1e-6


def test_tv_value_and_box():
    G = make_grad_2d(3, 3)
    u = np.zeros(9)
    u[4] = 1.0
    assert isotropic_tv(G, u) == pytest.approx(2 + np.sqrt(2))
    T = TotalVariation(2.0, (3, 3), lower=0.0)
    assert T(u) == pytest.approx(2 * (2 + np.sqrt(2)))
    assert T(-u) == np.inf
    p = T.prox(np.full(9, -1.0), 1.0)
    assert np.all(p >= 0)


def test_tv_warm_start_state_and_fresh():
    T = TotalVariation(0.5, (4, 4))
    T.prox(np.arange(16.0), 1.0)
    assert T._dual is not None
    assert T.fresh()._dual is None
