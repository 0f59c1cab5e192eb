"""Convex functionals with values, gradients, proximal and conjugate proximal maps.

Every functional acts on flat float64 arrays.  ``prox(z, tau)`` returns
``argmin_x F(x) + ||x - z||^2 / (2 tau)`` and ``prox_conjugate(z, sigma)`` the
same for ``F*``; the default conjugate prox goes through the Moreau identity
``prox_{sigma F*}(z) = z - sigma prox_{F/sigma}(z/sigma)``.
"""

from __future__ import annotations

import copy
from typing import Sequence

import numpy as np

from .linops import Gradient2D, LinearMap, ShapeError

__all__ = [
    "CapabilityError",
    "Functional",
    "ZeroFunctional",
    "L1Norm",
    "GroupL1",
    "Box",
    "LeastSquares",
    "KullbackLeibler",
    "HuberTV",
    "TotalVariation",
    "SeparableSum",
    "AffineComposed",
    "huber",
    "huber_derivative",
    "kl_divergence",
    "soft_threshold",
    "tv_prox_fgp",
    "isotropic_tv",
]

KL_FLOOR = 1e-12


class CapabilityError(TypeError):
    """Raised when an operation the functional does not support is requested."""


def soft_threshold(z, thresh):
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


def huber(t, gamma):
    """Huber function: ``|t|`` when ``|t| > gamma``, else ``t^2/(2 gamma) + gamma/2``."""
    a = np.abs(t)
    return np.where(a > gamma, a, a**2 / (2 * gamma) + gamma / 2)


def huber_derivative(t, gamma):
    return np.asarray(t, dtype=float) / np.maximum(np.abs(t), gamma)


def kl_divergence(v, vp):
    """Elementwise ``KL(v | v')`` with the three-case extension to the boundary."""
    v = np.asarray(v, dtype=float)
    vp = np.asarray(vp, dtype=float)
    v, vp = np.broadcast_arrays(v, vp)
    out = np.full(v.shape, np.inf)
    both = (vp > 0) & (v > 0)
    out[both] = vp[both] - v[both] + v[both] * np.log(v[both] / vp[both])
    zero = (vp > 0) & (v == 0)
    out[zero] = vp[zero]
    return out


class Functional:
    """Extended-real convex functional ``F: R^d -> R u {+inf}``."""

    smooth = False
    prox_friendly = False
    lipschitz: float | None = None

    def __call__(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} is not smooth")

    def prox(self, z, tau: float) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} has no proximal map")

    def prox_conjugate(self, z, sigma: float) -> np.ndarray:
        if not self.prox_friendly:
            raise CapabilityError(f"{type(self).__name__} has no proximal map")
        _check_step(sigma)
        z = np.asarray(z, dtype=float)
        return z - sigma * self.prox(z / sigma, 1.0 / sigma)

    def fresh(self) -> "Functional":
        """A copy safe to use in a new solve (drops warm-start state)."""
        return self

    def __add__(self, other):
        return _Sum([self, other])


def _check_step(tau):
    if not tau > 0:
        raise ValueError(f"step size must be positive, got {tau}")


class _Sum(Functional):
    """Pointwise sum, used for objective evaluation only."""

    def __init__(self, terms):
        self.terms = list(terms)
        self.smooth = all(t.smooth for t in self.terms)

    def __call__(self, x):
        return float(sum(t(x) for t in self.terms))

    def gradient(self, x):
        if not self.smooth:
            raise CapabilityError("sum contains a nonsmooth term")
        return sum(t.gradient(x) for t in self.terms)


class ZeroFunctional(Functional):
    smooth = True
    prox_friendly = True
    lipschitz = 0.0

    def __call__(self, x):
        return 0.0

    def gradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def prox(self, z, tau):
        _check_step(tau)
        return np.array(z, dtype=float)

    def prox_conjugate(self, z, sigma):
        # F* is the indicator of {0}
        _check_step(sigma)
        return np.zeros_like(np.asarray(z, dtype=float))


class L1Norm(Functional):
    """``lam * ||x - shift||_1``."""

    prox_friendly = True

    def __init__(self, lam: float = 1.0, shift=None):
        if lam < 0:
            raise ValueError("lam must be non-negative")
        self.lam = float(lam)
        self.shift = None if shift is None else np.asarray(shift, dtype=float)

    def _shifted(self, x):
        x = np.asarray(x, dtype=float)
        return x if self.shift is None else x - self.shift

    def __call__(self, x):
        return self.lam * float(np.sum(np.abs(self._shifted(x))))

    def prox(self, z, tau):
        _check_step(tau)
        p = soft_threshold(self._shifted(z), tau * self.lam)
        return p if self.shift is None else p + self.shift

    def prox_conjugate(self, z, sigma):
        _check_step(sigma)
        z = np.asarray(z, dtype=float)
        if self.shift is not None:
            z = z - sigma * self.shift
        return np.clip(z, -self.lam, self.lam)


class GroupL1(Functional):
    """``lam * sum_p ||y_p||_2`` over groups formed by the leading axis.

    A vector of length ``c * m`` is read as ``c`` channels of ``m`` entries and
    pixel ``p`` groups the ``c`` values ``y[j*m + p]``.
    """

    prox_friendly = True

    def __init__(self, lam: float, channels: int):
        if lam < 0 or channels < 1:
            raise ValueError("need lam >= 0 and channels >= 1")
        self.lam = float(lam)
        self.channels = int(channels)

    def _groups(self, y):
        y = np.asarray(y, dtype=float)
        if y.size % self.channels:
            raise ShapeError("length not divisible by channel count")
        return y.reshape(self.channels, -1)

    def __call__(self, y):
        return self.lam * float(np.sum(np.sqrt(np.sum(self._groups(y) ** 2, axis=0))))

    def prox(self, z, tau):
        _check_step(tau)
        g = self._groups(z)
        mag = np.sqrt(np.sum(g**2, axis=0))
        scale = np.maximum(1.0 - tau * self.lam / np.maximum(mag, 1e-300), 0.0)
        return (g * scale).reshape(-1)

    def prox_conjugate(self, z, sigma):
        _check_step(sigma)
        g = self._groups(z)
        mag = np.sqrt(np.sum(g**2, axis=0))
        if self.lam == 0:
            return np.zeros(g.size)
        return (g / np.maximum(1.0, mag / self.lam)).reshape(-1)


class Box(Functional):
    """Indicator of ``{lo <= x <= hi}``; bounds may be infinite."""

    prox_friendly = True

    def __init__(self, lo=0.0, hi=np.inf):
        self.lo = lo
        self.hi = hi
        if np.any(np.asarray(lo) > np.asarray(hi)):
            raise ValueError("empty box")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.0 if np.all((x >= self.lo) & (x <= self.hi)) else np.inf

    def prox(self, z, tau):
        _check_step(tau)
        return np.clip(np.asarray(z, dtype=float), self.lo, self.hi)


class LeastSquares(Functional):
    """``weight/2 * ||K x - v||^2``; ``K`` defaults to the identity."""

    smooth = True

    def __init__(self, v, weight: float = 1.0, operator: LinearMap | None = None,
                 lipschitz: float | None = None):
        self.v = np.asarray(v, dtype=float).reshape(-1)
        self.weight = float(weight)
        self.operator = operator
        self.prox_friendly = operator is None
        if lipschitz is not None:
            self.lipschitz = float(lipschitz)
        elif operator is None:
            self.lipschitz = self.weight
        else:
            self.lipschitz = self.weight * operator.norm() ** 2

    def residual(self, x):
        x = np.asarray(x, dtype=float)
        Kx = x if self.operator is None else self.operator.apply(x)
        return Kx - self.v

    def __call__(self, x):
        r = self.residual(x)
        return 0.5 * self.weight * float(np.dot(r, r))

    def gradient(self, x):
        r = self.weight * self.residual(x)
        return r if self.operator is None else self.operator.adjoint(r)

    def prox(self, z, tau):
        if self.operator is not None:
            raise CapabilityError("least squares with a forward operator has no cheap prox")
        _check_step(tau)
        return (np.asarray(z, dtype=float) + tau * self.weight * self.v) / (1.0 + tau * self.weight)

    def prox_conjugate(self, z, sigma):
        if self.operator is not None:
            raise CapabilityError("least squares with a forward operator has no cheap prox")
        _check_step(sigma)
        return self.weight * (np.asarray(z, dtype=float) - sigma * self.v) / (self.weight + sigma)


class KullbackLeibler(Functional):
    """``KL(v | K x + r)`` summed over entries; ``K`` defaults to the identity.

    Smooth on the positive orthant when the background ``r`` is positive,
    with gradient Lipschitz constant ``max(v / r^2) ||K||^2``.
    """

    def __init__(self, v, background=0.0, operator: LinearMap | None = None):
        self.v = np.asarray(v, dtype=float).reshape(-1)
        if np.any(self.v < 0):
            raise ValueError("KL data must be non-negative")
        self.r = np.broadcast_to(np.asarray(background, dtype=float), self.v.shape).copy()
        if np.any(self.r < 0):
            raise ValueError("background must be non-negative")
        self.operator = operator
        self.prox_friendly = operator is None
        self.smooth = bool(np.all(self.r > 0))
        if self.smooth:
            knorm = 1.0 if operator is None else operator.norm()
            self.lipschitz = float(np.max(self.v / self.r**2)) * knorm**2

    def _forward(self, x):
        x = np.asarray(x, dtype=float)
        return x if self.operator is None else self.operator.apply(x)

    def __call__(self, x):
        return float(np.sum(kl_divergence(self.v, self._forward(x) + self.r)))

    def gradient(self, x):
        u = self._forward(x) + self.r
        if np.any(u <= 0):
            raise ValueError("KL gradient requested outside the domain")
        g = 1.0 - self.v / u
        return g if self.operator is None else self.operator.adjoint(g)

    def prox(self, z, tau):
        if self.operator is not None:
            raise CapabilityError("KL with a forward operator has no cheap prox")
        _check_step(tau)
        z = np.asarray(z, dtype=float)
        b = self.r + z - tau
        u = 0.5 * (b + np.sqrt(b**2 + 4 * tau * self.v))
        u = np.maximum(u, KL_FLOOR)
        return u - self.r


def isotropic_tv(grad: Gradient2D, u) -> float:
    g = grad.apply(u).reshape(2, -1)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


class HuberTV(Functional):
    """``lam * sum_p huber_gamma(||(grad u)_p||_2)``, a smooth TV surrogate."""

    smooth = True

    def __init__(self, gamma: float, lam: float = 1.0, grad: Gradient2D | None = None,
                 shape: Sequence[int] | None = None):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        if grad is None:
            if shape is None:
                raise ValueError("need a gradient operator or an image shape")
            grad = Gradient2D(*shape)
        self.gamma = float(gamma)
        self.lam = float(lam)
        self.grad = grad
        self.lipschitz = self.lam * 8.0 / self.gamma

    def __call__(self, x):
        g = self.grad.apply(x).reshape(2, -1)
        return self.lam * float(np.sum(huber(np.sqrt(g[0] ** 2 + g[1] ** 2), self.gamma)))

    def gradient(self, x):
        g = self.grad.apply(x).reshape(2, -1)
        mag = np.sqrt(g[0] ** 2 + g[1] ** 2)
        return self.lam * self.grad.adjoint((g / np.maximum(mag, self.gamma)).reshape(-1))


def _project_unit_field(p):
    mag = np.sqrt(p[0] ** 2 + p[1] ** 2)
    return p / np.maximum(1.0, mag)


def tv_prox_fgp(lam: float, z, tau: float, iters: int = 100, warm=None,
                shape: Sequence[int] | None = None, lower=None, upper=None):
    """Approximate ``prox`` of ``tau*lam*TV + box`` by fast gradient projection on the dual.

    Parameters
    ----------
    lam, tau : float
        The threshold is ``theta = tau * lam``.
    z : ndarray
        Flat image of shape ``shape``.
    iters : int
        Number of dual FISTA iterations.
    warm : ndarray, optional
        Dual field ``(2, h, w)`` from an earlier call.
    lower, upper : float, optional
        Box constraint applied inside the dual loop.

    Returns
    -------
    u : ndarray
        Primal estimate.
    p : ndarray
        Dual field, reusable as ``warm``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    z = np.asarray(z, dtype=float).reshape(-1)
    if shape is None:
        side = int(round(np.sqrt(z.size)))
        if side * side != z.size:
            raise ShapeError("cannot infer image shape")
        shape = (side, side)
    h, w = shape
    lo = -np.inf if lower is None else lower
    hi = np.inf if upper is None else upper
    theta = tau * lam
    if theta <= 0:
        return np.clip(z, lo, hi), (np.zeros((2, h, w)) if warm is None else warm)
    grad = Gradient2D(h, w)
    p = np.zeros((2, h, w)) if warm is None else np.array(warm, dtype=float).reshape(2, h, w)
    r = p.copy()
    t = 1.0
    step = 1.0 / (8.0 * theta)
    for _ in range(iters):
        u = np.clip(z - theta * grad._adjoint(r.reshape(-1)), lo, hi)
        p_new = _project_unit_field(r + step * grad._apply(u).reshape(2, h, w))
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        r = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
    u = np.clip(z - theta * grad._adjoint(p.reshape(-1)), lo, hi)
    return u, p


class TotalVariation(Functional):
    """Isotropic ``lam * TV(u)`` plus an optional box constraint.

    The prox runs ``inner_iters`` FGP iterations and keeps the dual field for
    warm starts; call :meth:`fresh` before reusing the instance in a new solve.
    """

    prox_friendly = True

    def __init__(self, lam: float, shape: Sequence[int], lower=None, upper=None,
                 inner_iters: int = 100, warm_start: bool = True):
        self.lam = float(lam)
        self.shape = tuple(int(s) for s in shape)
        self.lower, self.upper = lower, upper
        self.inner_iters = int(inner_iters)
        self.warm_start = warm_start
        self.grad = Gradient2D(*self.shape)
        self._dual = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo = -np.inf if self.lower is None else self.lower
        hi = np.inf if self.upper is None else self.upper
        if np.any(x < lo) or np.any(x > hi):
            return np.inf
        return self.lam * isotropic_tv(self.grad, x)

    def prox(self, z, tau, iters: int | None = None):
        _check_step(tau)
        u, p = tv_prox_fgp(self.lam, z, tau, iters or self.inner_iters,
                           warm=self._dual if self.warm_start else None,
                           shape=self.shape, lower=self.lower, upper=self.upper)
        if self.warm_start:
            self._dual = p
        return u

    def reset(self):
        self._dual = None

    def fresh(self):
        c = copy.copy(self)
        c._dual = None
        return c


class SeparableSum(Functional):
    """``F(x_1, ..., x_m) = sum_j F_j(x_j)`` on a concatenated vector."""

    def __init__(self, terms: Sequence[Functional], sizes: Sequence[int]):
        if len(terms) != len(sizes):
            raise ValueError("one size per term")
        self.terms = list(terms)
        self.sizes = [int(s) for s in sizes]
        self._off = np.concatenate([[0], np.cumsum(self.sizes)])
        self.smooth = all(t.smooth for t in self.terms)
        self.prox_friendly = all(t.prox_friendly for t in self.terms)
        if self.smooth:
            self.lipschitz = max(t.lipschitz or 0.0 for t in self.terms)

    def split(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self._off[-1]:
            raise ShapeError(f"expected {self._off[-1]} entries, got {x.size}")
        return [x[self._off[j]:self._off[j + 1]] for j in range(len(self.terms))]

    def __call__(self, x):
        return float(sum(t(xj) for t, xj in zip(self.terms, self.split(x))))

    def gradient(self, x):
        return np.concatenate([t.gradient(xj) for t, xj in zip(self.terms, self.split(x))])

    def prox(self, z, tau):
        return np.concatenate([t.prox(zj, tau) for t, zj in zip(self.terms, self.split(z))])

    def prox_conjugate(self, z, sigma):
        return np.concatenate([t.prox_conjugate(zj, sigma) for t, zj in zip(self.terms, self.split(z))])

    def fresh(self):
        return SeparableSum([t.fresh() for t in self.terms], self.sizes)


class AffineComposed(Functional):
    """``F(A x)`` for an operator with ``A A* = alpha I``.

    The prox uses ``z + A*(prox_{alpha tau F}(A z) - A z) / alpha``.  The Gram
    identity is checked on five random vectors at construction.
    """

    def __init__(self, inner: Functional, operator: LinearMap, alpha: float, seed: int = 0):
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        rng = np.random.Generator(np.random.PCG64(seed))
        for _ in range(5):
            y = rng.standard_normal(operator.codomain.size)
            lhs = operator.apply(operator.adjoint(y))
            if np.linalg.norm(lhs - alpha * y) > 1e-8 * max(1.0, np.linalg.norm(alpha * y)):
                raise ValueError("operator does not satisfy A A* = alpha I")
        self.inner = inner
        self.operator = operator
        self.alpha = float(alpha)
        self.prox_friendly = inner.prox_friendly
        self.smooth = inner.smooth
        if inner.smooth and inner.lipschitz is not None:
            self.lipschitz = inner.lipschitz * self.alpha

    def __call__(self, x):
        return self.inner(self.operator.apply(x))

    def gradient(self, x):
        return self.operator.adjoint(self.inner.gradient(self.operator.apply(x)))

    def prox(self, z, tau):
        _check_step(tau)
        z = np.asarray(z, dtype=float)
        Az = self.operator.apply(z)
        return z + self.operator.adjoint(self.inner.prox(Az, self.alpha * tau) - Az) / self.alpha
