"""Experiment configuration, problem builders and reference solutions."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ..functionals import (Box, Functional, GroupL1, L1Norm, LeastSquares, SeparableSum, TotalVariation,
                           ZeroFunctional)
from ..linops import (IdentityOperator, LinearMap, MatrixOperator, Shape, make_circulant_blur,
                      make_grad_2d, make_parallel_radon, make_tgv_operator)
from ..sampling import SAMPLER_KINDS, partition_contiguous, partition_staggered, rng_for
from ..solvers import PartitionedProblem, SolverConfig, run_fista, run_pdhg
from .data import (add_gaussian_noise, beer_lambert_noise, gen_piecewise_image, gen_shepp_logan,
                   gen_sparse_spikes)

__all__ = [
    "EXPERIMENTS",
    "ALGORITHMS",
    "ConfigError",
    "ExperimentConfig",
    "Problem",
    "build_problem",
    "compute_reference",
    "Reference",
]

EXPERIMENTS = ("spikes-deblur", "ct-shepp-logan", "denoise-tv", "denoise-tgv", "tridiag-ls")
ALGORITHMS = ("gd", "nag", "nag-sc", "pgd", "fista", "pdhg", "admm", "condat-vu", "pd3o",
              "sgd", "saga", "sag", "svrg", "lsvrg", "acc-svrg", "acc-saga", "spdhg", "adagrad", "adam")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``keys`` lists the offending entries."""

    def __init__(self, keys, message=""):
        self.keys = sorted(keys)
        super().__init__(message or f"invalid configuration keys: {', '.join(self.keys)}")


@dataclass
class ExperimentConfig:
    """Every parameter of a run.  ``None`` means the per-experiment default."""

    experiment: str = "spikes-deblur"
    seed: int = 0
    # spikes
    d: int = 1000
    kappa: int = 5
    n_spikes: int = 20
    # images
    size: int | None = None
    n_angles: int = 120
    n_det: int | None = None
    noise: str = "gaussian"
    noise_level: float | None = None
    I0: float = 5000.0
    attenuation: float | None = None
    reg: float | None = None
    reg2: float | None = None
    tv_iters: int = 100
    # solver
    algorithm: str = "pgd"
    tau: float | None = None
    sigma: float | None = None
    schedule: str = "constant"
    schedule_c: float = 0.01
    schedule_power: float = 1.0
    restart: str = "off"
    sampler: str = "uniform"
    n_subsets: int | None = None
    saga_form: str = "standard"
    allow_large_step: bool = False
    warm_start_passes: float = 0.0
    svrg_inner: int | None = None
    loopless_p: float | None = None
    passes: float = 20.0
    log_every: float = 1.0
    target_rel_dist: float | None = None
    record_wall_time: bool = False
    # reference
    reference_iters: int = 5000
    reference_tol: float = 1e-9
    out: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        bad = [k for k in data if k not in known]
        if bad:
            raise ConfigError(bad, f"unknown configuration keys: {', '.join(sorted(bad))}")
        cfg = cls()
        for k, v in data.items():
            setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    def validate(self) -> None:
        bad = []

        def expect(name, ok):
            if not ok:
                bad.append(name)

        def num(v, lo=None, allow_none=False, integer=False):
            if v is None:
                return allow_none
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                return False
            if integer and (not float(v).is_integer()):
                return False
            return lo is None or v >= lo

        expect("experiment", self.experiment in EXPERIMENTS)
        expect("algorithm", self.algorithm in ALGORITHMS)
        expect("seed", num(self.seed, 0, integer=True) and self.seed < 2**64)
        expect("d", num(self.d, 1, integer=True))
        expect("kappa", num(self.kappa, 1, integer=True) and int(self.kappa) % 2 == 1
               and self.kappa <= self.d)
        expect("n_spikes", num(self.n_spikes, 1, integer=True) and self.n_spikes <= self.d)
        expect("size", num(self.size, 16, allow_none=True, integer=True))
        expect("n_angles", num(self.n_angles, 1, integer=True))
        expect("n_det", num(self.n_det, 1, allow_none=True, integer=True))
        expect("noise", self.noise in ("gaussian", "beer-lambert"))
        expect("noise_level", num(self.noise_level, 0, allow_none=True))
        expect("I0", num(self.I0) and self.I0 > 0)
        expect("attenuation", num(self.attenuation, allow_none=True) and (self.attenuation is None
                                                                         or self.attenuation > 0))
        expect("reg", num(self.reg, 0, allow_none=True))
        expect("reg2", num(self.reg2, 0, allow_none=True))
        expect("tv_iters", num(self.tv_iters, 1, integer=True))
        expect("tau", self.tau is None or (num(self.tau) and self.tau > 0))
        expect("sigma", self.sigma is None or (num(self.sigma) and self.sigma > 0))
        expect("schedule", self.schedule in ("constant", "sgd-decay"))
        expect("schedule_c", num(self.schedule_c, 0))
        expect("schedule_power", num(self.schedule_power) and self.schedule_power > 0)
        expect("restart", self.restart in ("off", "function", "gradient"))
        expect("sampler", self.sampler in SAMPLER_KINDS and self.sampler != "importance")
        expect("n_subsets", num(self.n_subsets, 1, allow_none=True, integer=True))
        expect("saga_form", self.saga_form in ("standard", "modified"))
        expect("allow_large_step", isinstance(self.allow_large_step, bool))
        expect("warm_start_passes", num(self.warm_start_passes, 0))
        expect("svrg_inner", num(self.svrg_inner, 1, allow_none=True, integer=True))
        expect("loopless_p", self.loopless_p is None or (num(self.loopless_p) and 0 < self.loopless_p <= 1))
        expect("passes", num(self.passes) and self.passes > 0)
        expect("log_every", num(self.log_every) and self.log_every > 0)
        expect("target_rel_dist", num(self.target_rel_dist, 0, allow_none=True))
        expect("record_wall_time", isinstance(self.record_wall_time, bool))
        expect("reference_iters", num(self.reference_iters, 1, integer=True))
        expect("reference_tol", num(self.reference_tol, 0))
        expect("out", self.out is None or isinstance(self.out, str))
        if bad:
            raise ConfigError(bad)
        for name in ("seed", "d", "kappa", "n_spikes", "n_angles", "tv_iters", "reference_iters"):
            setattr(self, name, int(getattr(self, name)))
        for name in ("size", "n_det", "n_subsets", "svrg_inner"):
            if getattr(self, name) is not None:
                setattr(self, name, int(getattr(self, name)))


@dataclass
class Problem:
    """A built experiment in every form the solvers need.

    ``g, h``: composite form ``g(x) + h(x)`` (``h`` smooth, ``None`` if the
    problem has no such split).  ``pd``: ``(f, A, g)`` for ``f(Ax) + g(x)``.
    ``three``: ``(f, A, g, h)`` for the three-term solvers.  ``partitioned``:
    finite-sum form for the stochastic solvers.
    """

    name: str
    cfg: ExperimentConfig
    x0: np.ndarray
    x_true: np.ndarray
    data: np.ndarray
    objective: Callable[[np.ndarray], float]
    g: Functional | None = None
    h: Functional | None = None
    pd: tuple | None = None
    three: tuple | None = None
    partitioned: PartitionedProblem | None = None
    image_shape: tuple | None = None
    extras: dict = field(default_factory=dict)

    def image(self, x) -> np.ndarray:
        """Part of ``x`` to save as an image."""
        x = np.asarray(x, dtype=float)
        if self.image_shape is None:
            return x.reshape(1, -1)
        h, w = self.image_shape
        return x[: h * w].reshape(h, w)


def _tridiagonal(d: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(d - 1), 2 * np.ones(d), -np.ones(d - 1)], [-1, 0, 1], format="csr")


def _build_spikes(cfg: ExperimentConfig) -> Problem:
    d = cfg.d
    K = make_circulant_blur(d, cfg.kappa)
    x_true = gen_sparse_spikes(d, cfg.n_spikes, cfg.seed)
    sigma = 1e-2 if cfg.noise_level is None else cfg.noise_level
    v = add_gaussian_noise(K.apply(x_true), sigma, cfg.seed)
    mu = 0.5 * float(np.max(np.abs(K.adjoint(v)))) if cfg.reg is None else cfg.reg
    g = L1Norm(mu)
    h = LeastSquares(v, 1.0, K, lipschitz=1.0)
    n = d if cfg.n_subsets is None else cfg.n_subsets
    part = partition_contiguous(d, n)
    pp = PartitionedProblem.from_rows(K, v, part, g)
    return Problem("spikes-deblur", cfg, np.zeros(d), x_true, v, lambda x: g(x) + h(x), g=g, h=h,
                   pd=(LeastSquares(v), K, g),
                   three=(L1Norm(mu), IdentityOperator(Shape.flat(d)), ZeroFunctional(), h),
                   partitioned=pp, extras={"mu": mu, "sigma": sigma, "operator": K})


def _build_ct(cfg: ExperimentConfig) -> Problem:
    size = 64 if cfg.size is None else cfg.size
    K = make_parallel_radon(size, size, cfg.n_angles, cfg.n_det)
    x_true = gen_shepp_logan(size).reshape(-1)
    clean = K.apply(x_true)
    extras = {"operator": K}
    if cfg.noise == "gaussian":
        sigma = 1.0 if cfg.noise_level is None else cfg.noise_level
        v = add_gaussian_noise(clean, sigma, cfg.seed)
        extras["sigma"] = sigma
    else:
        att = 4.0 / size if cfg.attenuation is None else cfg.attenuation
        v = beer_lambert_noise(att * clean, cfg.I0, cfg.seed) / att
        extras.update(attenuation=att, I0=cfg.I0)
    alpha = 2.0 if cfg.reg is None else cfg.reg
    g = TotalVariation(alpha, (size, size), lower=0.0, inner_iters=cfg.tv_iters)
    n = 10 if cfg.n_subsets is None else cfg.n_subsets
    part = partition_staggered(cfg.n_angles, n)
    pp = PartitionedProblem.from_rows(K, v, part, g, rows_of=K.angle_rows)
    L = pp.smoothness.L
    h = LeastSquares(v, 1.0, K, lipschitz=L)
    grad = make_grad_2d(size, size)
    extras.update(alpha=alpha, partition=part)
    return Problem("ct-shepp-logan", cfg, np.zeros(size * size), x_true, v, lambda x: g(x) + h(x),
                   g=g, h=h, pd=(LeastSquares(v), K, g),
                   three=(GroupL1(alpha, 2), grad, Box(0.0, np.inf), h),
                   partitioned=pp, image_shape=(size, size), extras=extras)


def _build_denoise_tv(cfg: ExperimentConfig) -> Problem:
    size = 32 if cfg.size is None else cfg.size
    x_true = gen_piecewise_image(size).reshape(-1)
    sigma = 0.1 if cfg.noise_level is None else cfg.noise_level
    v = add_gaussian_noise(x_true, sigma, cfg.seed)
    alpha = 0.1 if cfg.reg is None else cfg.reg
    g = TotalVariation(alpha, (size, size), inner_iters=cfg.tv_iters)
    I = IdentityOperator(Shape.image(size, size))
    h = LeastSquares(v, 1.0, I, lipschitz=1.0)
    grad = make_grad_2d(size, size)
    n = size if cfg.n_subsets is None else cfg.n_subsets
    pp = PartitionedProblem.from_rows(I, v, partition_contiguous(size * size, n), g)
    return Problem("denoise-tv", cfg, np.zeros(size * size), x_true, v, lambda x: g(x) + h(x),
                   g=g, h=h, pd=(GroupL1(alpha, 2), grad, LeastSquares(v)),
                   three=(GroupL1(alpha, 2), grad, ZeroFunctional(), h),
                   partitioned=pp, image_shape=(size, size), extras={"alpha": alpha, "sigma": sigma})


def _build_denoise_tgv(cfg: ExperimentConfig) -> Problem:
    size = 32 if cfg.size is None else cfg.size
    hw = size * size
    x_true = gen_piecewise_image(size, linear=True).reshape(-1)
    sigma = 0.05 if cfg.noise_level is None else cfg.noise_level
    v = add_gaussian_noise(x_true, sigma, cfg.seed)
    a1 = 0.1 if cfg.reg is None else cfg.reg
    a0 = 2 * a1 if cfg.reg2 is None else cfg.reg2
    A = make_tgv_operator(size, size)
    f = SeparableSum([GroupL1(a1, 2), GroupL1(a0, 4)], [2 * hw, 4 * hw])
    g = SeparableSum([LeastSquares(v), ZeroFunctional()], [hw, 2 * hw])
    x0 = np.zeros(3 * hw)
    # padding x_true with a zero field keeps rel_dist meaningful for the image part
    return Problem("denoise-tgv", cfg, x0, np.concatenate([x_true, np.zeros(2 * hw)]), v,
                   lambda x: f(A.apply(x)) + g(x), pd=(f, A, g), image_shape=(size, size),
                   extras={"alpha1": a1, "alpha0": a0, "sigma": sigma})


def _build_tridiag(cfg: ExperimentConfig) -> Problem:
    d = 100
    K = MatrixOperator(_tridiagonal(d))
    v = rng_for(cfg.seed, "signal").standard_normal(d)
    g = ZeroFunctional()
    Kinv = np.linalg.solve(_tridiagonal(d).toarray(), v)
    L = float(np.linalg.norm(_tridiagonal(d).toarray(), 2) ** 2)
    h = LeastSquares(v, 1.0, K, lipschitz=L)
    n = 10 if cfg.n_subsets is None else cfg.n_subsets
    pp = PartitionedProblem.from_rows(K, v, partition_contiguous(d, n), g)
    return Problem("tridiag-ls", cfg, np.zeros(d), Kinv, v, lambda x: h(x), g=g, h=h,
                   pd=(LeastSquares(v), K, g), partitioned=pp,
                   extras={"operator": K, "mu_sc": float(np.linalg.eigvalsh(_tridiagonal(d).toarray())[0] ** 2)})


_BUILDERS = {
    "spikes-deblur": _build_spikes,
    "ct-shepp-logan": _build_ct,
    "denoise-tv": _build_denoise_tv,
    "denoise-tgv": _build_denoise_tgv,
    "tridiag-ls": _build_tridiag,
}


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Operators, functionals, partition and starting point (``x0 = 0``) for ``cfg``."""
    cfg.validate()
    return _BUILDERS[cfg.experiment](cfg)


@dataclass
class Reference:
    x: np.ndarray
    phi: float
    iterations: int
    converged: bool


def compute_reference(problem: Problem, budget: int | None = None, tol: float | None = None,
                      polish_tv_iters: int = 2000) -> Reference:
    """High-accuracy minimiser and optimal value.

    FISTA with gradient restart on ``g + h`` (PDHG for problems with
    only a primal-dual form) until the relative iterate change is at most
    ``tol`` or ``budget`` iterations.  For TV regularisers the final point is
    refined with proximal-gradient steps using ``polish_tv_iters`` FGP
    iterations per prox.
    """
    budget = problem.cfg.reference_iters if budget is None else int(budget)
    tol = problem.cfg.reference_tol if tol is None else tol
    if problem.h is not None:
        g = problem.g.fresh()
        L = float(problem.h.lipschitz)
        cfg = SolverConfig(tau=1.0 / L, restart="gradient", max_iter=budget, max_passes=budget + 1,
                           tol=tol, log_every=budget + 1)
        tr = run_fista(g, problem.h, cfg, problem.x0)
        x = tr.x
        if isinstance(g, TotalVariation):
            polish = g.fresh()
            for _ in range(20):
                x_new = polish.prox(x - problem.h.gradient(x) / L, 1.0 / L, iters=polish_tv_iters)
                if problem.objective(x_new) <= problem.objective(x):
                    x = x_new
        k = tr.final().k
        return Reference(x, float(problem.objective(x)), k, tr.stop_reason == "tol")
    f, A, g = problem.pd
    nA = A.norm(tol=1e-10, max_iter=5000)
    cfg = SolverConfig(tau=0.99 / nA, sigma=0.99 / nA, max_iter=budget, max_passes=budget + 1, tol=tol,
                       log_every=budget + 1)
    tr = run_pdhg(f, A, g.fresh(), cfg, problem.x0, norm_A=nA)
    return Reference(tr.x, float(problem.objective(tr.x)), tr.final().k, tr.stop_reason == "tol")
