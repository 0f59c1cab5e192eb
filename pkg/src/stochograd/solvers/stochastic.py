"""Stochastic solvers for ``g(x) + sum_i h_i(x)`` and ``sum_i f_i(A_i x) + g(x)``.

Work is counted in subset evaluations: one data pass equals ``n`` evaluations
of a term gradient (one application of ``K_i`` and ``K_i*``).  SAGA charges
one pass for filling its table, SVRG one pass per anchor refresh and two
evaluations per inner step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..functionals import Functional, KullbackLeibler, LeastSquares, kl_divergence
from ..linops import LinearMap, RowSubset
from ..sampling import Partition, Sampler, SmoothnessInfo, rng_for, smoothness_info
from ._kernels import modified_saga_rows_chunk
from .deterministic import IterateTrace, Recorder, SolverConfig, StepSizeWarning

__all__ = [
    "PartitionedProblem",
    "StepSchedule",
    "Estimator",
    "SGDEstimator",
    "SAGAEstimator",
    "SAGEstimator",
    "ModifiedSAGAEstimator",
    "SVRGEstimator",
    "make_estimator",
    "stochastic_gradient",
    "spdhg_step_guard",
    "run_sgd",
    "run_saga",
    "run_svrg",
    "run_accelerated_vr",
    "run_spdhg",
    "run_adaptive",
]

FIDELITIES = ("ls", "kl")


class PartitionedProblem:
    """Finite-sum problem ``g(x) + sum_i h_i(x)`` with ``h_i`` a data fit of ``K_i x``.

    ``h_i(x) = weight/2 ||K_i x - v_i||^2`` for ``fidelity='ls'`` and
    ``KL(v_i | K_i x + r_i)`` for ``'kl'``.  The same blocks define the dual
    form ``sum_i f_i(A_i x) + g(x)`` with ``A_i = K_i`` used by SPDHG.

    Parameters
    ----------
    operators : sequence of LinearMap
        Block operators ``K_i``.
    data : sequence of ndarray
        Data slices ``v_i``.
    g : Functional
        Prox-friendly regulariser.
    full_operator : LinearMap, optional
        Operator whose rows are the union of the blocks; used for cheap
        objective evaluation and ``L``.
    full_data : ndarray, optional
        Data matching ``full_operator``.
    """

    def __init__(self, operators: Sequence[LinearMap], data: Sequence[np.ndarray], g: Functional,
                 fidelity: str = "ls", background: Sequence[np.ndarray] | None = None,
                 weight: float = 1.0, full_operator: LinearMap | None = None,
                 full_data: np.ndarray | None = None, full_background=None):
        if fidelity not in FIDELITIES:
            raise ValueError(f"fidelity must be one of {FIDELITIES}")
        if len(operators) != len(data) or not operators:
            raise ValueError("need one data slice per operator")
        d = operators[0].domain.size
        for op, v in zip(operators, data):
            if op.domain.size != d or op.codomain.size != np.size(v):
                raise ValueError("block shapes are inconsistent")
        self.operators = list(operators)
        self.data = [np.asarray(v, dtype=float).reshape(-1) for v in data]
        self.g = g
        self.fidelity = fidelity
        self.weight = float(weight)
        self.d = d
        if fidelity == "kl":
            if background is None:
                raise ValueError("KL terms need a background")
            self.background = [np.broadcast_to(np.asarray(r, dtype=float), v.shape).copy()
                               for r, v in zip(background, self.data)]
            if any(np.any(r <= 0) for r in self.background):
                raise ValueError("KL terms need a positive background to be smooth")
        else:
            self.background = None
        if (full_operator is None) != (full_data is None):
            raise ValueError("full_operator and full_data go together")
        self.full_operator = full_operator
        self.full_data = None if full_data is None else np.asarray(full_data, dtype=float).reshape(-1)
        self.full_background = full_background
        self._smoothness = None
        self._fast = [self._fast_rows(op) for op in self.operators]

    @classmethod
    def from_rows(cls, operator: LinearMap, data, partition: Partition | Sequence, g: Functional,
                  fidelity: str = "ls", background=None, weight: float = 1.0,
                  rows_of=None) -> "PartitionedProblem":
        """Split ``operator`` by row index sets.

        ``rows_of(subset)`` maps a subset of the partition to row indices
        (e.g. the sinogram rows of a set of angles); the identity by default.
        """
        data = np.asarray(data, dtype=float).reshape(-1)
        subsets = partition.subsets if isinstance(partition, Partition) else partition
        ops, vs, rs = [], [], []
        for s in subsets:
            rows = np.asarray(s if rows_of is None else rows_of(s), dtype=np.int64)
            ops.append(RowSubset(operator, rows))
            vs.append(data[rows])
            if background is not None:
                rs.append(np.broadcast_to(np.asarray(background, dtype=float), data.shape)[rows])
        return cls(ops, vs, g, fidelity=fidelity, background=rs if background is not None else None,
                   weight=weight, full_operator=operator, full_data=data,
                   full_background=background)

    @staticmethod
    def _fast_rows(op):
        # single-row sparse blocks: use index/value arrays instead of scipy calls
        M = getattr(op, "matrix", None)
        if isinstance(op, RowSubset) and M is not None and sp.issparse(M) and M.shape[0] == 1:
            M = M.tocsr()
            return (M.indices.copy(), M.data.copy())
        return None

    @property
    def n(self) -> int:
        return len(self.operators)

    @property
    def term_weights(self) -> list[float]:
        if self.fidelity == "ls":
            return [self.weight] * self.n
        return [float(np.max(v / r**2)) for v, r in zip(self.data, self.background)]

    @property
    def smoothness(self) -> SmoothnessInfo:
        if self._smoothness is None:
            self._smoothness = smoothness_info(self)
        return self._smoothness

    def set_smoothness(self, info: SmoothnessInfo) -> None:
        self._smoothness = info

    def forward(self, i: int, x) -> np.ndarray:
        f = self._fast[i]
        if f is not None:
            return np.array([np.dot(f[1], x[f[0]])])
        return self.operators[i].apply(x)

    def adjoint(self, i: int, s) -> np.ndarray:
        f = self._fast[i]
        if f is not None:
            out = np.zeros(self.d)
            out[f[0]] = f[1] * s[0]
            return out
        return self.operators[i].adjoint(s)

    def dual_gradient(self, i: int, a) -> np.ndarray:
        """Gradient of the data-space function ``hbar_i`` at ``a = K_i x``."""
        if self.fidelity == "ls":
            return self.weight * (a - self.data[i])
        return 1.0 - self.data[i] / (a + self.background[i])

    def term_gradient(self, i: int, x) -> np.ndarray:
        return self.adjoint(i, self.dual_gradient(i, self.forward(i, x)))

    def term_value(self, i: int, x) -> float:
        a = self.forward(i, x)
        if self.fidelity == "ls":
            r = a - self.data[i]
            return 0.5 * self.weight * float(np.dot(r, r))
        return float(np.sum(kl_divergence(self.data[i], a + self.background[i])))

    def h(self, x) -> float:
        if self.full_operator is not None:
            a = self.full_operator.apply(x)
            if self.fidelity == "ls":
                r = a - self.full_data
                return 0.5 * self.weight * float(np.dot(r, r))
            r = np.broadcast_to(np.asarray(self.full_background, dtype=float), a.shape)
            return float(np.sum(kl_divergence(self.full_data, a + r)))
        return float(sum(self.term_value(i, x) for i in range(self.n)))

    def full_gradient(self, x) -> np.ndarray:
        if self.full_operator is not None and self.fidelity == "ls":
            return self.weight * self.full_operator.adjoint(self.full_operator.apply(x) - self.full_data)
        return sum(self.term_gradient(i, x) for i in range(self.n))

    def objective(self, x) -> float:
        return self.g(x) + self.h(x)

    def smooth_functional(self) -> Functional:
        """``h`` as a single functional (for the deterministic solvers)."""
        if self.full_operator is None:
            raise ValueError("needs a full operator")
        L = self.smoothness.L
        if self.fidelity == "ls":
            return LeastSquares(self.full_data, self.weight, self.full_operator, lipschitz=L)
        kl = KullbackLeibler(self.full_data, self.full_background, self.full_operator)
        kl.lipschitz = L
        return kl

    def dual_functionals(self) -> list[Functional]:
        """``f_i`` with ``h_i = f_i(K_i x)``, for SPDHG."""
        if self.fidelity == "ls":
            return [LeastSquares(v, self.weight) for v in self.data]
        return [KullbackLeibler(v, r) for v, r in zip(self.data, self.background)]


@dataclass
class StepSchedule:
    """``constant``: ``tau0``; ``sgd-decay``: ``tau0 / (1 + c k^power / n)``."""

    kind: str = "constant"
    tau0: float = 1.0
    c: float = 0.01
    power: float = 1.0
    n: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "sgd-decay"):
            raise ValueError("schedule kind must be 'constant' or 'sgd-decay'")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if self.kind == "sgd-decay" and (self.c < 0 or self.power <= 0):
            raise ValueError("decay needs c >= 0 and power > 0")

    def __call__(self, k: int) -> float:
        if self.kind == "constant":
            return self.tau0
        if self.power == 1:
            return self.tau0 / (1.0 + self.c * (k / self.n))
        return self.tau0 / (1.0 + self.c * k**self.power / self.n)

    def satisfies_robbins_monro(self) -> bool:
        return self.kind == "sgd-decay" and self.c > 0 and 0.5 < self.power <= 1


class Estimator:
    """Stochastic estimate of ``grad h``; ``direction`` returns ``(d, cost)`` with cost in subset evaluations."""

    name = ""
    unbiased = True

    def __init__(self, problem: PartitionedProblem):
        self.p = problem
        self.n = problem.n
        self.initialised = False

    def init(self, x) -> int:
        self.initialised = True
        return 0

    def direction(self, x, i: int, update: bool = True):
        raise NotImplementedError

    def _check(self):
        if not self.initialised:
            raise RuntimeError(f"{self.name} estimator used before init()")


class SGDEstimator(Estimator):
    name = "sgd"

    def direction(self, x, i, update=True):
        self._check()
        return self.n * self.p.term_gradient(i, x), 1


class SAGAEstimator(Estimator):
    """Table of full-space gradients ``gamma_i`` and their running sum."""

    name = "saga"
    scale_by_n = True

    def init(self, x) -> int:
        self.table = np.stack([self.p.term_gradient(i, x) for i in range(self.n)])
        self.total = self.table.sum(axis=0)
        self.initialised = True
        return self.n

    def fill(self, x) -> None:
        self.init(x)

    def direction(self, x, i, update=True):
        self._check()
        gi = self.p.term_gradient(i, x)
        diff = gi - self.table[i]
        d = (self.n * diff if self.scale_by_n else diff) + self.total
        if update:
            self.total = self.total + diff
            self.table[i] = gi
        return d, 1

    def table_sum_error(self) -> float:
        return float(np.max(np.abs(self.total - self.table.sum(axis=0))))


class SAGEstimator(SAGAEstimator):
    """SAGA without the factor ``n``: biased, lower variance."""

    name = "sag"
    scale_by_n = False
    unbiased = False


class ModifiedSAGAEstimator(Estimator):
    """SAGA storing data-space slots ``y_i = grad hbar_i(K_i x)`` instead of full gradients."""

    name = "modified-saga"

    def init(self, x) -> int:
        self.slots = [self.p.dual_gradient(i, self.p.forward(i, x)) for i in range(self.n)]
        self.total = np.zeros(self.p.d)
        for i, y in enumerate(self.slots):
            self.total = self.total + self.p.adjoint(i, y)
        self.initialised = True
        return self.n

    def direction(self, x, i, update=True):
        self._check()
        y_bar = self.p.dual_gradient(i, self.p.forward(i, x))
        g_tilde = self.p.adjoint(i, y_bar - self.slots[i])
        d = self.n * g_tilde + self.total
        if update:
            self.total = self.total + g_tilde
            self.slots[i] = y_bar
        return d, 1

    def table_sum_error(self) -> float:
        ref = sum(self.p.adjoint(i, y) for i, y in enumerate(self.slots))
        return float(np.max(np.abs(self.total - ref)))


class SVRGEstimator(Estimator):
    """Anchor ``xbar`` with full gradient ``gammabar``; two subset evaluations per step."""

    name = "svrg"

    def init(self, x) -> int:
        return self.set_anchor(x)

    def set_anchor(self, x) -> int:
        self.anchor = np.array(x, dtype=float)
        self.anchor_grad = sum(self.p.term_gradient(i, self.anchor) for i in range(self.n))
        self.initialised = True
        return self.n

    def direction(self, x, i, update=True):
        self._check()
        d = self.n * (self.p.term_gradient(i, x) - self.p.term_gradient(i, self.anchor)) + self.anchor_grad
        return d, 2


ESTIMATORS = {
    "sgd": SGDEstimator,
    "saga": SAGAEstimator,
    "sag": SAGEstimator,
    "modified-saga": ModifiedSAGAEstimator,
    "svrg": SVRGEstimator,
}


def make_estimator(name: str, problem: PartitionedProblem) -> Estimator:
    try:
        return ESTIMATORS[name](problem)
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}") from None


def stochastic_gradient(estimator: Estimator, x, i: int, update: bool = True):
    """Direction of ``estimator`` at ``x`` for subset ``i``; the state is updated unless ``update=False``."""
    d, _ = estimator.direction(np.asarray(x, dtype=float), i, update=update)
    return d, estimator


def _warn(cfg, cond, msg):
    if cfg.warn and not cond:
        warnings.warn(msg, StepSizeWarning, stacklevel=3)


def _x0(problem, x0):
    return np.zeros(problem.d) if x0 is None else np.array(x0, dtype=float).reshape(-1)


def _default_sampler(problem, sampler, seed=0):
    if sampler is None:
        return Sampler("uniform", problem.n, seed)
    if sampler.n != problem.n:
        raise ValueError("sampler size does not match the number of subsets")
    return sampler


def _sgd_phase(problem, g, x, sampler, rec, passes, tau, units, k):
    """Plain SGD for ``passes`` data passes (warm start for the VR methods)."""
    est = SGDEstimator(problem)
    est.init(x)
    target = units + int(round(passes * problem.n))
    while units < target:
        i = next(sampler)
        d, c = est.direction(x, i)
        x = g.prox(x - tau * d, tau)
        units += c
        k += 1
        if rec.log(k, units, x):
            return x, units, k, True
    return x, units, k, False


def _loop(problem, g, est, schedule, sampler, cfg, x, rec, units, k, after_step=None):
    with np.errstate(all="ignore"):
        while rec.budget_left(units, k):
            i = next(sampler)
            d, c = est.direction(x, i)
            tau = schedule(k)
            x = g.prox(x - tau * d, tau)
            units += c
            k += 1
            if after_step is not None:
                units += after_step(k, x)
            if rec.log(k, units, x):
                return x, units, k, True
    return x, units, k, False


def run_sgd(problem: PartitionedProblem, schedule: StepSchedule | None = None,
            sampler: Sampler | None = None, cfg: SolverConfig | None = None, x0=None) -> IterateTrace:
    """Proximal SGD with direction ``n grad h_i(x)``.

    Default schedule: constant ``1/(2 n L_max)``.
    """
    cfg = cfg or SolverConfig()
    g = problem.g.fresh()
    sampler = _default_sampler(problem, sampler)
    if schedule is None:
        tau0 = cfg.tau if cfg.tau is not None else 1.0 / (2 * problem.n * problem.smoothness.L_max)
        schedule = StepSchedule("constant", tau0, n=problem.n)
    x = _x0(problem, x0)
    rec = Recorder(cfg, lambda u: g(u) + problem.h(u), units_per_pass=problem.n)
    if rec.log(0, 0, x, force=True):
        return rec.trace
    est = SGDEstimator(problem)
    est.init(x)
    x, units, k, stopped = _loop(problem, g, est, schedule, sampler, cfg, x, rec, 0, 0)
    return rec.trace if stopped else rec.finish(k, units, x)


def run_saga(problem: PartitionedProblem, cfg: SolverConfig | None = None, sampler: Sampler | None = None,
             form: str = "standard", estimator: str | None = None, allow_large_step: bool = False,
             warm_start_passes: float = 0, x0=None, compiled: bool | None = None) -> IterateTrace:
    """SAGA (or SAG with ``estimator='sag'``).

    ``form='modified'`` stores data-space slots instead of full gradients.
    The table is filled at the starting point and charged one data pass.
    Steps above ``1/(3 n L_max)`` warn unless ``allow_large_step``.
    The modified form on single-row least-squares terms with an l1 or zero
    ``g`` uses a specialised loop, compiled with numba when available
    (``compiled=False`` forces the numpy version).
    """
    cfg = cfg or SolverConfig()
    if form not in ("standard", "modified"):
        raise ValueError("form must be 'standard' or 'modified'")
    name = estimator or ("modified-saga" if form == "modified" else "saga")
    if name not in ("saga", "sag", "modified-saga"):
        raise ValueError("run_saga supports the saga, sag and modified-saga estimators")
    g = problem.g.fresh()
    sampler = _default_sampler(problem, sampler)
    n, L_max = problem.n, problem.smoothness.L_max
    tau = cfg.tau if cfg.tau is not None else 1.0 / (3 * n * L_max)
    if not allow_large_step:
        _warn(cfg, tau * 3 * n * L_max <= 1 + 1e-12, "SAGA step exceeds 1/(3 n L_max)")
    x = _x0(problem, x0)
    rec = Recorder(cfg, lambda u: g(u) + problem.h(u), units_per_pass=n)
    units = k = 0
    if warm_start_passes > 0:
        if rec.log(0, 0, x, force=True):
            return rec.trace
        x, units, k, stopped = _sgd_phase(problem, g, x, sampler, rec, warm_start_passes,
                                          1.0 / (2 * n * L_max), units, k)
        if stopped:
            return rec.trace
    est = make_estimator(name, problem)
    units += est.init(x)
    if rec.log(k, units, x, force=True):
        return rec.trace
    if name == "modified-saga" and _rows_fast_ok(problem, g):
        x, units, k, stopped = _modified_saga_rows(problem, g, est, tau, sampler, x, rec, units, k,
                                                   compiled)
    else:
        x, units, k, stopped = _loop(problem, g, est, StepSchedule("constant", tau, n=n), sampler, cfg, x,
                                     rec, units, k)
    rec.trace.extras["estimator"] = est
    return rec.trace if stopped else rec.finish(k, units, x)


def _rows_fast_ok(problem, g) -> bool:
    from ..functionals import L1Norm, ZeroFunctional
    return (problem.fidelity == "ls" and all(f is not None for f in problem._fast)
            and (isinstance(g, ZeroFunctional) or (isinstance(g, L1Norm) and g.shift is None)))


def _modified_saga_rows(problem, g, est, tau, sampler, x, rec, units, k, compiled=None):
    """Modified SAGA specialised to single-row least-squares terms and an l1 (or zero) ``g``.

    Same iteration as the generic loop on flat CSR arrays with scalar slots;
    ``tau * sum`` is kept pre-scaled.  Runs compiled when numba is present.
    """
    from ..functionals import L1Norm
    n = problem.n
    lengths = [f[0].size for f in problem._fast]
    indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    indices = np.concatenate([f[0] for f in problem._fast]).astype(np.int64)
    vals = np.concatenate([f[1] for f in problem._fast]).astype(float)
    data = np.array([v[0] for v in problem.data], dtype=float)
    slots = np.array([y[0] for y in est.slots], dtype=float)
    t_total = tau * est.total
    thresh = tau * g.lam if isinstance(g, L1Norm) else 0.0
    x = np.array(x, dtype=float)
    xt = np.empty_like(x)
    stopped = False
    with np.errstate(all="ignore"):
        while not stopped and rec.budget_left(units, k):
            chunk = max(1, rec.next_log_units - units)
            chunk = min(chunk, rec.max_units - units)
            if rec.cfg.max_iter is not None:
                chunk = min(chunk, rec.cfg.max_iter - k)
            modified_saga_rows_chunk(indptr, indices, vals, data, slots, x, t_total, xt,
                                     sampler.draw(chunk), tau, n, problem.weight, thresh, compiled)
            units += chunk
            k += chunk
            stopped = rec.log(k, units, x)
    est.slots = [np.array([s]) for s in slots]
    est.total = t_total / tau
    return x, units, k, stopped


def run_svrg(problem: PartitionedProblem, cfg: SolverConfig | None = None, sampler: Sampler | None = None,
             inner: int | None = None, loopless_p: float | None = None, seed: int = 0,
             warm_start_passes: float = 0, x0=None) -> IterateTrace:
    """SVRG with an inner loop of ``inner`` steps (default ``2n``), or the
    loopless variant refreshing the anchor with probability ``loopless_p``.

    Default step ``1/(3 n L_max)``.
    """
    cfg = cfg or SolverConfig()
    g = problem.g.fresh()
    sampler = _default_sampler(problem, sampler)
    n, L_max = problem.n, problem.smoothness.L_max
    tau = cfg.tau if cfg.tau is not None else 1.0 / (3 * n * L_max)
    if loopless_p is not None and not 0 < loopless_p <= 1:
        raise ValueError("loopless_p must lie in (0, 1]")
    inner = 2 * n if inner is None else int(inner)
    if inner < 1:
        raise ValueError("inner loop length must be >= 1")
    x = _x0(problem, x0)
    rec = Recorder(cfg, lambda u: g(u) + problem.h(u), units_per_pass=n)
    units = k = 0
    if warm_start_passes > 0:
        if rec.log(0, 0, x, force=True):
            return rec.trace
        x, units, k, stopped = _sgd_phase(problem, g, x, sampler, rec, warm_start_passes,
                                          1.0 / (2 * n * L_max), units, k)
        if stopped:
            return rec.trace
    est = SVRGEstimator(problem)
    units += est.init(x)
    anchors = [k]
    if rec.log(k, units, x, force=True):
        return rec.trace
    coin = rng_for(seed, "loopless")
    counter = {"inner": 0}

    def refresh(k_now, x_now):
        counter["inner"] += 1
        due = (coin.random() < loopless_p) if loopless_p is not None else counter["inner"] >= inner
        if due:
            counter["inner"] = 0
            anchors.append(k_now)
            return est.set_anchor(x_now)
        return 0

    x, units, k, stopped = _loop(problem, g, est, StepSchedule("constant", tau, n=n), sampler, cfg, x,
                                 rec, units, k, after_step=refresh)
    rec.trace.extras["anchors"] = anchors
    return rec.trace if stopped else rec.finish(k, units, x)


def _eta_rule(rule, eta_min=0.0):
    if rule in (None, 1, 1.0, "one"):
        return lambda k: 1.0
    if rule == "nesterov":
        return lambda k: max(2.0 / (k + 2.0), eta_min)
    if isinstance(rule, (int, float)):
        if not 0 < rule <= 1:
            raise ValueError("constant eta must lie in (0, 1]")
        return lambda k: float(rule)
    if callable(rule):
        return rule
    raise ValueError(f"unknown eta rule {rule!r}")


def run_accelerated_vr(problem: PartitionedProblem, estimator: str = "svrg", cfg: SolverConfig | None = None,
                       eta="nesterov", sampler: Sampler | None = None, eta_min="auto",
                       z_step: str = "scaled", inner: int | None = None, x0=None) -> IterateTrace:
    """Three-sequence acceleration of a variance-reduced estimator.

    ``x = eta z + (1 - eta) y``; ``z <- prox(z - s grad~(x))``;
    ``y <- eta z + (1 - eta) y``.  The ``z`` step ``s`` is ``tau / eta_k``
    (``z_step='scaled'``) or ``tau`` (``'plain'``); both coincide for
    ``eta = 1``, where the scheme is the plain estimator loop.

    ``eta_min='auto'`` floors the Nesterov sequence at ``min(1, n tau L_max)``
    (1/3 at the default step) when ``n > 1``, since the scaled ``z`` step
    otherwise grows without bound against a noisy estimator.  With ``n = 1``
    the estimator is exact and no floor is applied.
    """
    cfg = cfg or SolverConfig()
    if estimator not in ("saga", "svrg", "modified-saga"):
        raise ValueError("accelerated scheme supports saga and svrg")
    if z_step not in ("scaled", "plain"):
        raise ValueError("z_step must be 'scaled' or 'plain'")
    g = problem.g.fresh()
    sampler = _default_sampler(problem, sampler)
    n, L_max = problem.n, problem.smoothness.L_max
    tau = cfg.tau if cfg.tau is not None else 1.0 / (3 * n * L_max)
    if eta_min == "auto":
        eta_min = 0.0 if n == 1 else min(1.0, n * tau * L_max)
    eta_k = _eta_rule(eta, eta_min)
    inner = 2 * n if inner is None else int(inner)
    z = _x0(problem, x0)
    y = z.copy()
    est = make_estimator(estimator, problem)
    rec = Recorder(cfg, lambda u: g(u) + problem.h(u), units_per_pass=n)
    units = est.init(z)
    k = 0
    if rec.log(0, units, y, force=True):
        return rec.trace
    steps_since_anchor = 0
    with np.errstate(all="ignore"):
        while rec.budget_left(units, k):
            e = eta_k(k)
            x = e * z + (1 - e) * y
            i = next(sampler)
            d, c = est.direction(x, i)
            s = tau / e if z_step == "scaled" else tau
            z = g.prox(z - s * d, s)
            y = e * z + (1 - e) * y
            units += c
            k += 1
            if estimator == "svrg":
                steps_since_anchor += 1
                if steps_since_anchor >= inner:
                    steps_since_anchor = 0
                    units += est.set_anchor(y)
            if rec.log(k, units, y):
                return rec.trace
    return rec.finish(k, units, y)


def spdhg_step_guard(sigma: float, tau: float, n_blocks: int, block_norms: Sequence[float]) -> bool:
    """``True`` when ``sigma tau n max ||A_i||^2 >= 1`` (the sufficient condition fails)."""
    return sigma * tau * n_blocks * max(block_norms) ** 2 >= 1


def run_spdhg(problem: PartitionedProblem, cfg: SolverConfig | None = None, sampler: Sampler | None = None,
              rho: float = 0.99, gamma: float = 1.0, x0=None, y0=None,
              block_norms: Sequence[float] | None = None, check_invariants: bool = False,
              f_blocks: Sequence[Functional] | None = None) -> IterateTrace:
    """Stochastic PDHG on ``sum_i f_i(A_i x) + g(x)``.

    Defaults ``sigma = gamma rho / K_max`` and ``tau = 1 / (l gamma K_max)``
    with ``K_max = max ||A_i||``.  The primal step uses ``w = A* ybar``
    maintained incrementally as ``z + (1 + 1/p_i) A_i*(y_i^new - y_i^old)``
    with ``z = sum_i A_i* y_i``.  With ``check_invariants`` the drift between
    ``w`` and a from-scratch ``sum_i A_i* ybar_i`` is recorded once per pass.
    """
    cfg = cfg or SolverConfig()
    g = problem.g.fresh()
    ell = problem.n
    sampler = _default_sampler(problem, sampler)
    f = list(f_blocks) if f_blocks is not None else problem.dual_functionals()
    norms = list(block_norms) if block_norms is not None else [
        math.sqrt(L) for L in smoothness_info(operators=problem.operators).L_i]
    K_max = max(norms)
    sigma = cfg.sigma if cfg.sigma is not None else gamma * rho / K_max
    tau = cfg.tau if cfg.tau is not None else 1.0 / (ell * gamma * K_max)
    violated = spdhg_step_guard(sigma, tau, ell, norms)
    _warn(cfg, not violated, "SPDHG steps violate sigma*tau*l*max||A_i||^2 < 1")
    probs = sampler.probabilities()
    x = _x0(problem, x0)
    if y0 is None:
        y = [np.zeros(op.codomain.size) for op in problem.operators]
    else:
        y = [np.array(b, dtype=float) for b in y0]
    z = np.zeros(problem.d)
    for i in range(ell):
        z = z + problem.adjoint(i, y[i])
    w = z.copy()
    ybar_last = None

    def phi(u):
        return g(u) + sum(fi(problem.forward(i, u)) for i, fi in enumerate(f))

    rec = Recorder(cfg, phi, units_per_pass=ell)
    drift = []
    k = 0
    if rec.log(0, 0, x, force=True):
        return rec.trace
    with np.errstate(all="ignore"):
        while rec.budget_left(k, k):
            x = g.prox(x - tau * w, tau)
            i = next(sampler)
            y_new = f[i].prox_conjugate(y[i] + sigma * problem.forward(i, x), sigma)
            delta = problem.adjoint(i, y_new - y[i])
            theta = 1.0 / probs[i]
            w = z + (1.0 + theta) * delta
            z = z + delta
            ybar_last = (i, y_new + theta * (y_new - y[i]))
            y[i] = y_new
            k += 1
            if check_invariants and k % ell == 0:
                ref = np.zeros(problem.d)
                for j in range(ell):
                    yb = ybar_last[1] if j == ybar_last[0] else y[j]
                    ref = ref + problem.adjoint(j, yb)
                drift.append(float(np.linalg.norm(w - ref) / max(np.linalg.norm(ref), 1e-300)))
            if rec.log(k, k, x):
                break
        else:
            rec.finish(k, k, x)
    rec.trace.extras.update(y=y, w=w, drift=drift, sigma=sigma, tau=tau, guard_violated=violated)
    return rec.trace


def _prox_diag(g: Functional, z, steps):
    """Prox of ``g`` in the metric ``diag(1/steps)``: exact for separable ``g``, else scalar mean step."""
    from ..functionals import Box, L1Norm, ZeroFunctional, soft_threshold
    if isinstance(g, ZeroFunctional):
        return z
    if isinstance(g, Box):
        return g.prox(z, 1.0)
    if isinstance(g, L1Norm) and g.shift is None:
        return soft_threshold(z, steps * g.lam)
    return g.prox(z, float(np.mean(steps)))


def run_adaptive(problem: PartitionedProblem, cfg: SolverConfig | None = None, variant: str = "diag-accum",
                 sampler: Sampler | None = None, eps: float | None = None, beta1: float = 0.9,
                 beta2: float = 0.999, schedule: StepSchedule | None = None, x0=None) -> IterateTrace:
    """SGD with per-coordinate step sizes.

    ``diag-accum``: ``D = eps + sum_j |d_j|`` over past directions including
    the current one, step ``x <- prox(x - tau D^{-1} d)``.  ``adam``: bias
    corrected first/second moments with ``beta1, beta2, eps``.  The prox
    uses the same diagonal metric when ``g`` is separable.
    """
    cfg = cfg or SolverConfig()
    if variant not in ("diag-accum", "adam"):
        raise ValueError("variant must be 'diag-accum' or 'adam'")
    eps = (1e-8 if eps is None else eps)
    g = problem.g.fresh()
    sampler = _default_sampler(problem, sampler)
    n = problem.n
    if schedule is None:
        tau0 = cfg.tau if cfg.tau is not None else 1e-2
        schedule = StepSchedule("constant", tau0, n=n)
    x = _x0(problem, x0)
    est = SGDEstimator(problem)
    est.init(x)
    rec = Recorder(cfg, lambda u: g(u) + problem.h(u), units_per_pass=n)
    D = np.full(problem.d, eps)
    m = np.zeros(problem.d)
    v = np.zeros(problem.d)
    k = units = 0
    if rec.log(0, 0, x, force=True):
        return rec.trace
    with np.errstate(all="ignore"):
        while rec.budget_left(units, k):
            i = next(sampler)
            d, c = est.direction(x, i)
            tau = schedule(k)
            if variant == "diag-accum":
                D = D + np.abs(d)
                steps = tau / D
                x = _prox_diag(g, x - steps * d, steps)
            else:
                t = k + 1
                m = beta1 * m + (1 - beta1) * d
                v = beta2 * v + (1 - beta2) * d * d
                mhat = m / (1 - beta1**t)
                vhat = v / (1 - beta2**t)
                steps = tau / (np.sqrt(vhat) + eps)
                x = _prox_diag(g, x - steps * mhat, steps)
            units += c
            k += 1
            if rec.log(k, units, x):
                return rec.trace
    return rec.finish(k, units, x)
