"""Full-gradient first-order solvers for ``f(Ax) + g(x) + h(x)``.

Every solver returns an :class:`IterateTrace`.  One iteration of a
deterministic method costs one data pass (one application of the forward
operator and its adjoint); coordinate descent is charged by the fraction of
coordinates it touches.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from ..functionals import Functional, LeastSquares, ZeroFunctional
from ..linops import IdentityOperator, LinearMap, ScaledOperator
from ..sampling import Sampler

__all__ = [
    "SolverConfig",
    "TraceRow",
    "IterateTrace",
    "StepSizeWarning",
    "Recorder",
    "fista_t_sequence",
    "run_gd",
    "run_nag",
    "run_pgd",
    "run_fista",
    "run_pdhg",
    "run_admm",
    "run_condat_vu",
    "run_pd3o",
    "run_coordinate_descent",
]

MOMENTUM_RULES = ("none", "fista", "constant", "nag-sc")
RESTART_RULES = ("off", "function", "gradient")


class StepSizeWarning(UserWarning):
    """A step size violates the sufficient condition for convergence."""


@dataclass
class SolverConfig:
    """Step sizes, momentum, stopping rules and logging options.

    ``max_passes`` bounds the work in data passes, ``tol`` stops on the
    relative change between consecutive iterates (0 disables it),
    ``target_rel_dist`` / ``target_subopt`` stop once the distance to
    ``x_ref`` / the gap to ``phi_ref`` falls below the target.  A run is
    flagged as diverged when an iterate stops being finite or the objective
    exceeds ``divergence_factor`` times the first logged magnitude.
    """

    tau: float | None = None
    sigma: float | None = None
    momentum: str = "fista"
    momentum_value: float = 0.0
    mu: float = 0.0
    lipschitz: float | None = None
    restart: str = "off"
    max_passes: float = 100
    max_iter: int | None = None
    tol: float = 0.0
    x_ref: np.ndarray | None = None
    phi_ref: float | None = None
    target_rel_dist: float | None = None
    target_subopt: float | None = None
    log_every: Fraction | int = 1
    record_wall_time: bool = False
    objective: Callable[[np.ndarray], float] | None = None
    warn: bool = True
    divergence_factor: float = 1e12

    def __post_init__(self):
        if self.momentum not in MOMENTUM_RULES:
            raise ValueError(f"momentum must be one of {MOMENTUM_RULES}")
        if self.restart not in RESTART_RULES:
            raise ValueError(f"restart must be one of {RESTART_RULES}")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        self.log_every = Fraction(self.log_every)
        if self.log_every <= 0:
            raise ValueError("log_every must be positive")


class TraceRow(NamedTuple):
    k: int
    passes: Fraction
    seconds: float | None
    objective: float
    rel_dist: float | None
    subopt: float | None


@dataclass
class IterateTrace:
    rows: list[TraceRow] = field(default_factory=list)
    x: np.ndarray | None = None
    diverged: bool = False
    stop_reason: str = ""
    extras: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=object if name == "passes" else float)

    @property
    def objectives(self) -> np.ndarray:
        return self.column("objective")

    @property
    def passes(self) -> list[Fraction]:
        return [r.passes for r in self.rows]

    def passes_to(self, rel_dist: float | None = None, subopt: float | None = None) -> Fraction | None:
        """Data passes at the first logged row meeting the target, or ``None``."""
        for r in self.rows:
            if rel_dist is not None and r.rel_dist is not None and r.rel_dist <= rel_dist:
                return r.passes
            if subopt is not None and r.subopt is not None and r.subopt <= subopt:
                return r.passes
        return None

    def final(self) -> TraceRow:
        return self.rows[-1]


class Recorder:
    """Logs objective and distances once per ``log_every`` data passes and decides when to stop.

    Work is counted in integer units with ``units_per_pass`` units per data
    pass, so pass counts are exact rationals.
    """

    def __init__(self, cfg: SolverConfig, objective: Callable, units_per_pass: int = 1):
        self.cfg = cfg
        self.objective = cfg.objective or objective
        self.per_pass = int(units_per_pass)
        self.trace = IterateTrace()
        self._t0 = time.perf_counter()
        self._next_log = Fraction(0)
        self.next_log_units = 0
        self._phi_scale = None
        self.max_units = math.floor(Fraction(cfg.max_passes).limit_denominator(10**6) * self.per_pass)
        if cfg.x_ref is not None:
            self._xref = np.asarray(cfg.x_ref, dtype=float).reshape(-1)
            self._xref_norm = float(np.linalg.norm(self._xref)) or 1.0

    def passes(self, units: int) -> Fraction:
        return Fraction(units, self.per_pass)

    def budget_left(self, units: int, k: int) -> bool:
        if units >= self.max_units:
            return False
        if self.cfg.max_iter is not None and k >= self.cfg.max_iter:
            return False
        return True

    def _stop(self, reason: str, x) -> bool:
        self.trace.stop_reason = reason
        self.trace.x = np.array(x, dtype=float)
        return True

    def log(self, k: int, units: int, x, change: float | None = None, force: bool = False) -> bool:
        """Record a row if due; return ``True`` when the run should stop."""
        due = force or units >= self.next_log_units
        if not due and not (change is not None and self.cfg.tol > 0 and change <= self.cfg.tol):
            return False
        p = self.passes(units)
        if not np.all(np.isfinite(x)):
            self.trace.diverged = True
            self.trace.rows.append(TraceRow(k, p, self._seconds(), math.nan, None, None))
            return self._stop("diverged", x)
        phi = float(self.objective(x))
        rel = sub = None
        if self.cfg.x_ref is not None:
            rel = float(np.linalg.norm(x - self._xref)) / self._xref_norm
        if self.cfg.phi_ref is not None:
            sub = phi - self.cfg.phi_ref
        self.trace.rows.append(TraceRow(k, p, self._seconds(), phi, rel, sub))
        while self._next_log <= p:
            self._next_log += self.cfg.log_every
        self.next_log_units = math.ceil(self._next_log * self.per_pass)
        if not math.isfinite(phi) and phi != math.inf:
            self.trace.diverged = True
            return self._stop("diverged", x)
        if self._phi_scale is None and math.isfinite(phi):
            self._phi_scale = max(abs(phi), 1.0)
        elif self._phi_scale is not None and phi > self.cfg.divergence_factor * self._phi_scale:
            self.trace.diverged = True
            return self._stop("diverged", x)
        if self.cfg.target_rel_dist is not None and rel is not None and rel <= self.cfg.target_rel_dist:
            return self._stop("target_rel_dist", x)
        if self.cfg.target_subopt is not None and sub is not None and sub <= self.cfg.target_subopt:
            return self._stop("target_subopt", x)
        if change is not None and self.cfg.tol > 0 and change <= self.cfg.tol:
            return self._stop("tol", x)
        return False

    def finish(self, k: int, units: int, x, reason: str = "budget") -> IterateTrace:
        if not self.trace.stop_reason:
            last = self.trace.rows[-1] if self.trace.rows else None
            if last is None or last.k != k:
                self.log(k, units, x, force=True)
            if not self.trace.stop_reason:
                self._stop(reason, x)
        return self.trace

    def _seconds(self):
        return time.perf_counter() - self._t0 if self.cfg.record_wall_time else None


def _rel_change(x_new, x_old) -> float:
    return float(np.linalg.norm(x_new - x_old)) / max(float(np.linalg.norm(x_new)), 1e-300)


def _warn(cfg, cond: bool, msg: str):
    if cfg.warn and not cond:
        warnings.warn(msg, StepSizeWarning, stacklevel=3)


def _lipschitz(h: Functional, cfg: SolverConfig) -> float:
    L = cfg.lipschitz if cfg.lipschitz is not None else h.lipschitz
    if L is None:
        raise ValueError("a Lipschitz constant is needed (set cfg.lipschitz or h.lipschitz)")
    return float(L)


def _default_tau(h, cfg, factor=1.0):
    if cfg.tau is not None:
        return cfg.tau
    L = _lipschitz(h, cfg)
    if L <= 0:
        return 1.0
    return factor / L


def fista_t_sequence(k: int) -> list[float]:
    """``t_0 = 1``, ``t_{j+1} = (1 + sqrt(1 + 4 t_j^2)) / 2`` up to ``t_k``."""
    t = [1.0]
    for _ in range(k):
        t.append(0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t[-1] ** 2)))
    return t


def _start(x0, size=None):
    if x0 is None:
        if size is None:
            raise ValueError("x0 is required")
        return np.zeros(size)
    return np.array(x0, dtype=float).reshape(-1)


def run_gd(h: Functional, cfg: SolverConfig, x0) -> IterateTrace:
    """Gradient descent ``x <- x - tau grad h(x)``."""
    if not h.smooth:
        raise TypeError("gradient descent needs a smooth h")
    tau = _default_tau(h, cfg)
    if h.lipschitz:
        _warn(cfg, tau * _lipschitz(h, cfg) < 2, "GD step tau >= 2/L")
    x = _start(x0)
    rec = Recorder(cfg, h)
    k = 0
    if rec.log(0, 0, x, force=True):
        return rec.trace
    with np.errstate(all="ignore"):
        while rec.budget_left(k, k):
            x_new = x - tau * h.gradient(x)
            k += 1
            change = _rel_change(x_new, x) if cfg.tol > 0 else None
            x = x_new
            if rec.log(k, k, x, change):
                return rec.trace
    return rec.finish(k, k, x)


def _momentum_sequence(cfg: SolverConfig, L: float):
    """Yields ``a_k`` for ``k = 0, 1, ...``; ``reset()`` restarts the t-sequence."""

    class _Seq:
        def __init__(self):
            self.t = 1.0

        def next(self):
            if cfg.momentum == "none":
                return 0.0
            if cfg.momentum == "constant":
                return cfg.momentum_value
            if cfg.momentum == "nag-sc":
                sl, sm = math.sqrt(L), math.sqrt(cfg.mu)
                return (sl - sm) / (sl + sm)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * self.t * self.t))
            a = (self.t - 1.0) / t_new
            self.t = t_new
            return a

        def reset(self):
            self.t = 1.0

    return _Seq()


def _accelerated(g: Functional, h: Functional, cfg: SolverConfig, x0, name: str) -> IterateTrace:
    g = g.fresh()
    tau = _default_tau(h, cfg)
    L = _lipschitz(h, cfg) if (h.lipschitz is not None or cfg.lipschitz is not None) else 1.0 / tau
    _warn(cfg, tau * L <= 1 + 1e-12, f"{name} step tau > 1/L")
    x = _start(x0)
    x_prev = x.copy()
    phi = lambda u: g(u) + h(u)
    rec = Recorder(cfg, phi)
    seq = _momentum_sequence(cfg, L)
    if rec.log(0, 0, x, force=True):
        return rec.trace
    phi_x = phi(x) if cfg.restart == "function" else None
    restarts = []
    k = 0
    with np.errstate(all="ignore"):
        while rec.budget_left(k, k):
            a = seq.next()
            x_tilde = x + a * (x - x_prev)
            x_new = g.prox(x_tilde - tau * h.gradient(x_tilde), tau)
            if cfg.restart == "function":
                phi_new = phi(x_new)
                # ignore increases at rounding level, which would otherwise restart every step near convergence
                if phi_new > phi_x + 1e-14 * abs(phi_x):
                    seq.reset()
                    restarts.append(k)
                    x_prev = x
                    x_new = g.prox(x - tau * h.gradient(x), tau)
                    phi_new = phi(x_new)
                phi_x = phi_new
            elif cfg.restart == "gradient" and np.dot(x_tilde - x_new, x_new - x) > 0:
                seq.reset()
                restarts.append(k)
            x_prev, x = x, x_new
            k += 1
            change = _rel_change(x, x_prev) if cfg.tol > 0 else None
            if rec.log(k, k, x, change):
                break
        else:
            rec.finish(k, k, x)
    rec.trace.extras["restarts"] = restarts
    return rec.trace


def run_nag(h: Functional, cfg: SolverConfig, x0) -> IterateTrace:
    """Nesterov's accelerated gradient.

    With ``momentum='fista'`` the extrapolation weights follow the t-sequence;
    ``'nag-sc'`` uses the constant ``(sqrt(L) - sqrt(mu)) / (sqrt(L) + sqrt(mu))``.
    """
    if not h.smooth:
        raise TypeError("NAG needs a smooth h")
    return _accelerated(ZeroFunctional(), h, cfg, x0, "NAG")


def run_pgd(g: Functional, h: Functional, cfg: SolverConfig, x0) -> IterateTrace:
    """Proximal gradient descent ``x <- prox_{tau g}(x - tau grad h(x))``."""
    if not h.smooth:
        raise TypeError("PGD needs a smooth h")
    if not g.prox_friendly:
        raise TypeError("PGD needs a prox-friendly g")
    g = g.fresh()
    tau = _default_tau(h, cfg)
    if h.lipschitz or cfg.lipschitz:
        _warn(cfg, tau * _lipschitz(h, cfg) < 2, "PGD step tau >= 2/L")
    x = _start(x0)
    rec = Recorder(cfg, lambda u: g(u) + h(u))
    k = 0
    if rec.log(0, 0, x, force=True):
        return rec.trace
    with np.errstate(all="ignore"):
        while rec.budget_left(k, k):
            x_new = g.prox(x - tau * h.gradient(x), tau)
            k += 1
            change = _rel_change(x_new, x) if cfg.tol > 0 else None
            x = x_new
            if rec.log(k, k, x, change):
                return rec.trace
    return rec.finish(k, k, x)


def run_fista(g: Functional, h: Functional, cfg: SolverConfig, x0) -> IterateTrace:
    """FISTA with the t-sequence momentum and optional restart."""
    if not h.smooth:
        raise TypeError("FISTA needs a smooth h")
    if not g.prox_friendly:
        raise TypeError("FISTA needs a prox-friendly g")
    return _accelerated(g, h, cfg, x0, "FISTA")


def _pd_objective(f, A, g, h=None):
    def phi(x):
        val = f(A.apply(x)) + g(x)
        return val + h(x) if h is not None else val
    return phi


def _pd_steps(A: LinearMap, cfg: SolverConfig, norm_A: float | None):
    nA = A.norm() if norm_A is None else norm_A
    tau, sigma = cfg.tau, cfg.sigma
    if tau is None and sigma is None:
        tau = sigma = 0.99 / nA if nA > 0 else 1.0
    elif tau is None:
        tau = 0.99 / (sigma * nA**2) if nA > 0 else 1.0
    elif sigma is None:
        sigma = 0.99 / (tau * nA**2) if nA > 0 else 1.0
    return tau, sigma, nA


def run_pdhg(f: Functional, A: LinearMap, g: Functional, cfg: SolverConfig, x0=None, y0=None,
             extrapolation: str = "primal", norm_A: float | None = None) -> IterateTrace:
    """Primal-dual hybrid gradient for ``f(Ax) + g(x)``.

    ``extrapolation='primal'`` over-relaxes the primal iterate
    (``xbar = 2 x_{k+1} - x_k``); ``'dual'`` swaps the roles, updating the
    dual with the new primal iterate and extrapolating ``ybar = 2 y_{k+1} - y_k``.
    The final dual iterate is returned in ``extras['y']``.
    """
    if extrapolation not in ("primal", "dual"):
        raise ValueError("extrapolation must be 'primal' or 'dual'")
    g = g.fresh()
    f = f.fresh()
    tau, sigma, nA = _pd_steps(A, cfg, norm_A)
    _warn(cfg, sigma * tau * nA**2 < 1, "PDHG steps violate sigma*tau*||A||^2 < 1")
    x = _start(x0, A.domain.size)
    y = _start(y0, A.codomain.size)
    rec = Recorder(cfg, _pd_objective(f, A, g))
    k = 0
    if rec.log(0, 0, x, force=True):
        rec.trace.extras["y"] = y
        return rec.trace
    with np.errstate(all="ignore"):
        if extrapolation == "primal":
            Aty = A.adjoint(y)
            while rec.budget_left(k, k):
                x_new = g.prox(x - tau * Aty, tau)
                x_bar = 2 * x_new - x
                y = f.prox_conjugate(y + sigma * A.apply(x_bar), sigma)
                Aty = A.adjoint(y)
                k += 1
                change = _rel_change(x_new, x) if cfg.tol > 0 else None
                x = x_new
                if rec.log(k, k, x, change):
                    break
            else:
                rec.finish(k, k, x)
        else:
            z = A.adjoint(y)
            w = z.copy()
            while rec.budget_left(k, k):
                x_new = g.prox(x - tau * w, tau)
                y_new = f.prox_conjugate(y + sigma * A.apply(x_new), sigma)
                delta = A.adjoint(y_new - y)
                w = z + 2 * delta
                z = z + delta
                y = y_new
                k += 1
                change = _rel_change(x_new, x) if cfg.tol > 0 else None
                x = x_new
                if rec.log(k, k, x, change):
                    break
            else:
                rec.finish(k, k, x)
    rec.trace.extras["y"] = y
    return rec.trace


def _gram_scale(A: LinearMap) -> float | None:
    """``a`` with ``A = a I`` when that is known structurally."""
    if isinstance(A, IdentityOperator):
        return 1.0
    if isinstance(A, ScaledOperator):
        inner = _gram_scale(A.inner)
        return None if inner is None else A.alpha * inner
    return None


def run_admm(f: Functional, A: LinearMap, g: Functional, cfg: SolverConfig, x0=None, y0=None,
             linearized: bool = False, beta: float | None = None,
             norm_A: float | None = None) -> IterateTrace:
    """ADMM on ``min f(z) + g(x)`` subject to ``Ax = z`` with penalty ``tau``.

    The ``z``-update is ``prox_{f/tau}(Ax + y/tau)``.  When ``A`` is a
    multiple of the identity the ``x``-update is an exact prox of ``g``;
    otherwise a proximal term ``(1/beta - tau A*A)/2`` is added so that it
    becomes ``prox_{beta g}(x - beta tau A*(Ax - z + y/tau))``.
    ``linearized=True`` forces the latter form.  The primal residuals
    ``||Ax - z||`` are returned in ``extras['residual']``.
    """
    g = g.fresh()
    f = f.fresh()
    tau = cfg.tau if cfg.tau is not None else 1.0
    x = _start(x0, A.domain.size)
    y = _start(y0, A.codomain.size)
    a = None if linearized else _gram_scale(A)
    if a is None:
        if beta is None:
            nA = A.norm() if norm_A is None else norm_A
            beta = 0.99 / (tau * nA**2) if nA > 0 else 1.0
        else:
            nA = A.norm() if norm_A is None else norm_A
            _warn(cfg, beta * tau * nA**2 < 1, "ADMM proximal term is not positive definite")
    rec = Recorder(cfg, _pd_objective(f, A, g))
    residuals = []
    k = 0
    stop = rec.log(0, 0, x, force=True)
    Ax = A.apply(x)
    with np.errstate(all="ignore"):
        while not stop and rec.budget_left(k, k):
            z = f.prox(Ax + y / tau, 1.0 / tau)
            if a is not None:
                x_new = g.prox((z - y / tau) / a, 1.0 / (tau * a * a))
            else:
                x_new = g.prox(x - beta * tau * A.adjoint(Ax - z + y / tau), beta)
            Ax = A.apply(x_new)
            r = Ax - z
            y = y + tau * r
            residuals.append(float(np.linalg.norm(r)))
            k += 1
            change = _rel_change(x_new, x) if cfg.tol > 0 else None
            x = x_new
            stop = rec.log(k, k, x, change)
    if not stop:
        rec.finish(k, k, x)
    rec.trace.extras.update(residual=residuals, y=y)
    return rec.trace


def _three_term(f, A, g, h, cfg, x0, y0, norm_A, pd3o: bool) -> IterateTrace:
    g = g.fresh()
    f = f.fresh()
    smooth_h = not isinstance(h, ZeroFunctional)
    L = _lipschitz(h, cfg) if smooth_h else 0.0
    nA = A.norm() if norm_A is None else norm_A
    tau, sigma = cfg.tau, cfg.sigma
    if tau is None or sigma is None:
        raise ValueError("tau and sigma are required")
    if pd3o:
        _warn(cfg, sigma * tau * nA**2 < 1, "PD3O steps violate sigma*tau*||A||^2 < 1")
        _warn(cfg, tau * L < 2, "PD3O step violates tau*L < 2")
    else:
        _warn(cfg, tau * (sigma * nA**2 + L / 2) < 1, "Condat-Vu steps violate tau(sigma||A||^2 + L/2) < 1")
    x = _start(x0, A.domain.size)
    y = _start(y0, A.codomain.size)
    rec = Recorder(cfg, _pd_objective(f, A, g, h if smooth_h else None))
    k = 0
    if rec.log(0, 0, x, force=True):
        rec.trace.extras["y"] = y
        return rec.trace
    Aty = A.adjoint(y)
    grad = h.gradient(x) if smooth_h else None
    with np.errstate(all="ignore"):
        while rec.budget_left(k, k):
            if smooth_h:
                x_new = g.prox(x - tau * (grad + Aty), tau)
                grad_new = h.gradient(x_new)
            else:
                x_new = g.prox(x - tau * Aty, tau)
            x_bar = 2 * x_new - x
            if pd3o and smooth_h:
                x_bar = x_bar + tau * (grad - grad_new)
            y = f.prox_conjugate(y + sigma * A.apply(x_bar), sigma)
            Aty = A.adjoint(y)
            if smooth_h:
                grad = grad_new
            k += 1
            change = _rel_change(x_new, x) if cfg.tol > 0 else None
            x = x_new
            if rec.log(k, k, x, change):
                break
        else:
            rec.finish(k, k, x)
    rec.trace.extras["y"] = y
    return rec.trace


def run_condat_vu(f: Functional, A: LinearMap, g: Functional, h: Functional, cfg: SolverConfig,
                  x0=None, y0=None, norm_A: float | None = None) -> IterateTrace:
    """Condat-Vu primal-dual forward-backward iteration for ``f(Ax) + g(x) + h(x)``."""
    return _three_term(f, A, g, h, cfg, x0, y0, norm_A, pd3o=False)


def run_pd3o(f: Functional, A: LinearMap, g: Functional, h: Functional, cfg: SolverConfig,
             x0=None, y0=None, norm_A: float | None = None) -> IterateTrace:
    """PD3O: Condat-Vu with the gradient correction ``tau (grad h(x_k) - grad h(x_{k+1}))``
    in the extrapolation; the new gradient is cached so each iteration
    evaluates ``grad h`` once."""
    return _three_term(f, A, g, h, cfg, x0, y0, norm_A, pd3o=True)


def run_coordinate_descent(h: Functional, cfg: SolverConfig, x0, block_size: int = 1,
                           sampler: Sampler | None = None, g: Functional | None = None) -> IterateTrace:
    """Block coordinate descent ``x_B <- prox(x_B - tau_B grad_B h(x))``.

    For least squares the residual ``Kx - v`` is maintained so a block update
    costs ``|B|`` columns of ``K``.  Blocks are contiguous; ``sampler`` picks
    the block (cyclic when omitted).  ``tau`` defaults to ``1/||K_B||^2`` per
    block.  ``g`` must be separable when given.
    """
    if not h.smooth:
        raise TypeError("coordinate descent needs a smooth h")
    g = ZeroFunctional() if g is None else g.fresh()
    x = _start(x0)
    d = x.size
    blocks = np.array_split(np.arange(d), math.ceil(d / block_size))
    nb = len(blocks)
    if sampler is None:
        sampler = Sampler("cyclic", nb)
    elif sampler.n != nb:
        raise ValueError(f"sampler must range over {nb} blocks")
    ls = isinstance(h, LeastSquares)
    if ls:
        if h.operator is None:
            cols = None
        else:
            S = h.operator.to_sparse()
            cols = (S.tocsc() if S is not None else h.operator.to_dense())
        residual = h.residual(x)
        if cols is None:
            taus = [1.0 / h.weight] * nb
        else:
            taus = []
            for b in blocks:
                Kb = cols[:, b]
                Kb = Kb.toarray() if hasattr(Kb, "toarray") else Kb
                nb2 = np.linalg.norm(Kb, 2) ** 2 * h.weight
                taus.append(1.0 / nb2 if nb2 > 0 else 1.0)
    else:
        Lh = _lipschitz(h, cfg)
        taus = [1.0 / Lh] * nb
    if cfg.tau is not None:
        taus = [cfg.tau] * nb
    rec = Recorder(cfg, lambda u: g(u) + h(u), units_per_pass=d)
    k = units = 0
    if rec.log(0, 0, x, force=True):
        return rec.trace
    with np.errstate(all="ignore"):
        while rec.budget_left(units, k):
            j = next(sampler)
            b = blocks[j]
            if ls:
                if cols is None:
                    gb = h.weight * residual[b]
                else:
                    gb = h.weight * np.asarray(cols[:, b].T @ residual).reshape(-1)
            else:
                gb = h.gradient(x)[b]
            xb_new = g.prox(x[b] - taus[j] * gb, taus[j]) if not isinstance(g, ZeroFunctional) \
                else x[b] - taus[j] * gb
            delta = xb_new - x[b]
            x[b] = xb_new
            if ls:
                if cols is None:
                    residual[b] += delta
                else:
                    residual += np.asarray(cols[:, b] @ delta).reshape(-1)
            k += 1
            units += b.size
            if rec.log(k, units, x):
                return rec.trace
    return rec.finish(k, units, x)
