"""Partitions of rows/angles into subsets, index samplers and smoothness constants."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .linops import BlockOperator, LinearMap

__all__ = [
    "Partition",
    "partition_staggered",
    "partition_contiguous",
    "Sampler",
    "make_sampler",
    "herman_meyer_order",
    "prime_factors",
    "SmoothnessInfo",
    "smoothness_info",
    "rng_for",
    "SAMPLER_KINDS",
]

SAMPLER_KINDS = ("uniform", "permutation", "cyclic", "herman-meyer", "importance")

# fixed seed offsets so that components draw from independent streams
STREAM_OFFSETS = {"sampler": 0, "noise": 1, "signal": 2, "init": 3, "norm": 4, "loopless": 5}


def rng_for(seed: int, component: str) -> np.random.Generator:
    """PCG64 generator for ``component`` derived from a single 64-bit seed."""
    offset = STREAM_OFFSETS[component]
    return np.random.Generator(np.random.PCG64((int(seed) + offset) % 2**64))


@dataclass(frozen=True)
class Partition:
    """Disjoint index sets covering ``range(n_items)``."""

    n_items: int
    subsets: tuple[np.ndarray, ...]

    @property
    def n_subsets(self) -> int:
        return len(self.subsets)

    def __len__(self):
        return len(self.subsets)

    def __getitem__(self, i):
        return self.subsets[i]

    def check(self) -> None:
        allidx = np.concatenate(self.subsets)
        if allidx.size != self.n_items or not np.array_equal(np.sort(allidx), np.arange(self.n_items)):
            raise ValueError("partition is not a disjoint cover")
        sizes = [s.size for s in self.subsets]
        if max(sizes) - min(sizes) > 1:
            raise ValueError("partition is unbalanced")


def _validate(n_items, n_subsets):
    if n_items < 1 or n_subsets < 1:
        raise ValueError("need at least one item and one subset")
    if n_subsets > n_items:
        raise ValueError(f"cannot split {n_items} items into {n_subsets} non-empty subsets")


def partition_staggered(n_items: int, n_subsets: int) -> Partition:
    """Subset ``i`` takes every ``n``-th item starting at ``i``."""
    _validate(n_items, n_subsets)
    return Partition(n_items, tuple(np.arange(i, n_items, n_subsets) for i in range(n_subsets)))


def partition_contiguous(n_items: int, n_subsets: int) -> Partition:
    """Consecutive blocks with sizes differing by at most one."""
    _validate(n_items, n_subsets)
    return Partition(n_items, tuple(np.array_split(np.arange(n_items), n_subsets)))


def prime_factors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def herman_meyer_order(n: int) -> np.ndarray:
    """Mixed-radix digit reversal over the ascending prime factorisation of ``n``.

    Writing ``k = d1 + p1 (d2 + p2 (d3 + ...))`` with primes ``p1 <= p2 <= ...``,
    entry ``k`` is ``d1 n/p1 + d2 n/(p1 p2) + ...``.  Powers of two give the
    bit-reversal permutation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    primes = prime_factors(n)
    order = np.zeros(n, dtype=np.int64)
    k = np.arange(n, dtype=np.int64)
    weight = n
    for p in primes:
        weight //= p
        order += (k % p) * weight
        k //= p
    return order


class Sampler:
    """Stream of subset indices in ``{0, ..., n-1}``.

    Parameters
    ----------
    kind : str
        One of ``uniform`` (with replacement), ``permutation`` (reshuffled
        each epoch), ``cyclic``, ``herman-meyer`` or ``importance``.
    n : int
        Number of subsets.
    seed : int
        Seed of the PCG64 stream.
    weights : sequence of float, optional
        Probabilities for ``importance``.
    """

    BLOCK = 4096

    def __init__(self, kind: str, n: int, seed: int = 0, weights: Sequence[float] | None = None):
        if kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {kind!r}; choose from {SAMPLER_KINDS}")
        if n < 1:
            raise ValueError("n must be >= 1")
        self.kind = kind
        self.n = int(n)
        self.seed = int(seed)
        self.weights = None
        if kind == "importance":
            if weights is None:
                raise ValueError("importance sampling needs weights")
            w = np.asarray(weights, dtype=float)
            if w.shape != (self.n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
                raise ValueError("importance weights must be a probability vector of length n")
            self.weights = w / w.sum()
        self.reset()

    def reset(self):
        self._rng = rng_for(self.seed, "sampler")
        self._buf = np.zeros(0, dtype=np.int64)
        self._pos = 0
        self.count = 0

    def clone(self, seed: int | None = None) -> "Sampler":
        return Sampler(self.kind, self.n, self.seed if seed is None else seed,
                       None if self.weights is None else self.weights)

    def _refill(self):
        if self.kind == "uniform":
            self._buf = self._rng.integers(0, self.n, size=self.BLOCK)
        elif self.kind == "importance":
            self._buf = self._rng.choice(self.n, size=self.BLOCK, p=self.weights)
        elif self.kind == "permutation":
            reps = max(1, self.BLOCK // self.n)
            self._buf = np.concatenate([self._rng.permutation(self.n) for _ in range(reps)])
        elif self.kind == "cyclic":
            self._buf = np.arange(self.n)
        else:
            self._buf = herman_meyer_order(self.n)
        self._pos = 0

    def __next__(self) -> int:
        if self._pos >= self._buf.size:
            self._refill()
        i = int(self._buf[self._pos])
        self._pos += 1
        self.count += 1
        return i

    def __iter__(self):
        return self

    def draw(self, m: int) -> np.ndarray:
        """The next ``m`` indices of the stream (same values as ``m`` calls to ``next``)."""
        out = np.empty(m, dtype=np.int64)
        filled = 0
        while filled < m:
            if self._pos >= self._buf.size:
                self._refill()
            take = min(m - filled, self._buf.size - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        self.count += m
        return out

    def probabilities(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights.copy()
        return np.full(self.n, 1.0 / self.n)


def make_sampler(kind: str, n: int, seed: int = 0, weights=None) -> Sampler:
    return Sampler(kind, n, seed, weights)


@dataclass(frozen=True)
class SmoothnessInfo:
    """Lipschitz constants of ``h = sum_i h_i``.

    ``L`` is that of the full gradient, ``L_i`` those of the terms and
    ``upsilon = L / L_max`` the stochastic acceleration factor.
    """

    L: float
    L_i: tuple[float, ...]
    L_max: float
    upsilon: float

    @property
    def n(self) -> int:
        return len(self.L_i)


def _squared_norm(op: LinearMap, seed: int, tol: float):
    exact = op.exact_norm_squared()
    if exact is not None:
        return exact
    return op.norm(tol=tol, max_iter=5000, seed=seed) ** 2


def _scaled(norm_sq, weight):
    # keep rational norms exact under float weights
    if isinstance(norm_sq, Fraction):
        return norm_sq * Fraction(weight)
    return norm_sq * weight


def smoothness_info(problem=None, *, operators: Sequence[LinearMap] | None = None,
                    full: LinearMap | None = None, weights: Sequence[float] | None = None,
                    seed: int = 0, tol: float = 1e-10) -> SmoothnessInfo:
    """``L = ||K||^2``, ``L_i = ||K_i||^2``, ``L_max`` and ``upsilon``.

    Accepts a :class:`~stochograd.solvers.stochastic.PartitionedProblem` or
    explicit block operators and (optionally) the full operator.  Closed-form
    rational norms are used when the operators provide them, so that e.g. a
    row split of a uniform blur gives ``upsilon == kappa`` exactly.
    """
    if problem is not None:
        operators = problem.operators
        full = problem.full_operator
        weights = problem.term_weights
    if not operators:
        raise ValueError("need at least one block operator")
    w = [1] * len(operators) if weights is None else list(weights)
    Li = [_scaled(_squared_norm(op, seed, tol), wi) for op, wi in zip(operators, w)]
    if full is None:
        full = BlockOperator([[op] for op in operators])
    # for unequal weights (KL terms) this is an upper bound
    L = _scaled(_squared_norm(full, seed, tol), max(w))
    L_max = max(Li)
    if all(isinstance(v, (Fraction, int)) for v in (L, L_max)) and L_max != 0:
        ups = float(Fraction(L) / Fraction(L_max))
    else:
        ups = float(L) / float(L_max) if L_max else float("nan")
    return SmoothnessInfo(float(L), tuple(float(v) for v in Li), float(L_max), ups)
