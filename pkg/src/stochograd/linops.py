"""Linear operators acting on flat float64 vectors.

Every operator maps a flat array of length ``domain.size`` to a flat array of
length ``codomain.size``.  Images are stored row-major, vector fields are
stored channel-first (``(2, h, w)`` flattened).

The operators are immutable after construction, so ``apply``/``adjoint`` may
be called concurrently from several threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Shape",
    "ShapeError",
    "LinearMap",
    "MatrixOperator",
    "IdentityOperator",
    "ZeroOperator",
    "ScaledOperator",
    "CirculantBlur",
    "Gradient2D",
    "ParallelRadon",
    "RowSubset",
    "BlockOperator",
    "apply",
    "adjoint",
    "estimate_norm",
    "make_circulant_blur",
    "make_grad_2d",
    "make_parallel_radon",
    "make_block_operator",
    "make_tgv_operator",
    "dot_product_test",
]

MATERIALISE_LIMIT = 4096


class ShapeError(ValueError):
    """Raised when a vector does not match the operator's domain/codomain."""


@dataclass(frozen=True)
class Shape:
    """Shape of a vector space: ``(d,)`` flat, ``(h, w)`` image or ``(c, h, w)`` field."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not dims or any(n < 1 for n in dims):
            raise ShapeError(f"invalid shape {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def flat(cls, d: int) -> "Shape":
        return cls((d,))

    @classmethod
    def image(cls, h: int, w: int) -> "Shape":
        return cls((h, w))

    @classmethod
    def of(cls, spec) -> "Shape":
        if isinstance(spec, Shape):
            return spec
        if isinstance(spec, (int, np.integer)):
            return cls.flat(int(spec))
        return cls(tuple(spec))

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def kind(self) -> str:
        return {1: "flat", 2: "image", 3: "field"}.get(len(self.dims), "tensor")

    def __str__(self):
        return "x".join(str(n) for n in self.dims)


class LinearMap:
    """Bounded linear operator ``A`` with adjoint ``A*``.

    Subclasses implement ``_apply`` and ``_adjoint`` on flat arrays; the public
    methods check shapes.
    """

    def __init__(self, domain, codomain):
        self.domain = Shape.of(domain)
        self.codomain = Shape.of(codomain)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.codomain.size, self.domain.size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x, self.domain, "apply")
        return self._apply(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = self._check(y, self.codomain, "adjoint")
        return self._adjoint(y)

    __call__ = apply

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, y):
        raise NotImplementedError

    @staticmethod
    def _check(x, shape: Shape, where: str) -> np.ndarray:
        if not isinstance(x, np.ndarray) or x.dtype != np.float64:
            x = np.asarray(x, dtype=float)
        if x.size != shape.size:
            raise ShapeError(f"{where}: expected {shape.size} entries ({shape}), got {x.size}")
        return x.reshape(-1)

    def norm(self, tol: float = 1e-8, max_iter: int = 1000, seed: int = 0) -> float:
        """Operator norm; closed form where a subclass knows it, power method otherwise."""
        return estimate_norm(self, tol=tol, max_iter=max_iter, seed=seed)

    def to_sparse(self) -> sp.csr_matrix | None:
        """Sparse matrix representation, when the operator has a cheap one."""
        return None

    def exact_norm_squared(self) -> Fraction | None:
        """``||A||^2`` as an exact rational when known in closed form."""
        return None

    def to_dense(self) -> np.ndarray:
        """Materialise as a dense matrix (test oracles only; small shapes)."""
        m, n = self.shape
        if m * n > MATERIALISE_LIMIT * MATERIALISE_LIMIT * 4:
            raise ValueError(f"refusing to materialise a {m}x{n} operator")
        S = self.to_sparse()
        if S is not None:
            return S.toarray()
        out = np.empty((m, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            out[:, j] = self._apply(e)
            e[j] = 0.0
        return out

    # Gram structure A A* = alpha I, when known exactly.
    gram_scalar: float | None = None

    def __repr__(self):
        return f"{type(self).__name__}({self.domain} -> {self.codomain})"


def apply(op: LinearMap, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def adjoint(op: LinearMap, y: np.ndarray) -> np.ndarray:
    return op.adjoint(y)


def estimate_norm(op: LinearMap, tol: float = 1e-8, max_iter: int = 1000, seed: int = 0) -> float:
    """Power-method estimate of the largest singular value of ``op``.

    Iterates ``x <- A*A x / ||A*A x||`` from a seeded uniform random start and
    stops when the Rayleigh quotient changes by less than ``tol`` (relative).
    Returns 0.0 for the zero operator.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be > 0 and max_iter >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(size=op.domain.size)
    nx = np.linalg.norm(x)
    if nx == 0:
        return 0.0
    x /= nx
    rq = 0.0
    for _ in range(max_iter):
        y = op.adjoint(op.apply(x))
        rq_new = float(np.dot(x, y))
        ny = np.linalg.norm(y)
        if ny == 0 or rq_new <= 0:
            return 0.0
        x = y / ny
        if abs(rq_new - rq) <= tol * rq_new:
            rq = rq_new
            break
        rq = rq_new
    return float(np.sqrt(rq))


def dot_product_test(op: LinearMap, n_pairs: int = 20, seed: int = 0) -> float:
    """Largest ``|<Ax,y> - <x,A*y>| / (1 + |<Ax,y>|)`` over random pairs."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(op.domain.size)
        y = rng.standard_normal(op.codomain.size)
        lhs = float(np.dot(op.apply(x), y))
        rhs = float(np.dot(x, op.adjoint(y)))
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return worst


class MatrixOperator(LinearMap):
    """Explicit dense or sparse matrix."""

    def __init__(self, matrix, domain=None, codomain=None):
        if sp.issparse(matrix):
            self.matrix = sp.csr_matrix(matrix, dtype=float)
            self._matrix_t = self.matrix.T.tocsr()
        else:
            self.matrix = np.array(matrix, dtype=float, ndmin=2)
            self._matrix_t = self.matrix.T
        m, n = self.matrix.shape
        super().__init__(domain if domain is not None else n, codomain if codomain is not None else m)
        if self.domain.size != n or self.codomain.size != m:
            raise ShapeError("matrix shape does not match domain/codomain")

    def _apply(self, x):
        return np.asarray(self.matrix @ x, dtype=float).reshape(-1)

    def _adjoint(self, y):
        return np.asarray(self._matrix_t @ y, dtype=float).reshape(-1)

    def to_sparse(self):
        return self.matrix if sp.issparse(self.matrix) else sp.csr_matrix(self.matrix)

    def to_dense(self):
        return self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix.copy()

    def norm(self, tol=1e-8, max_iter=1000, seed=0):
        if not sp.issparse(self.matrix) and max(self.matrix.shape) <= 2048:
            return float(np.linalg.norm(self.matrix, 2))
        return estimate_norm(self, tol=tol, max_iter=max_iter, seed=seed)


class IdentityOperator(LinearMap):
    gram_scalar = 1.0

    def __init__(self, shape):
        super().__init__(shape, shape)

    def _apply(self, x):
        return x.copy()

    _adjoint = _apply

    def to_sparse(self):
        return sp.identity(self.domain.size, format="csr")

    def norm(self, *args, **kwargs):
        return 1.0

    def exact_norm_squared(self):
        return Fraction(1)


class ZeroOperator(LinearMap):
    gram_scalar = None

    def __init__(self, domain, codomain=None):
        super().__init__(domain, codomain if codomain is not None else domain)

    def _apply(self, x):
        return np.zeros(self.codomain.size)

    def _adjoint(self, y):
        return np.zeros(self.domain.size)

    def to_sparse(self):
        return sp.csr_matrix(self.shape)

    def norm(self, *args, **kwargs):
        return 0.0


class ScaledOperator(LinearMap):
    """``alpha * inner``."""

    def __init__(self, alpha: float, inner: LinearMap):
        super().__init__(inner.domain, inner.codomain)
        self.alpha = float(alpha)
        self.inner = inner
        if inner.gram_scalar is not None:
            self.gram_scalar = self.alpha**2 * inner.gram_scalar

    def _apply(self, x):
        return self.alpha * self.inner._apply(x)

    def _adjoint(self, y):
        return self.alpha * self.inner._adjoint(y)

    def to_sparse(self):
        S = self.inner.to_sparse()
        return None if S is None else (self.alpha * S).tocsr()

    def norm(self, tol=1e-8, max_iter=1000, seed=0):
        return abs(self.alpha) * self.inner.norm(tol=tol, max_iter=max_iter, seed=seed)


class CirculantBlur(LinearMap):
    """1-D periodic convolution with a centred uniform kernel of odd width ``kappa``.

    Kernel entries are ``1/kappa``, so the DFT of the kernel is 1 at frequency
    zero and bounded by 1 in modulus: ``||K|| = 1``.  Every row has ``kappa``
    entries equal to ``1/kappa`` and norm ``1/sqrt(kappa)``.
    """

    def __init__(self, d: int, kappa: int):
        if kappa % 2 != 1 or not 1 <= kappa <= d:
            raise ValueError(f"kernel width must be odd and in [1, {d}], got {kappa}")
        super().__init__(d, d)
        self.d = d
        self.kappa = kappa
        self._half = kappa // 2
        self._offsets = np.arange(-self._half, self._half + 1)

    def _apply(self, x):
        if self.kappa == 1:
            return x.copy()
        # running sums over the periodically extended signal: O(d) for any kappa
        r, d = self._half, self.d
        ext = np.concatenate((x[d - r - 1:], x, x[:r]))
        cs = np.cumsum(ext)
        return (cs[self.kappa:self.kappa + d] - cs[:d]) / self.kappa

    # the kernel is symmetric
    _adjoint = _apply

    def to_sparse(self):
        rows = np.repeat(np.arange(self.d), self.kappa)
        cols = (rows + np.tile(self._offsets, self.d)) % self.d
        vals = np.full(rows.size, 1.0 / self.kappa)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.d, self.d))

    def row_norm(self) -> float:
        return 1.0 / np.sqrt(self.kappa)

    def norm(self, *args, **kwargs):
        return 1.0

    def exact_norm_squared(self):
        return Fraction(1)


class Gradient2D(LinearMap):
    """Forward differences with Neumann boundary (last difference is zero).

    Output is a ``(2, h, w)`` field: channel 0 holds vertical differences
    (along rows), channel 1 horizontal differences (along columns).
    A ``1 x w`` image gives a 1-D difference operator in channel 1.
    """

    def __init__(self, h: int, w: int):
        if h < 1 or w < 1 or h * w < 2:
            raise ShapeError(f"degenerate image shape {h}x{w}")
        super().__init__((h, w), (2, h, w))
        self.h, self.w = h, w

    def _apply(self, x):
        u = x.reshape(self.h, self.w)
        g = np.zeros((2, self.h, self.w))
        g[0, :-1, :] = u[1:, :] - u[:-1, :]
        g[1, :, :-1] = u[:, 1:] - u[:, :-1]
        return g.reshape(-1)

    def _adjoint(self, y):
        g = y.reshape(2, self.h, self.w)
        out = np.zeros((self.h, self.w))
        out[:-1, :] -= g[0, :-1, :]
        out[1:, :] += g[0, :-1, :]
        out[:, :-1] -= g[1, :, :-1]
        out[:, 1:] += g[1, :, :-1]
        return out.reshape(-1)

    def to_sparse(self):
        def diff(n):
            if n == 1:
                return sp.csr_matrix((1, 1))
            D = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
            D[n - 1, n - 1] = 0.0
            return D.tocsr()

        Dv = sp.kron(diff(self.h), sp.identity(self.w))
        Dh = sp.kron(sp.identity(self.h), diff(self.w))
        return sp.vstack([Dv, Dh]).tocsr()


def _siddon_matrix(h: int, w: int, angles: np.ndarray, n_det: int, spacing: float) -> sp.csr_matrix:
    """Exact ray/pixel intersection lengths for a parallel-beam geometry.

    Pixel ``(r, c)`` covers ``x in [c - w/2, c + 1 - w/2]`` and
    ``y in [h/2 - r - 1, h/2 - r]`` (row 0 at the top).  The ray for angle
    ``theta`` and detector offset ``s`` is ``s (cos, sin) + t (-sin, cos)``, so
    angle 0 integrates along image columns.
    """
    offsets = (np.arange(n_det) - (n_det - 1) / 2.0) * spacing
    xs = np.arange(w + 1) - w / 2.0
    ys = np.arange(h + 1) - h / 2.0
    eps = 1e-12
    rows_all, cols_all, vals_all = [], [], []
    for a, theta in enumerate(angles):
        c, s = np.cos(theta), np.sin(theta)
        ux, uy = -s, c
        px, py = offsets * c, offsets * s
        tmin = np.full(n_det, -np.inf)
        tmax = np.full(n_det, np.inf)
        parts = []
        if abs(ux) > eps:
            t1 = (xs[0] - px) / ux
            t2 = (xs[-1] - px) / ux
            tmin = np.maximum(tmin, np.minimum(t1, t2))
            tmax = np.minimum(tmax, np.maximum(t1, t2))
            parts.append((xs[None, :] - px[:, None]) / ux)
        else:
            outside = (px < xs[0]) | (px > xs[-1])
            tmax[outside] = -np.inf
        if abs(uy) > eps:
            t1 = (ys[0] - py) / uy
            t2 = (ys[-1] - py) / uy
            tmin = np.maximum(tmin, np.minimum(t1, t2))
            tmax = np.minimum(tmax, np.maximum(t1, t2))
            parts.append((ys[None, :] - py[:, None]) / uy)
        else:
            outside = (py < ys[0]) | (py > ys[-1])
            tmax[outside] = -np.inf
        hit = tmax > tmin
        if not np.any(hit):
            continue
        tmin_h, tmax_h = tmin[hit], tmax[hit]
        ts = np.concatenate([p[hit] for p in parts] + [tmin_h[:, None], tmax_h[:, None]], axis=1)
        ts = np.clip(ts, tmin_h[:, None], tmax_h[:, None])
        ts.sort(axis=1)
        seg = np.diff(ts, axis=1)
        mid = 0.5 * (ts[:, 1:] + ts[:, :-1])
        det = np.nonzero(hit)[0]
        mx = px[det, None] + mid * ux
        my = py[det, None] + mid * uy
        col = np.floor(mx + w / 2.0).astype(np.int64)
        row = np.floor(h / 2.0 - my).astype(np.int64)
        keep = (seg > 1e-12) & (col >= 0) & (col < w) & (row >= 0) & (row < h)
        ray = np.broadcast_to((a * n_det + det)[:, None], seg.shape)
        rows_all.append(ray[keep])
        cols_all.append(row[keep] * w + col[keep])
        vals_all.append(seg[keep])
    if rows_all:
        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
        vals = np.concatenate(vals_all)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(len(angles) * n_det, h * w))
    return A.tocsr()


class ParallelRadon(LinearMap):
    """Discrete parallel-beam X-ray transform (ray-driven, exact intersection lengths).

    Angles are equispaced on ``[0, pi)``; the sinogram has shape
    ``(n_angles, n_det)`` with unit detector spacing by default.  The weights
    are assembled once as a sparse matrix and the adjoint is its transpose.
    """

    def __init__(self, h: int, w: int, n_angles: int, n_det: int | None = None,
                 spacing: float = 1.0, angles: Sequence[float] | None = None):
        if min(h, w, n_angles) < 1:
            raise ShapeError("radon: image size and angle count must be >= 1")
        if n_det is None:
            n_det = int(np.ceil(np.hypot(h, w) / spacing))
        if n_det < 1:
            raise ShapeError("radon: need at least one detector")
        self.angles = (np.asarray(angles, dtype=float) if angles is not None
                       else np.arange(n_angles) * np.pi / n_angles)
        super().__init__((h, w), (len(self.angles), n_det))
        self.h, self.w, self.n_det = h, w, n_det
        self.matrix = _siddon_matrix(h, w, self.angles, n_det, spacing)
        self._matrix_t = self.matrix.T.tocsr()

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self._matrix_t @ y

    def to_sparse(self):
        return self.matrix

    def angle_rows(self, angle_indices) -> np.ndarray:
        """Sinogram row indices belonging to the given angles."""
        angle_indices = np.asarray(angle_indices, dtype=np.int64)
        return (angle_indices[:, None] * self.n_det + np.arange(self.n_det)[None, :]).reshape(-1)


class RowSubset(LinearMap):
    """Rows ``index`` of ``parent``: ``(A x)[index]``.

    Uses the parent's sparse matrix when available so that a subset costs a
    fraction of the full operator.
    """

    def __init__(self, parent: LinearMap, index):
        index = np.asarray(index, dtype=np.int64).reshape(-1)
        if index.size == 0:
            raise ShapeError("row subset must be non-empty")
        if index.min() < 0 or index.max() >= parent.codomain.size:
            raise ShapeError("row index out of range")
        super().__init__(parent.domain, index.size)
        self.parent = parent
        self.index = index
        S = parent.to_sparse()
        if S is not None:
            self.matrix = sp.csr_matrix(S)[index]
            self._matrix_t = self.matrix.T.tocsr()
        else:
            self.matrix = None

    def _apply(self, x):
        if self.matrix is not None:
            return self.matrix @ x
        return self.parent._apply(x)[self.index]

    def _adjoint(self, y):
        if self.matrix is not None:
            return self._matrix_t @ y
        full = np.zeros(self.parent.codomain.size)
        np.add.at(full, self.index, y)
        return self.parent._adjoint(full)

    def to_sparse(self):
        return self.matrix

    def exact_norm_squared(self):
        # rows with disjoint supports are orthogonal
        if isinstance(self.parent, IdentityOperator):
            return Fraction(1)
        if isinstance(self.parent, CirculantBlur):
            k, d = self.parent.kappa, self.parent.d
            idx = np.sort(self.index)
            gaps = np.diff(np.concatenate([idx, [idx[0] + d]]))
            if idx.size == 1 or np.all(gaps >= k):
                return Fraction(1, k)
        return None

    def norm(self, tol=1e-8, max_iter=1000, seed=0):
        exact = self.exact_norm_squared()
        if exact is not None:
            return float(np.sqrt(float(exact)))
        if self.index.size == 1:
            row = self.adjoint(np.ones(1))
            return float(np.linalg.norm(row))
        return estimate_norm(self, tol=tol, max_iter=max_iter, seed=seed)


class BlockOperator(LinearMap):
    """Block matrix of operators; ``None`` cells are zero blocks."""

    def __init__(self, grid: Sequence[Sequence[LinearMap | None]]):
        grid = [list(row) for row in grid]
        if not grid or not grid[0] or any(len(r) != len(grid[0]) for r in grid):
            raise ShapeError("block grid must be a non-empty rectangle")
        n_rows, n_cols = len(grid), len(grid[0])
        row_shapes: list[Shape | None] = [None] * n_rows
        col_shapes: list[Shape | None] = [None] * n_cols
        for i, row in enumerate(grid):
            for j, cell in enumerate(row):
                if cell is None:
                    continue
                for shapes, k, s in ((row_shapes, i, cell.codomain), (col_shapes, j, cell.domain)):
                    if shapes[k] is None:
                        shapes[k] = s
                    elif shapes[k].size != s.size:
                        raise ShapeError(f"inconsistent block sizes at cell ({i}, {j})")
        if any(s is None for s in row_shapes + col_shapes):
            raise ShapeError("every block row and column needs at least one non-zero cell")
        self.grid = grid
        self.row_sizes = [s.size for s in row_shapes]
        self.col_sizes = [s.size for s in col_shapes]
        self.row_shapes, self.col_shapes = row_shapes, col_shapes
        self._row_off = np.concatenate([[0], np.cumsum(self.row_sizes)])
        self._col_off = np.concatenate([[0], np.cumsum(self.col_sizes)])
        domain = col_shapes[0] if n_cols == 1 else sum(self.col_sizes)
        codomain = row_shapes[0] if n_rows == 1 else sum(self.row_sizes)
        super().__init__(domain, codomain)

    def split_domain(self, x) -> list[np.ndarray]:
        return [x[self._col_off[j]:self._col_off[j + 1]] for j in range(len(self.col_sizes))]

    def split_codomain(self, y) -> list[np.ndarray]:
        return [y[self._row_off[i]:self._row_off[i + 1]] for i in range(len(self.row_sizes))]

    def _apply(self, x):
        xs = self.split_domain(x)
        out = np.zeros(self.codomain.size)
        for i, row in enumerate(self.grid):
            seg = out[self._row_off[i]:self._row_off[i + 1]]
            for j, cell in enumerate(row):
                if cell is not None:
                    seg += cell._apply(xs[j])
        return out

    def _adjoint(self, y):
        ys = self.split_codomain(y)
        out = np.zeros(self.domain.size)
        for i, row in enumerate(self.grid):
            for j, cell in enumerate(row):
                if cell is not None:
                    out[self._col_off[j]:self._col_off[j + 1]] += cell._adjoint(ys[i])
        return out

    def to_sparse(self):
        blocks = []
        for i, row in enumerate(self.grid):
            brow = []
            for j, cell in enumerate(row):
                if cell is None:
                    brow.append(sp.csr_matrix((self.row_sizes[i], self.col_sizes[j])))
                else:
                    S = cell.to_sparse()
                    if S is None:
                        return None
                    brow.append(S)
            blocks.append(brow)
        return sp.bmat(blocks, format="csr")


def make_circulant_blur(d: int, kappa: int) -> CirculantBlur:
    return CirculantBlur(d, kappa)


def make_grad_2d(h: int, w: int) -> Gradient2D:
    return Gradient2D(h, w)


def make_parallel_radon(h: int, w: int, n_angles: int, n_det: int | None = None) -> ParallelRadon:
    return ParallelRadon(h, w, n_angles, n_det)


def make_block_operator(grid) -> BlockOperator:
    return BlockOperator(grid)


def make_tgv_operator(h: int, w: int) -> BlockOperator:
    """``(grad, -I; 0, grad_field)`` acting on ``(u, w)`` with ``w`` a 2-channel field.

    The second-row gradient is applied channel-wise, so its codomain is a
    4-channel field.
    """
    grad = Gradient2D(h, w)
    field_grad = BlockOperator([[grad, None], [None, grad]])
    field = Shape((2, h, w))
    neg_id = ScaledOperator(-1.0, IdentityOperator(field))
    return BlockOperator([[grad, neg_id], [None, field_grad]])
