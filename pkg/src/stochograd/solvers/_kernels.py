"""Compiled inner loops (numba) with pure-numpy fallbacks of the same iteration."""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

__all__ = ["HAVE_NUMBA", "modified_saga_rows_chunk"]

HAVE_NUMBA = numba is not None


def _modified_saga_rows_py(indptr, indices, vals, data, slots, x, t_total, xt, order, tau, n, w, thresh):
    step = tau * n
    for i in order:
        lo, hi = indptr[i], indptr[i + 1]
        c = indices[lo:hi]
        a = vals[lo:hi]
        y_bar = w * (float(a @ x[c]) - data[i])
        dy = y_bar - slots[i]
        slots[i] = y_bar
        np.subtract(x, t_total, out=xt)
        xt[c] -= (dy * step) * a
        t_total[c] += (dy * tau) * a
        if thresh > 0:
            np.subtract(xt, np.clip(xt, -thresh, thresh), out=x)
        else:
            x[:] = xt


if HAVE_NUMBA:
    @numba.njit(cache=True, nogil=True)
    def _modified_saga_rows_jit(indptr, indices, vals, data, slots, x, t_total, xt, order, tau, n, w,
                                thresh):  # pragma: no cover - compiled
        step = tau * n
        d = x.shape[0]
        for q in range(order.shape[0]):
            i = order[q]
            lo = indptr[i]
            hi = indptr[i + 1]
            acc = 0.0
            for p in range(lo, hi):
                acc += vals[p] * x[indices[p]]
            y_bar = w * (acc - data[i])
            dy = y_bar - slots[i]
            slots[i] = y_bar
            for j in range(d):
                xt[j] = x[j] - t_total[j]
            sx = dy * step
            st = dy * tau
            for p in range(lo, hi):
                xt[indices[p]] -= sx * vals[p]
                t_total[indices[p]] += st * vals[p]
            if thresh > 0:
                for j in range(d):
                    v = xt[j]
                    if v > thresh:
                        x[j] = v - thresh
                    elif v < -thresh:
                        x[j] = v + thresh
                    else:
                        x[j] = 0.0
            else:
                for j in range(d):
                    x[j] = xt[j]


def modified_saga_rows_chunk(indptr, indices, vals, data, slots, x, t_total, xt, order, tau, n, w, thresh,
                             compiled: bool | None = None):
    """Run modified-SAGA steps for the subset indices in ``order``, updating the arrays in place.

    Every subset is one sparse row ``vals[indptr[i]:indptr[i+1]]`` at columns
    ``indices[...]``; ``slots`` holds the scalar data-space memory,
    ``t_total`` the step-scaled running sum and ``thresh`` the l1 threshold
    ``tau * lam`` (0 for no regulariser).
    """
    use_jit = HAVE_NUMBA if compiled is None else compiled
    if use_jit and not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    fn = _modified_saga_rows_jit if use_jit else _modified_saga_rows_py
    fn(indptr, indices, vals, data, slots, x, t_total, xt, order, float(tau), float(n), float(w),
       float(thresh))
