"""Hot inner loops, each with a numba implementation and a pure-numpy twin.

The backend is picked once at import from ``SUBQUAD_BSDE_BACKEND``
(``numba`` or ``numpy``; default ``numba`` when importable) and can be
switched at runtime with :func:`set_backend`.  Both paths are required to
agree to roundoff; ``tests/test_kernels.py`` pins that.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_BACKEND = "numpy"


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


_env = os.environ.get("SUBQUAD_BSDE_BACKEND", "numba" if HAVE_NUMBA else "numpy").lower()
set_backend(_env if _env in ("numba", "numpy") else "numpy")


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return None


# --------------------------------------------------------------------------
# 1-D L1 distance transform:  out[j] = min_i f[i] + m * |x_j - x_i|
# on a uniform grid, rows of a 2-D array independently.
# --------------------------------------------------------------------------

def _l1_transform_rows_py(f, slope):
    out = f.copy()
    n_rows, n = out.shape
    for r in range(n_rows):
        for j in range(1, n):
            cand = out[r, j - 1] + slope
            if cand < out[r, j]:
                out[r, j] = cand
        for j in range(n - 2, -1, -1):
            cand = out[r, j + 1] + slope
            if cand < out[r, j]:
                out[r, j] = cand
    return out


_l1_transform_rows_nb = _njit(_l1_transform_rows_py)


def _l1_transform_rows_np(f, slope):
    # min-plus with a linear cone == running min of (f - slope*j) / (f + slope*j)
    n = f.shape[1]
    idx = np.arange(n, dtype=np.float64) * slope
    left = np.minimum.accumulate(f - idx, axis=1) + idx
    right = (np.minimum.accumulate((f + idx)[:, ::-1], axis=1))[:, ::-1] - idx
    return np.minimum(left, right)


def l1_transform_rows(f: np.ndarray, m: float, step: float) -> np.ndarray:
    """Row-wise lower envelope ``min_i f[i] + m*|x_j - x_i|`` on a grid of spacing ``step``."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    squeeze = f.ndim == 1
    if squeeze:
        f = f[None, :]
    slope = float(m) * float(step)
    if _BACKEND == "numba":
        out = _l1_transform_rows_nb(f, slope)
    else:
        out = _l1_transform_rows_np(f, slope)
    return out[0] if squeeze else out


# --------------------------------------------------------------------------
# Inf-convolution query on a tabulated (y', z') box.
#
# For each query q=(qy,qz):  inf over the box of  G~(y',z') + m|qy-y'| + m|qz-z'|
# where G~ is G linearly interpolated along each axis.  The inner infimum over
# z' is exact for the piecewise-linear row (minimum sits at a node or at the
# cone apex); the outer one treats the resulting column as piecewise linear.
# --------------------------------------------------------------------------

def _pl_cone_min(vals, trans, x0, h, m, q):
    # vals: raw nodal values, trans: their L1 transform with slope m*h
    n = vals.shape[0]
    last = x0 + (n - 1) * h
    if q <= x0:
        return trans[0] + m * (x0 - q)
    if q >= last:
        return trans[n - 1] + m * (q - last)
    s = (q - x0) / h
    j = int(np.floor(s))
    if j > n - 2:
        j = n - 2
    w = s - j
    xj = x0 + j * h
    pl = vals[j] * (1.0 - w) + vals[j + 1] * w
    left = trans[j] + m * (q - xj)
    right = trans[j + 1] + m * (xj + h - q)
    best = pl
    if left < best:
        best = left
    if right < best:
        best = right
    return best


_pl_cone_min_nb = _njit(_pl_cone_min)


if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _infconv_query_nb(table, trans_z, y0, z0, h, m, qy, qz):
        n_q = qy.shape[0]
        n_y = table.shape[0]
        out = np.empty(n_q)
        col = np.empty((1, n_y))
        for k in range(n_q):
            for i in range(n_y):
                col[0, i] = _pl_cone_min_nb(table[i], trans_z[i], z0, h, m, qz[k])
            col_t = _l1_transform_rows_nb(col, m * h)
            out[k] = _pl_cone_min_nb(col[0], col_t[0], y0, h, m, qy[k])
        return out


def _pl_cone_min_vec(vals, trans, x0, h, m, q):
    """Vectorised `_pl_cone_min`: vals/trans shape (R, n), q shape (R,)."""
    n = vals.shape[1]
    last = x0 + (n - 1) * h
    s = np.clip((q - x0) / h, 0.0, n - 1.0)
    j = np.minimum(np.floor(s).astype(np.int64), n - 2)
    w = s - j
    rows = np.arange(vals.shape[0])
    xj = x0 + j * h
    pl = vals[rows, j] * (1.0 - w) + vals[rows, j + 1] * w
    left = trans[rows, j] + m * (q - xj)
    right = trans[rows, j + 1] + m * (xj + h - q)
    inside = np.minimum(pl, np.minimum(left, right))
    below = trans[:, 0] + m * (x0 - q)
    above = trans[:, n - 1] + m * (q - last)
    return np.where(q <= x0, below, np.where(q >= last, above, inside))


def _infconv_query_np(table, trans_z, y0, z0, h, m, qy, qz):
    n_y = table.shape[0]
    out = np.empty(qy.shape[0])
    chunk = max(1, 200_000 // max(n_y, 1))
    for start in range(0, qy.shape[0], chunk):
        sl = slice(start, start + chunk)
        qz_c, qy_c = qz[sl], qy[sl]
        nq = qz_c.shape[0]
        # column values for every (query, row) pair
        vals = np.broadcast_to(table[None], (nq,) + table.shape).reshape(nq * n_y, -1)
        trans = np.broadcast_to(trans_z[None], (nq,) + trans_z.shape).reshape(nq * n_y, -1)
        col = _pl_cone_min_vec(vals, trans, z0, h, m, np.repeat(qz_c, n_y)).reshape(nq, n_y)
        col_t = _l1_transform_rows_np(col, m * h)
        out[sl] = _pl_cone_min_vec(col, col_t, y0, h, m, qy_c)
    return out


def infconv_query(table, trans_z, y0, z0, h, m, qy, qz) -> np.ndarray:
    """Evaluate the penalised infimum at query points (see module comment)."""
    table = np.ascontiguousarray(table, dtype=np.float64)
    trans_z = np.ascontiguousarray(trans_z, dtype=np.float64)
    qy = np.ascontiguousarray(qy, dtype=np.float64).ravel()
    qz = np.ascontiguousarray(qz, dtype=np.float64).ravel()
    if _BACKEND == "numba":
        return _infconv_query_nb(table, trans_z, float(y0), float(z0), float(h), float(m), qy, qz)
    return _infconv_query_np(table, trans_z, float(y0), float(z0), float(h), float(m), qy, qz)


# --------------------------------------------------------------------------
# Normal equations with a fixed summation order (bit-exact replay).
# --------------------------------------------------------------------------

def _gram_blocked_py(phi, rhs, block):
    n, p = phi.shape
    k = rhs.shape[1]
    gram = np.zeros((p, p))
    cross = np.zeros((p, k))
    for start in range(0, n, block):
        stop = min(start + block, n)
        g_blk = np.zeros((p, p))
        c_blk = np.zeros((p, k))
        for i in range(start, stop):
            for a in range(p):
                va = phi[i, a]
                for b in range(a, p):
                    g_blk[a, b] += va * phi[i, b]
                for c in range(k):
                    c_blk[a, c] += va * rhs[i, c]
        for a in range(p):
            for b in range(a, p):
                gram[a, b] += g_blk[a, b]
            for c in range(k):
                cross[a, c] += c_blk[a, c]
    for a in range(p):
        for b in range(a):
            gram[a, b] = gram[b, a]
    return gram, cross


_gram_blocked_nb = _njit(_gram_blocked_py)


def _gram_blocked_np(phi, rhs, block):
    p = phi.shape[1]
    gram = np.zeros((p, p))
    cross = np.zeros((p, rhs.shape[1]))
    for start in range(0, phi.shape[0], block):
        blk = phi[start:start + block]
        # einsum without optimize stays on its own C loops (no threaded BLAS)
        gram += np.einsum("ia,ib->ab", blk, blk, optimize=False)
        cross += np.einsum("ia,ic->ac", blk, rhs[start:start + block], optimize=False)
    return gram, cross


def gram_blocked(phi: np.ndarray, rhs: np.ndarray, block: int = 4096):
    """Return ``(phi.T @ phi, phi.T @ rhs)`` accumulated block by block in path order."""
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    if rhs.ndim == 1:
        rhs = rhs[:, None]
    if _BACKEND == "numba":
        return _gram_blocked_nb(phi, rhs, int(block))
    return _gram_blocked_np(phi, rhs, int(block))


# --------------------------------------------------------------------------
# Central differences on a uniform 1-D grid (interior nodes only).
# --------------------------------------------------------------------------

def _central_diff_py(u, dx):
    n = u.shape[0]
    d1 = np.zeros(n)
    d2 = np.zeros(n)
    inv2 = 0.5 / dx
    invsq = 1.0 / (dx * dx)
    for j in range(1, n - 1):
        d1[j] = (u[j + 1] - u[j - 1]) * inv2
        d2[j] = (u[j + 1] - 2.0 * u[j] + u[j - 1]) * invsq
    return d1, d2


_central_diff_nb = _njit(_central_diff_py)


def _central_diff_np(u, dx):
    d1 = np.zeros_like(u)
    d2 = np.zeros_like(u)
    d1[1:-1] = (u[2:] - u[:-2]) * (0.5 / dx)
    d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) * (1.0 / (dx * dx))
    return d1, d2


def central_diff(u: np.ndarray, dx: float):
    u = np.ascontiguousarray(u, dtype=np.float64)
    if _BACKEND == "numba":
        return _central_diff_nb(u, float(dx))
    return _central_diff_np(u, float(dx))
