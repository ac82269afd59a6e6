"""Per-point numeric kernels with a numba and a pure-numpy implementation.

The numba versions are fused single-pass loops with sequential summation;
the numpy versions are vectorised.  Both are deterministic but they are not
bitwise identical to each other (summation order differs), so every code
path uses one backend consistently.

Set ``ELLMIX_DISABLE_NUMBA=1`` to force the numpy backend.  It is also used
automatically when numba cannot be imported.
"""
import os
from types import SimpleNamespace

import numpy as np
from scipy.linalg import solve_triangular

_FLAG = os.environ.get("ELLMIX_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    if DISABLED_BY_ENV:
        raise ImportError("disabled by ELLMIX_DISABLE_NUMBA")
    import numba
except ImportError:
    numba = None

HAVE_NUMBA = numba is not None


# --- numpy implementations ------------------------------------------------

def _np_mahal_sq(points, mu, chol):
    z = solve_triangular(chol, (points - mu).T, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", z, z)


def _np_weighted_mean(points, w):
    return (w @ points) / w.sum()


def _np_weighted_scatter(points, w, mu):
    c = points - mu
    return (c.T * w) @ c / w.sum()


def _np_center_update(points, w, mu0, chol0, min_xi):
    c = points - mu0
    xi = np.sqrt(_np_mahal_sq(points, mu0, chol0))
    corr = c / np.maximum(xi, min_xi)[:, None]
    sw = w.sum()
    return (w @ points) / sw - (w @ corr) / sw


def _np_row_softmax(logp):
    m = logp.max(axis=1)
    bad = ~np.isfinite(m)
    safe_m = np.where(bad, 0.0, m)
    e = np.exp(logp - safe_m[:, None])
    s = e.sum(axis=1)
    resp = e / np.where(bad, 1.0, s)[:, None]
    resp[bad] = 1.0 / logp.shape[1]
    with np.errstate(divide="ignore"):
        lse = safe_m + np.log(s)
    lse[bad] = -np.inf
    return resp, lse, int(bad.sum())


numpy_kernels = SimpleNamespace(
    name="numpy",
    mahal_sq=_np_mahal_sq,
    weighted_mean=_np_weighted_mean,
    weighted_scatter=_np_weighted_scatter,
    center_update=_np_center_update,
    row_softmax=_np_row_softmax,
)


# --- loop implementations (compiled with numba) -----------------------------

def _loop_mahal_sq(points, mu, chol):
    n, d = points.shape
    out = np.empty(n)
    z = np.empty(d)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            s = points[i, j] - mu[j]
            for k in range(j):
                s -= chol[j, k] * z[k]
            z[j] = s / chol[j, j]
            acc += z[j] * z[j]
        out[i] = acc
    return out


def _loop_weighted_mean(points, w):
    n, d = points.shape
    acc = np.zeros(d)
    sw = 0.0
    for i in range(n):
        sw += w[i]
        for j in range(d):
            acc[j] += w[i] * points[i, j]
    return acc / sw


def _loop_weighted_scatter(points, w, mu):
    n, d = points.shape
    out = np.zeros((d, d))
    c = np.empty(d)
    sw = 0.0
    for i in range(n):
        sw += w[i]
        for j in range(d):
            c[j] = points[i, j] - mu[j]
        for j in range(d):
            wc = w[i] * c[j]
            for k in range(j + 1):
                out[j, k] += wc * c[k]
    for j in range(d):
        for k in range(j + 1):
            out[j, k] /= sw
            out[k, j] = out[j, k]
    return out


def _loop_center_update(points, w, mu0, chol0, min_xi):
    n, d = points.shape
    sx = np.zeros(d)
    sc = np.zeros(d)
    z = np.empty(d)
    sw = 0.0
    for i in range(n):
        xi2 = 0.0
        for j in range(d):
            s = points[i, j] - mu0[j]
            for k in range(j):
                s -= chol0[j, k] * z[k]
            z[j] = s / chol0[j, j]
            xi2 += z[j] * z[j]
        xi = np.sqrt(xi2)
        if xi < min_xi:
            xi = min_xi
        sw += w[i]
        for j in range(d):
            sx[j] += w[i] * points[i, j]
            sc[j] += w[i] * ((points[i, j] - mu0[j]) / xi)
    return sx / sw - sc / sw


def _loop_row_softmax(logp):
    n, k = logp.shape
    resp = np.empty((n, k))
    lse = np.empty(n)
    nbad = 0
    for i in range(n):
        m = -np.inf
        for j in range(k):
            if logp[i, j] > m:
                m = logp[i, j]
        if not np.isfinite(m):
            nbad += 1
            for j in range(k):
                resp[i, j] = 1.0 / k
            lse[i] = -np.inf
            continue
        s = 0.0
        for j in range(k):
            e = np.exp(logp[i, j] - m)
            resp[i, j] = e
            s += e
        for j in range(k):
            resp[i, j] /= s
        lse[i] = m + np.log(s)
    return resp, lse, nbad


if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    numba_kernels = SimpleNamespace(
        name="numba",
        mahal_sq=_jit(_loop_mahal_sq),
        weighted_mean=_jit(_loop_weighted_mean),
        weighted_scatter=_jit(_loop_weighted_scatter),
        center_update=_jit(_loop_center_update),
        row_softmax=_jit(_loop_row_softmax),
    )
else:
    numba_kernels = None

active = numba_kernels if HAVE_NUMBA else numpy_kernels
BACKEND = active.name


def _contig(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def mahal_sq(points, mu, chol):
    """Squared Mahalanobis distances of rows of ``points`` given the lower Cholesky factor."""
    return active.mahal_sq(_contig(points), _contig(mu), _contig(chol))


def weighted_mean(points, w):
    return active.weighted_mean(_contig(points), _contig(w))


def weighted_scatter(points, w, mu):
    """sum_i w_i (x_i - mu)(x_i - mu)^T / sum_i w_i."""
    return active.weighted_scatter(_contig(points), _contig(w), _contig(mu))


def center_update(points, w, mu0, chol0, min_xi):
    """Variance-reduced centre update: weighted mean of x_i - (x_i - mu0)/max(xi_i, min_xi)."""
    return active.center_update(_contig(points), _contig(w), _contig(mu0), _contig(chol0), float(min_xi))


def row_softmax(logp):
    """Row-wise softmax in log space; returns (resp, row log-sum-exp, #rows that were all -inf)."""
    resp, lse, nbad = active.row_softmax(_contig(logp))
    return resp, lse, int(nbad)
