"""Exact simulation via X = mu + L W U.

W is drawn by rejection from a shifted normal proposal; U is a normalised
Gaussian vector.  L is the lower Cholesky factor of the shape matrix.  Any
square root S with S S^T = Sigma gives the same law because S^{-1} L is
orthogonal and the uniform sphere law is rotation invariant.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, SamplerStallError
from .model import EllipsoidParams, MixtureParams, PointCloud
from .radial import check_sigma

MAX_CONSECUTIVE_REJECTIONS = 10**6


def make_rng(seed=None) -> np.random.Generator:
    """PCG64 generator.  Identical seeds give identical streams on every platform."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sub_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for task ``index`` derived from ``(seed, index)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def w_acceptance(t, d: int):
    """Acceptance probability t^{d-1} exp(-(d-1)(t-1)) of a proposal t > 0 (0 for t <= 0)."""
    t = np.asarray(t, dtype=float)
    pos = t > 0
    with np.errstate(divide="ignore"):
        loga = (d - 1) * (np.log(np.where(pos, t, 1.0)) - (t - 1.0))
    return np.where(pos, np.exp(loga), 0.0)


def sample_w_with_stats(d: int, sigma: float, n: int, rng) -> tuple[np.ndarray, int]:
    """Draw ``n`` values of W; also return the number of proposals consumed.

    Proposal N(1 + (d-1) sigma^2, sigma^2); envelope constant
    exp((d-1)^2 sigma^2 / 2).
    """
    if d < 2:
        raise DomainError(f"d must be >= 2, got {d}")
    check_sigma(sigma)
    rng = make_rng(rng)
    out = np.empty(int(n))
    loc = 1.0 + (d - 1) * sigma * sigma
    filled = 0
    proposals = 0
    since_accept = 0
    while filled < n:
        need = n - filled
        batch = min(max(int(need * 1.02) + 16, 64), MAX_CONSECUTIVE_REJECTIONS)
        t = rng.normal(loc, sigma, size=batch)
        u = rng.random(batch)
        ok = np.flatnonzero(u < w_acceptance(t, d))
        if ok.size == 0:
            since_accept += batch
            proposals += batch
            if since_accept >= MAX_CONSECUTIVE_REJECTIONS:
                raise SamplerStallError(
                    f"{since_accept} consecutive rejections (d={d}, sigma={sigma:g})"
                )
            continue
        take = ok[:need]
        if take.size == need:
            # proposals after the last needed acceptance are discarded unused
            proposals += int(take[-1]) + 1
        else:
            proposals += batch
            since_accept = batch - int(ok[-1]) - 1
        out[filled:filled + take.size] = t[take]
        filled += take.size
    return out, proposals


def sample_w(d: int, sigma: float, rng, size=None):
    """Exact draw(s) from the radial density  t^{d-1} exp(-(t-1)^2 / (2 sigma^2)) / J_{d-1}."""
    n = 1 if size is None else int(size)
    w, _ = sample_w_with_stats(d, sigma, n, rng)
    return float(w[0]) if size is None else w


def sample_unit_direction(d: int, rng, size=None):
    """Uniform direction(s) on the unit sphere S^{d-1}."""
    if d not in (2, 3):
        raise DomainError(f"d must be 2 or 3, got {d}")
    rng = make_rng(rng)
    n = 1 if size is None else int(size)
    g = rng.standard_normal((n, d))
    norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    zero = norms == 0.0
    while np.any(zero):
        g[zero] = rng.standard_normal((int(zero.sum()), d))
        norms[zero] = np.sqrt(np.einsum("ij,ij->i", g[zero], g[zero]))
        zero = norms == 0.0
    u = g / norms[:, None]
    return u[0] if size is None else u


def _draw(params: EllipsoidParams, n: int, rng, root=None):
    w = sample_w(params.dim, params.noise_sigma, rng, size=n)
    u = sample_unit_direction(params.dim, rng, size=n)
    root = params.chol if root is None else root
    return params.mu + (w[:, None] * u) @ root.T, w


def sample_ellipsoid(params: EllipsoidParams, n: int, rng, *, return_w: bool = False):
    """n i.i.d. points from the ellipsoidal density."""
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    rng = make_rng(rng)
    x, w = _draw(params, int(n), rng)
    cloud = PointCloud(x, {"source": "sample_ellipsoid"})
    return (cloud, w) if return_w else cloud


def sample_mixture(mix: MixtureParams, n: int, rng) -> tuple[PointCloud, np.ndarray]:
    """Points and ground-truth component labels from a mixture.

    Labels are drawn first; then each component's points are drawn in
    component order and scattered to their label positions.
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    rng = make_rng(rng)
    k = mix.n_components
    labels = rng.choice(k, size=int(n), p=mix.weights) if k > 1 else np.zeros(int(n), dtype=np.int64)
    labels = labels.astype(np.int64)
    x = np.empty((int(n), mix.dim))
    for j, comp in enumerate(mix.components):
        idx = np.flatnonzero(labels == j)
        if idx.size:
            x[idx], _ = _draw(comp, idx.size, rng)
    return PointCloud(x, {"source": "sample_mixture"}), labels


def envelope_constant(d: int, sigma: float) -> float:
    """M = exp((d-1)^2 sigma^2 / 2); the expected acceptance rate is J-ratio / M ~ 1/M."""
    return math.exp(0.5 * ((d - 1) * sigma) ** 2)
