"""Parameter containers, Mahalanobis geometry and (mixture) log-densities."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, IllConditionedShapeError, ValidityWarning
from .radial import SIGMA_WARN, log_norm_constant

#: Relative eigenvalue floor (times trace/d) below which a shape matrix is rejected.
EIG_FLOOR = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def check_shape_matrix(sigma_mat: np.ndarray) -> np.ndarray:
    """Return the lower Cholesky factor of an SPD matrix or raise IllConditionedShapeError."""
    s = np.asarray(sigma_mat, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise IllConditionedShapeError(f"shape matrix must be square, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise IllConditionedShapeError("shape matrix has non-finite entries")
    scale = np.max(np.abs(s))
    if scale == 0.0 or np.max(np.abs(s - s.T)) > 1e-12 * scale:
        raise IllConditionedShapeError("shape matrix is not symmetric (or is zero)")
    d = s.shape[0]
    eig = np.linalg.eigvalsh(s)
    floor = EIG_FLOOR * np.trace(s) / d
    if not eig[0] > floor:
        raise IllConditionedShapeError(
            f"shape matrix smallest eigenvalue {eig[0]:.3g} is below floor {floor:.3g}"
        )
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedShapeError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class EllipsoidParams:
    """One ellipsoidal component: centre ``mu``, SPD shape ``sigma_mat``, radial noise ``noise_sigma``.

    The surface is the level-1 set of the Mahalanobis distance; ``noise_sigma``
    is measured in those (dimensionless) units.
    """

    mu: np.ndarray
    sigma_mat: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        mu = _frozen(self.mu).reshape(-1)
        s = np.array(self.sigma_mat, dtype=float)
        if s.shape != (mu.size, mu.size):
            raise DomainError(f"sigma_mat shape {s.shape} does not match mu of length {mu.size}")
        if mu.size not in (2, 3):
            raise DomainError(f"only d in {{2, 3}} is supported, got d={mu.size}")
        if not np.all(np.isfinite(mu)):
            raise DomainError("centre has non-finite entries")
        chol = check_shape_matrix(s)
        s = 0.5 * (s + s.T)
        sigma = float(self.noise_sigma)
        if not (sigma > 0.0 and math.isfinite(sigma)):
            raise DomainError(f"noise_sigma must be positive and finite, got {self.noise_sigma!r}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_mat", _frozen(s))
        object.__setattr__(self, "noise_sigma", sigma)
        chol.setflags(write=False)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def chol(self) -> np.ndarray:
        """Lower-triangular L with L L^T = sigma_mat."""
        return self._chol

    @property
    def validity(self) -> bool:
        """True when noise_sigma <= 0.1 (thin-shell regime)."""
        return self.noise_sigma <= SIGMA_WARN

    @cached_property
    def half_logdet(self) -> float:
        return float(np.sum(np.log(np.diag(self._chol))))

    def replace(self, **changes) -> "EllipsoidParams":
        kw = dict(mu=self.mu, sigma_mat=self.sigma_mat, noise_sigma=self.noise_sigma)
        kw.update(changes)
        return EllipsoidParams(**kw)

    def __repr__(self):
        return (f"EllipsoidParams(mu={self.mu.tolist()}, sigma_mat={self.sigma_mat.tolist()}, "
                f"noise_sigma={self.noise_sigma!r})")


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """K weighted ellipsoidal components sharing one dimension."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise DomainError("a mixture needs at least one component")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != len(comps):
            raise DomainError(f"{w.size} weights for {len(comps)} components")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("mixture weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise DomainError(f"mixture weights sum to {w.sum()!r}, not 1")
        w = w / w.sum()
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise DomainError(f"components have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @classmethod
    def single(cls, params: EllipsoidParams) -> "MixtureParams":
        return cls((params,), [1.0])

    def permuted(self, order: Sequence[int]) -> "MixtureParams":
        order = list(order)
        return MixtureParams(tuple(self.components[i] for i in order), self.weights[order])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """n points in R^d with free-form ingestion metadata (source path, format, labels...)."""

    points: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim == 1:
            p = p.reshape(1, -1)
        if p.ndim != 2 or p.shape[0] < 1:
            raise DomainError(f"point cloud must be a non-empty n x d array, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DomainError("point cloud has non-finite entries")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)


def as_points(cloud) -> np.ndarray:
    """n x d float array from a PointCloud or array-like."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    p = np.asarray(cloud, dtype=float)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    if p.ndim != 2:
        raise DomainError(f"expected an n x d array of points, got shape {p.shape}")
    return p


def mahalanobis(x, params: EllipsoidParams):
    """Mahalanobis distance of ``x`` (a d-vector or an n x d array) to the component.

    Solves against the Cholesky factor; no explicit inverse is formed.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(1, -1) if single else x
    if pts.shape[1] != params.dim:
        raise DomainError(f"point dimension {pts.shape[1]} != component dimension {params.dim}")
    dm = np.sqrt(_kernels.mahal_sq(pts, params.mu, params.chol))
    return float(dm[0]) if single else dm


def _log_density_from_dm(dm, params: EllipsoidParams, mode: str):
    logc = log_norm_constant(params.dim, params.half_logdet, params.noise_sigma, mode)
    return logc - (dm - 1.0) ** 2 / (2.0 * params.noise_sigma ** 2)


def log_density(x, params: EllipsoidParams, mode: str = "exact"):
    """log f(x) = log C_d - (d_m(x) - 1)^2 / (2 sigma^2).

    ``mode`` selects the exact or the small-sigma normalising constant.
    Accepts a single point or an n x d array.
    """
    if mode == "approx" and not params.validity:
        warnings.warn(
            f"approximate constant used with noise_sigma={params.noise_sigma:g} > {SIGMA_WARN:g}",
            ValidityWarning,
            stacklevel=2,
        )
    return _log_density_from_dm(mahalanobis(x, params), params, mode)


def component_log_densities(points, mix: MixtureParams, mode: str = "approx") -> np.ndarray:
    """n x K matrix of log pi_k + log f(x_i | theta_k)."""
    pts = as_points(points)
    if pts.shape[1] != mix.dim:
        raise DomainError(f"point dimension {pts.shape[1]} != mixture dimension {mix.dim}")
    out = np.empty((pts.shape[0], mix.n_components))
    with np.errstate(divide="ignore"):
        logw = np.log(mix.weights)
    for k, comp in enumerate(mix.components):
        dm = np.sqrt(_kernels.mahal_sq(pts, comp.mu, comp.chol))
        out[:, k] = logw[k] + _log_density_from_dm(dm, comp, mode)
    return out


def mixture_log_likelihood(cloud, mix: MixtureParams) -> float:
    """sum_i log sum_k pi_k f(x_i | theta_k), with the approximate constants."""
    pts = as_points(cloud)
    if pts.shape[0] == 0:
        raise DomainError("log-likelihood of an empty cloud is undefined")
    _, lse, _ = _kernels.row_softmax(component_log_densities(pts, mix, "approx"))
    return float(np.sum(lse))
