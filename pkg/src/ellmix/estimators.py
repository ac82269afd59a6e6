"""Single-component estimation: direct moment estimators and backfitting.

Every estimator takes optional non-negative weights so the EM M-step can
reuse it with responsibilities.  Points with zero weight are dropped before
any arithmetic, which makes a 0/1-weighted fit bitwise identical to an
unweighted fit on the selected subset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateCloudError, DomainError, IllConditionedShapeError
from .model import EIG_FLOOR, EllipsoidParams, as_points, check_shape_matrix
from .radial import JTable


@dataclass(frozen=True)
class FitConfig:
    max_backfit_iters: int = 100
    param_tol: float = 1e-10
    min_xi: float = 1e-9
    #: floor on the estimated noise level; exact surface samples give sigma_hat = 0
    min_sigma: float = 1e-12
    #: divide the shape estimate by J_{d+1}/J_{d-1} (targets Sigma rather than Sigma*)
    correct_bias: bool = False

    def __post_init__(self):
        if self.max_backfit_iters < 1:
            raise DomainError("max_backfit_iters must be positive")
        for name in ("param_tol", "min_xi", "min_sigma"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")


@dataclass
class SingleFitReport:
    iterations: int
    final_param_delta: float
    estimate: EllipsoidParams
    converged: bool
    delta_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_param_delta": self.final_param_delta,
            "converged": self.converged,
            "delta_trace": list(self.delta_trace),
            "estimate": {
                "mu": self.estimate.mu.tolist(),
                "sigma_mat": self.estimate.sigma_mat.tolist(),
                "noise_sigma": self.estimate.noise_sigma,
            },
        }


def _prepare(cloud, weights):
    x = as_points(cloud)
    n, d = x.shape
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.size != n:
            raise DomainError(f"{w.size} weights for {n} points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and non-negative")
        keep = w > 0
        if not np.all(keep):
            x, w = x[keep], w[keep]
    if w.sum() < d + 1:
        raise DomainError(f"need an effective sample size >= {d + 1}, got {w.sum():.6g}")
    return x, w


def _shape_from_scatter(scatter, d, ridge=0.0):
    """d * scatter, validated; optionally lifted by ridge * trace/d * I when near-singular."""
    s = d * scatter
    s = 0.5 * (s + s.T)
    tr = np.trace(s)
    if not (np.isfinite(tr) and tr > 0):
        raise DegenerateCloudError("scatter matrix is zero: all points coincide")
    try:
        chol = check_shape_matrix(s)
    except IllConditionedShapeError:
        if ridge <= 0:
            raise DegenerateCloudError(
                f"scatter has rank < {d}; smallest eigenvalue below {EIG_FLOOR:g} * trace/d"
            ) from None
        s = s + ridge * (tr / d) * np.eye(d)
        try:
            chol = check_shape_matrix(s)
        except IllConditionedShapeError as exc:
            raise DegenerateCloudError(str(exc)) from None
    return s, chol


def _radial_sigma(x, w, mu, chol, min_sigma, xi_center=None):
    """sqrt of the weighted variance of xi_i = d_m(x_i; mu, Sigma) (two-pass)."""
    xi = np.sqrt(_kernels.mahal_sq(x, mu, chol))
    sw = w.sum()
    center = (w @ xi) / sw if xi_center is None else xi_center
    var = (w @ (xi - center) ** 2) / sw
    return max(math.sqrt(var), min_sigma)


def _finish(x, w, mu, s, chol, config, xi_center=None):
    sigma = _radial_sigma(x, w, mu, chol, config.min_sigma, xi_center)
    if config.correct_bias:
        d = x.shape[1]
        j = JTable.build(sigma, d + 1)
        s = s * (j[d - 1] / j[d + 1])
    return EllipsoidParams(mu, s, sigma)


def fit_direct(cloud, weights=None, config: FitConfig | None = None) -> EllipsoidParams:
    """Moment estimators: weighted mean, d x weighted scatter, and the spread of xi.

    The shape estimate targets Sigma* = (J_{d+1}/J_{d-1}) Sigma and the noise
    estimate targets sigma-tilde, both close to the true values for small sigma.
    """
    config = config or FitConfig()
    x, w = _prepare(cloud, weights)
    d = x.shape[1]
    mu = _kernels.weighted_mean(x, w)
    s, chol = _shape_from_scatter(_kernels.weighted_scatter(x, w, mu), d)
    return _finish(x, w, mu, s, chol, config)


def _param_delta(mu0, s0, mu1, s1):
    dmu = np.linalg.norm(mu1 - mu0) / (1.0 + np.linalg.norm(mu0))
    ds = np.linalg.norm(s1 - s0) / np.linalg.norm(s0)
    return float(max(dmu, ds))


def _step(x, w, mu0, chol0, d, min_xi, ridge):
    mu1 = _kernels.center_update(x, w, mu0, chol0, min_xi)
    s1, chol1 = _shape_from_scatter(_kernels.weighted_scatter(x, w, mu1), d, ridge)
    return mu1, s1, chol1


def backfit_step(cloud, weights, current: EllipsoidParams, config: FitConfig | None = None) -> EllipsoidParams:
    """One backfitting update from ``current``.

    mu <- weighted mean of x_i - (x_i - mu0) / max(xi_i, min_xi), with xi_i
    the Mahalanobis distance under ``current``; Sigma <- d x weighted scatter
    about the new mu; sigma from the xi spread under the new (mu, Sigma).
    """
    config = config or FitConfig()
    x, w = _prepare(cloud, weights)
    d = x.shape[1]
    mu1, s1, chol1 = _step(x, w, current.mu, current.chol, d, config.min_xi, 0.0)
    return _finish(x, w, mu1, s1, chol1, config)


def fit_backfit(cloud, weights=None, init: EllipsoidParams | None = None,
                config: FitConfig | None = None, *, ridge: float = 0.0,
                xi_center=None) -> tuple[EllipsoidParams, SingleFitReport]:
    """Iterate :func:`backfit_step` to a fixed point.

    Starts from ``init`` (default: :func:`fit_direct`) and stops when
    max(|d mu| / (1 + |mu|), |d Sigma|_F / |Sigma|_F) < ``param_tol`` or after
    ``max_backfit_iters`` steps.  The noise level is estimated once, after
    the loop.  Hitting the iteration cap is reported, not raised.

    ``ridge`` and ``xi_center`` are hooks for the mixture M-step: a
    regularisation applied to near-singular shape updates, and a fixed value
    (instead of the weighted mean) about which the xi spread is measured.
    """
    config = config or FitConfig()
    x, w = _prepare(cloud, weights)
    d = x.shape[1]
    if init is None:
        mu = _kernels.weighted_mean(x, w)
        s, chol = _shape_from_scatter(_kernels.weighted_scatter(x, w, mu), d, ridge)
    else:
        if init.dim != d:
            raise DomainError(f"init has dimension {init.dim}, cloud has {d}")
        mu, s, chol = init.mu, init.sigma_mat, init.chol

    deltas = []
    converged = False
    for _ in range(config.max_backfit_iters):
        mu1, s1, chol1 = _step(x, w, mu, chol, d, config.min_xi, ridge)
        delta = _param_delta(mu, s, mu1, s1)
        deltas.append(delta)
        mu, s, chol = mu1, s1, chol1
        if delta < config.param_tol:
            converged = True
            break

    if xi_center is not None and callable(xi_center):
        xi_center = xi_center(mu, chol)
    est = _finish(x, w, mu, s, chol, config, xi_center)
    report = SingleFitReport(
        iterations=len(deltas),
        final_param_delta=deltas[-1],
        estimate=est,
        converged=converged,
        delta_trace=deltas,
    )
    return est, report


def frobenius_error(sigma_hat, sigma_ref) -> float:
    """E(Sigma) = sqrt(sum_ij (Sigma_hat_ij - Sigma_ref_ij)^2)."""
    return float(np.linalg.norm(np.asarray(sigma_hat) - np.asarray(sigma_ref)))
