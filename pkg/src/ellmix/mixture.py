"""EM for mixtures of ellipsoidal components.

Initialisation is K-means; the E-step is a log-space softmax of
log pi_k + log f_k with the small-sigma normalising constant; the M-step
runs a responsibility-weighted backfit per component, warm-started at the
previous iterate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .errors import ComponentCollapse, DegenerateCloudError, DomainError, InitDegenerateError
from .estimators import FitConfig, fit_backfit, fit_direct
from .model import MixtureParams, _log_density_from_dm, as_points, component_log_densities
from .sampler import make_rng

TERMINATIONS = ("tolerance", "max_iters", "component_collapse")


@dataclass(frozen=True)
class EmConfig:
    K: int
    max_em_iters: int = 500
    ll_rel_tol: float = 1e-8
    #: minimum column sum of the responsibilities; None means d + 1
    min_responsibility_mass: float | None = None
    ridge: float = 1e-10
    kmeans_restarts: int = 5
    kmeans_max_iters: int = 100
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    #: centre the xi spread on the unweighted mean over all points (literal M-step form)
    literal_xi_mean: bool = False
    #: keep a component's previous parameters when its update lowers its Q-term
    monotone_guard: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise DomainError(f"K must be >= 1, got {self.K}")
        if self.max_em_iters < 1 or self.kmeans_restarts < 1 or self.kmeans_max_iters < 1:
            raise DomainError("iteration counts must be positive")
        if not self.ll_rel_tol > 0:
            raise DomainError("ll_rel_tol must be positive")
        if self.ridge < 0:
            raise DomainError("ridge must be non-negative")

    def min_mass(self, d: int) -> float:
        return float(d + 1) if self.min_responsibility_mass is None else float(self.min_responsibility_mass)


@dataclass
class EmReport:
    ll_trace: list
    iterations: int
    converged: bool
    termination: str
    masses: list
    param_delta_trace: list = field(default_factory=list)
    degenerate_rows: int = 0
    collapsed_component: int | None = None
    rejected_updates: int = 0

    def to_dict(self) -> dict:
        return {
            "ll_trace": list(self.ll_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "termination": self.termination,
            "masses": list(self.masses),
            "param_delta_trace": list(self.param_delta_trace),
            "degenerate_rows": self.degenerate_rows,
            "collapsed_component": self.collapsed_component,
            "rejected_updates": self.rejected_updates,
        }


# --- K-means ---------------------------------------------------------------

def _sq_dists(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _seed_centers(x, k, rng):
    """Greedy k-means++: D^2 sampling, keeping the best of a few candidates per step."""
    n = x.shape[0]
    trials = 2 + int(math.log(k))
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        pot = closest.sum()
        if pot > 0:
            cand = np.searchsorted(np.cumsum(closest), rng.random(trials) * pot)
            cand = np.minimum(cand, n - 1)
        else:
            cand = rng.integers(n, size=trials)
        cand_d = np.minimum(closest[None, :], _sq_dists(x, x[cand]).T)
        best = int(np.argmin(cand_d.sum(axis=1)))
        centers[c] = x[cand[best]]
        closest = cand_d[best]
    return centers


def _lloyd(x, centers, max_iters):
    labels = None
    for _ in range(max_iters):
        new = np.argmin(_sq_dists(x, centers), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
    wcss = float(_sq_dists(x, centers)[np.arange(x.shape[0]), labels].sum())
    return labels, centers, wcss


def kmeans(x, k: int, rng, restarts: int = 5, max_iters: int = 100):
    """Best-of-``restarts`` K-means by within-cluster sum of squares.

    Returns (labels, centers, wcss).
    """
    x = as_points(x)
    rng = make_rng(rng)
    best = None
    for _ in range(restarts):
        labels, centers, wcss = _lloyd(x, _seed_centers(x, k, rng), max_iters)
        if best is None or wcss < best[2]:
            best = (labels, centers.copy(), wcss)
    return best


def kmeans_init(cloud, K: int, rng, restarts: int = 5, max_iters: int = 100,
                config: FitConfig | None = None) -> MixtureParams:
    """Initial mixture: K-means partition, then a direct fit per cluster."""
    x = as_points(cloud)
    n, d = x.shape
    if n < K * (d + 1):
        raise DomainError(f"need at least K*(d+1) = {K * (d + 1)} points, got {n}")
    labels, _, _ = kmeans(x, K, rng, restarts, max_iters)
    comps = []
    weights = []
    for c in range(K):
        members = labels == c
        size = int(members.sum())
        if size < d + 1:
            raise InitDegenerateError(f"K-means cluster {c} has {size} points, need >= {d + 1}")
        try:
            comps.append(fit_direct(x[members], config=config))
        except DegenerateCloudError as exc:
            raise InitDegenerateError(f"K-means cluster {c} is degenerate: {exc}") from exc
        weights.append(size / n)
    return MixtureParams(tuple(comps), weights)


# --- E / M steps -----------------------------------------------------------

def _e_step(x, mix):
    resp, lse, nbad = _kernels.row_softmax(component_log_densities(x, mix, "approx"))
    return resp, float(np.sum(lse)), nbad


def e_step(cloud, mix: MixtureParams) -> np.ndarray:
    """n x K membership probabilities t_il (rows sum to 1).

    Rows where every component has zero weight are set to 1/K with a warning.
    """
    resp, _, nbad = _e_step(as_points(cloud), mix)
    if nbad:
        warnings.warn(f"{nbad} points had zero density under every component; set to 1/K",
                      RuntimeWarning, stacklevel=2)
    return resp


def _xi_mean_over(x):
    def center(mu, chol):
        return float(np.mean(np.sqrt(_kernels.mahal_sq(x, mu, chol))))
    return center


def _m_step(x, resp, previous, config):
    n, d = x.shape
    masses = resp.sum(axis=0)
    thr = config.min_mass(d)
    for k, m in enumerate(masses):
        if m < thr:
            raise ComponentCollapse(k, float(m), thr)
    xi_center = _xi_mean_over(x) if config.literal_xi_mean else None
    comps, reports = [], []
    for k, prev in enumerate(previous.components):
        est, rep = fit_backfit(x, resp[:, k], init=prev, config=config.fit,
                               ridge=config.ridge, xi_center=xi_center)
        comps.append(est)
        reports.append(rep)
    return MixtureParams(tuple(comps), masses / n), reports


def m_step(cloud, resp, previous: MixtureParams, config: EmConfig) -> MixtureParams:
    """Mixture weights = column means of ``resp``; each component from a weighted backfit.

    Raises :class:`ComponentCollapse` when a column mass is below the
    configured minimum.
    """
    x = as_points(cloud)
    resp = np.asarray(resp, dtype=float)
    if resp.shape != (x.shape[0], previous.n_components):
        raise DomainError(f"responsibilities have shape {resp.shape}, expected {(x.shape[0], previous.n_components)}")
    return _m_step(x, resp, previous, config)[0]


def _component_q(x, t, comp):
    dm = np.sqrt(_kernels.mahal_sq(x, comp.mu, comp.chol))
    return float(t @ _log_density_from_dm(dm, comp, "approx"))


def _guard(x, resp, old, new):
    """Revert components whose update lowers sum_i t_ik log f(x_i | theta_k).

    The weights are the exact maximiser of their part of Q, so after this
    the expected complete log-likelihood cannot decrease and neither can the
    observed log-likelihood.
    """
    comps = list(new.components)
    rejected = 0
    for k, (c_old, c_new) in enumerate(zip(old.components, new.components)):
        t = resp[:, k]
        if _component_q(x, t, c_new) < _component_q(x, t, c_old):
            comps[k] = c_old
            rejected += 1
    if not rejected:
        return new, 0
    return MixtureParams(tuple(comps), new.weights), rejected


def _mix_delta(a, b):
    out = float(np.max(np.abs(a.weights - b.weights)))
    for ca, cb in zip(a.components, b.components):
        out = max(out,
                  float(np.linalg.norm(cb.mu - ca.mu) / (1.0 + np.linalg.norm(ca.mu))),
                  float(np.linalg.norm(cb.sigma_mat - ca.sigma_mat) / np.linalg.norm(ca.sigma_mat)))
    return out


def fit_em(cloud, config: EmConfig, init: MixtureParams | None = None) -> tuple[MixtureParams, EmReport]:
    """Fit a K-component mixture by EM.

    With ``monotone_guard`` (default) a component update that lowers its own
    Q-term is discarded, which makes the log-likelihood trace non-decreasing.
    Stops when the log-likelihood gain drops below ``ll_rel_tol`` times its
    magnitude, after ``max_em_iters`` M-steps, or when a component's
    responsibility mass collapses.  In the last case the returned mixture
    is the last one for which the M-step succeeded.
    """
    x = as_points(cloud)
    n, d = x.shape
    if n < config.K * (d + 1):
        raise DomainError(f"need at least K*(d+1) = {config.K * (d + 1)} points, got {n}")
    if init is None:
        init = kmeans_init(x, config.K, make_rng(config.seed), config.kmeans_restarts,
                           config.kmeans_max_iters, config.fit)
    elif init.n_components != config.K or init.dim != d:
        raise DomainError("init does not match K or the cloud dimension")

    mix = init
    resp, ll, nbad = _e_step(x, mix)
    trace = [ll]
    deltas = []
    degenerate = nbad
    termination = "max_iters"
    collapsed = None
    rejected = 0
    for _ in range(config.max_em_iters):
        try:
            new, _ = _m_step(x, resp, mix, config)
        except ComponentCollapse as exc:
            termination = "component_collapse"
            collapsed = exc.component
            break
        if config.monotone_guard:
            new, nrej = _guard(x, resp, mix, new)
            rejected += nrej
        deltas.append(_mix_delta(mix, new))
        resp, ll_new, nbad = _e_step(x, new)
        degenerate += nbad
        mix = new
        trace.append(ll_new)
        if ll_new - ll < config.ll_rel_tol * abs(ll):
            termination = "tolerance"
            break
        ll = ll_new

    report = EmReport(
        ll_trace=trace,
        iterations=len(deltas),
        converged=termination == "tolerance",
        termination=termination,
        masses=resp.sum(axis=0).tolist(),
        param_delta_trace=deltas,
        degenerate_rows=degenerate,
        collapsed_component=collapsed,
        rejected_updates=rejected,
    )
    return mix, report


def classify(cloud, mix: MixtureParams) -> np.ndarray:
    """Hard labels: argmax of the responsibilities, ties to the lowest index."""
    resp, _, _ = _e_step(as_points(cloud), mix)
    return np.argmax(resp, axis=1)


def match_components(est_centers, true_centers) -> np.ndarray:
    """Assignment est -> true minimising total centre distance; returns perm with
    ``est_centers[perm[j]]`` matched to ``true_centers[j]``."""
    est = np.asarray(est_centers, dtype=float)
    ref = np.asarray(true_centers, dtype=float)
    cost = np.sqrt(((ref[:, None, :] - est[None, :, :]) ** 2).sum(axis=2))
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(ref.shape[0], dtype=int)
    perm[rows] = cols
    return perm
