"""Radial moment integrals and normalisation constants.

All quantities derive from

    J_q(a) = int_0^inf t^q exp(-(t - 1)^2 / (2 a^2)) dt,

evaluated in production by the closed-form seeds J_0, J_1 and the
three-term recurrence J_q = J_{q-1} + (q - 1) a^2 J_{q-2}.  Adaptive
quadrature (:func:`j_moment_oracle`) is kept only as an independent check.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericError, UnsupportedDimensionError, ValidityWarning

SQRT_2PI = math.sqrt(2.0 * math.pi)

#: Above this noise level the small-sigma constants are flagged.
SIGMA_WARN = 0.1
#: At or above this level the thin-shell model is rejected outright.
SIGMA_MAX = 1.0


def upper_normal_tail(x: float) -> float:
    """Phi(-x) = 1 - Phi(x), via erfc so it stays accurate deep in the tail.

    ``math.erfc`` is accurate to a few ulps, well inside 1e-14 absolute.
    """
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def check_sigma(sigma: float, *, stacklevel: int = 3) -> bool:
    """Validate a noise level; return True when it is inside the thin-shell regime.

    Raises for sigma <= 0 or sigma >= 1 and emits :class:`ValidityWarning`
    for sigma > 0.1.
    """
    if not sigma > 0.0 or not math.isfinite(sigma):
        raise DomainError(f"noise sigma must be positive and finite, got {sigma!r}")
    if sigma >= SIGMA_MAX:
        raise DomainError(
            f"noise sigma={sigma:g} >= {SIGMA_MAX:g}: points no longer concentrate on a surface"
        )
    if sigma > SIGMA_WARN:
        warnings.warn(
            f"noise sigma={sigma:g} > {SIGMA_WARN:g}; small-sigma approximations are inaccurate",
            ValidityWarning,
            stacklevel=stacklevel,
        )
        return False
    return True


@dataclass(frozen=True)
class JTable:
    """J_0(alpha) .. J_qmax(alpha), built once by recurrence."""

    alpha: float
    values: tuple

    @classmethod
    def build(cls, alpha: float, qmax: int) -> "JTable":
        if not alpha > 0.0 or not math.isfinite(alpha):
            raise DomainError(f"alpha must be positive and finite, got {alpha!r}")
        if qmax < 0:
            raise DomainError(f"qmax must be >= 0, got {qmax}")
        a2 = alpha * alpha
        j0 = alpha * SQRT_2PI * (1.0 - upper_normal_tail(1.0 / alpha))
        vals = [j0]
        if qmax >= 1:
            vals.append(j0 + a2 * math.exp(-0.5 / a2))
        for q in range(2, qmax + 1):
            vals.append(vals[q - 1] + (q - 1) * a2 * vals[q - 2])
        return cls(alpha=float(alpha), values=tuple(vals))

    def __getitem__(self, q: int) -> float:
        return self.values[q]

    def __len__(self) -> int:
        return len(self.values)


def j_moment(q: int, alpha: float) -> float:
    """J_q(alpha) from the closed-form seeds and the three-term recurrence."""
    if q < 0:
        raise DomainError(f"q must be a non-negative integer, got {q}")
    return JTable.build(alpha, int(q))[int(q)]


def oracle_upper_limit(q: int, alpha: float) -> float:
    """Right end of the truncated quadrature interval.

    With k = max(20, 10 q) the cut sits at t = 1 + k alpha.  Beyond it the
    integrand is t^q exp(-s^2/2) with s >= k, and for k >= 2q it decays at
    least like exp(-s^2/4); the neglected mass relative to J_q is then
    below (1 + k alpha)^q exp(-k^2/4) / sqrt(2 pi), i.e. < 1e-40 for
    q <= 12 and alpha <= 1.
    """
    return 1.0 + alpha * max(20.0, 10.0 * q)


def j_moment_oracle(q: int, alpha: float, rtol: float = 1e-12) -> float:
    """J_q(alpha) by adaptive quadrature (validation only).

    The integral is taken in the standardised variable s = (t - 1)/alpha,
    split at the peak, over [-1/alpha, (upper - 1)/alpha] where ``upper`` is
    :func:`oracle_upper_limit`.
    """
    if q < 0 or q > 12:
        raise DomainError(f"oracle supports 0 <= q <= 12, got {q}")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"oracle supports 0 < alpha <= 1, got {alpha}")

    def integrand(s):
        return (1.0 + alpha * s) ** q * math.exp(-0.5 * s * s)

    lo = -1.0 / alpha
    hi = (oracle_upper_limit(q, alpha) - 1.0) / alpha
    total = 0.0
    err = 0.0
    for a, b in ((lo, 0.0), (0.0, hi)):
        val, e = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rtol, limit=500)
        total += val
        err += e
    if not err <= 1e-10 * abs(total):
        raise NumericError(
            f"quadrature for J_{q}({alpha}) reached relative error {err / abs(total):.3g}",
            achieved=err / abs(total),
        )
    return alpha * total


def norm_constant(d: int, det_sigma: float, sigma: float, mode: str = "exact") -> float:
    """Normalising constant C_d of the ellipsoidal density.

    Parameters
    ----------
    d : int
        Ambient dimension, 1, 2 or 3.
    det_sigma : float
        Determinant of the shape matrix.
    sigma : float
        Radial noise level (Mahalanobis units).
    mode : {"exact", "approx"}
        ``exact`` uses Gamma(d/2) / (2 pi^{d/2} |S|^{1/2} J_{d-1}(sigma));
        ``approx`` drops the Phi(-1/sigma) and exp(-1/(2 sigma^2)) tails.

    Emits :class:`ValidityWarning` for sigma > 0.1.
    """
    if d not in (1, 2, 3):
        raise UnsupportedDimensionError(f"normalising constant available for d in {{1,2,3}}, got {d}")
    if not det_sigma > 0.0:
        raise DomainError(f"det(Sigma) must be positive, got {det_sigma!r}")
    check_sigma(sigma)
    return math.exp(log_norm_constant(d, 0.5 * math.log(det_sigma), sigma, mode))


def log_norm_constant(d: int, half_logdet: float, sigma: float, mode: str = "approx") -> float:
    """log C_d without argument checks; used on hot paths (E-step, likelihood)."""
    if mode == "exact":
        jd = JTable.build(sigma, d - 1)[d - 1]
        return (math.lgamma(0.5 * d) - math.log(2.0) - 0.5 * d * math.log(math.pi)
                - half_logdet - math.log(jd))
    if mode != "approx":
        raise DomainError(f"mode must be 'exact' or 'approx', got {mode!r}")
    if d == 1:
        log_j = math.log(sigma * SQRT_2PI)
    elif d == 2:
        log_j = math.log(sigma * SQRT_2PI)
    elif d == 3:
        log_j = math.log(sigma * SQRT_2PI) + math.log1p(sigma * sigma)
    else:
        raise UnsupportedDimensionError(f"approximate constant available for d in {{1,2,3}}, got {d}")
    return (math.lgamma(0.5 * d) - math.log(2.0) - 0.5 * d * math.log(math.pi)
            - half_logdet - log_j)


def sigma_star_factor(d: int, sigma: float) -> float:
    """J_{d+1}(sigma) / J_{d-1}(sigma): the ratio between Sigma* and Sigma."""
    if d < 2:
        raise DomainError(f"d must be >= 2, got {d}")
    check_sigma(sigma)
    j = JTable.build(sigma, d + 1)
    return j[d + 1] / j[d - 1]


def sigma_tilde_sq(d: int, sigma: float) -> float:
    """1 - J_d^2 / (J_{d+1} J_{d-1}), the limit of the radial-variance estimator.

    Rewritten with r = J_d / J_{d-1} as (d s^2 - r (r - 1)) / (r + d s^2),
    where r - 1 = (d - 1) s^2 J_{d-2} / J_{d-1} carries no cancellation.
    """
    if d < 2:
        raise DomainError(f"d must be >= 2, got {d}")
    check_sigma(sigma)
    j = JTable.build(sigma, d + 1)
    s2 = sigma * sigma
    r_minus_1 = (d - 1) * s2 * j[d - 2] / j[d - 1]
    r = 1.0 + r_minus_1
    return (d * s2 - r * r_minus_1) / (r + d * s2)


def w_moment(d: int, q: int, sigma: float) -> float:
    """E[W^q] = J_{d+q-1} / J_{d-1} for the radial variable of the d-dim density."""
    j = JTable.build(sigma, d + q - 1)
    return j[d + q - 1] / j[d - 1]


def w_log_density(t, d: int, sigma: float):
    """Log-density of the radial variable W (vectorised, -inf for t < 0)."""
    t = np.asarray(t, dtype=float)
    jd = JTable.build(sigma, d - 1)[d - 1]
    with np.errstate(divide="ignore"):
        out = (d - 1) * np.log(np.where(t >= 0, t, 0.0)) - (t - 1.0) ** 2 / (2.0 * sigma * sigma) - math.log(jd)
    return np.where(t >= 0, out, -np.inf)
