"""Ellipsoidal shell densities for 2D/3D point clouds.

Density, exact sampler, single-shape estimators (direct and backfitting),
and EM for mixtures of ellipsoids.
"""
from .errors import (ComponentCollapse, DataFormatError, DegenerateCloudError, DomainError,
                     EllmixError, IllConditionedShapeError, InitDegenerateError, NumericError,
                     SamplerStallError, UnsupportedDimensionError, ValidityWarning)
from .estimators import (FitConfig, SingleFitReport, backfit_step, fit_backfit, fit_direct,
                         frobenius_error)
from .mixture import EmConfig, EmReport, classify, e_step, fit_em, kmeans, kmeans_init, m_step, match_components
from .model import (EllipsoidParams, MixtureParams, PointCloud, component_log_densities, log_density,
                    mahalanobis, mixture_log_likelihood)
from .radial import (JTable, j_moment, j_moment_oracle, log_norm_constant, norm_constant,
                     sigma_star_factor, sigma_tilde_sq, w_moment)
from .sampler import make_rng, sample_ellipsoid, sample_mixture, sample_unit_direction, sample_w

__version__ = "0.1.0"

__all__ = [
    "ComponentCollapse", "DataFormatError", "DegenerateCloudError", "DomainError", "EllmixError",
    "IllConditionedShapeError", "InitDegenerateError", "NumericError", "SamplerStallError",
    "UnsupportedDimensionError", "ValidityWarning",
    "FitConfig", "SingleFitReport", "backfit_step", "fit_backfit", "fit_direct", "frobenius_error",
    "EmConfig", "EmReport", "classify", "e_step", "fit_em", "kmeans", "kmeans_init", "m_step",
    "match_components",
    "EllipsoidParams", "MixtureParams", "PointCloud", "component_log_densities", "log_density",
    "mahalanobis", "mixture_log_likelihood",
    "JTable", "j_moment", "j_moment_oracle", "log_norm_constant", "norm_constant",
    "sigma_star_factor", "sigma_tilde_sq", "w_moment",
    "make_rng", "sample_ellipsoid", "sample_mixture", "sample_unit_direction", "sample_w",
]
