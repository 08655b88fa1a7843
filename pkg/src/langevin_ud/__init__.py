"""Underdamped Langevin movement models with log-linear utilisation distributions.

The position ``X`` and velocity ``V`` of an animal follow

    dX = V dt
    dV = -gamma V dt + sigma^2 grad log pi(X) dt + sqrt(2 gamma) sigma dW

so that the long-run distribution of ``X`` is ``pi``, modelled as
``log pi(x) = sum_k beta_k psi_k(x)`` over spatial covariates ``psi_k``.
"""

from .dynamics import MovementParams, TimeVaryingSpec, simulate, simulate_tracks
from .errors import DomainError, NumericalError
from .field import AnalyticField, QuadraticDistance, RasterCovariate, StationaryModel, normalize_ud
from .fit import FitOptions, FitResult, fit, hessian_covariance, sample_params, ud_with_uncertainty
from .kalman import FilterInit, joint_density_oracle, kalman_loglik
from .raster import GridGeometry, RasterGrid, read_ascii_grid, write_ascii_grid
from .ssf import SsfCoefficients, ssf_coefficients, ssf_logdensity, ssf_taylor_limits
from .tracks import Track, read_tracks_csv, thin, write_tracks_csv

__version__ = "0.1.0"

__all__ = [
    "AnalyticField",
    "DomainError",
    "FilterInit",
    "FitOptions",
    "FitResult",
    "GridGeometry",
    "MovementParams",
    "NumericalError",
    "QuadraticDistance",
    "RasterCovariate",
    "RasterGrid",
    "SsfCoefficients",
    "StationaryModel",
    "TimeVaryingSpec",
    "Track",
    "fit",
    "hessian_covariance",
    "joint_density_oracle",
    "kalman_loglik",
    "normalize_ud",
    "read_ascii_grid",
    "read_tracks_csv",
    "sample_params",
    "simulate",
    "simulate_tracks",
    "ssf_coefficients",
    "ssf_logdensity",
    "ssf_taylor_limits",
    "thin",
    "ud_with_uncertainty",
    "write_ascii_grid",
    "write_tracks_csv",
]
