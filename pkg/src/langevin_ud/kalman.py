"""Kalman-filter likelihood for exactly observed positions with latent velocity.

Positions are observed without error, so after each observation the filter
state reduces to a Gaussian over the velocity alone: one mean per axis and a
single variance shared by all axes (the model is isotropic). The recursion
is run by a compiled kernel; :func:`joint_density_oracle` evaluates the same
density by brute-force assembly of the joint Gaussian, for testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import multivariate_normal

from ._coefficients import coefficient_table, check_params, ou_coefficients
from .dynamics import MovementParams, interval_parameters
from .errors import DomainError, NumericalError
from .field import StationaryModel, grad_log_pi
from .tracks import Track

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class StateSpaceStep:
    """Per-axis state-space blocks for one interval.

    ``Z' = T Z + B h + eta`` with ``eta ~ N(0, Q)``, for the state ``(x, v)``
    of a single axis; :meth:`expand` gives the ``d``-axis Kronecker form.
    """

    T: np.ndarray
    B: np.ndarray
    Q: np.ndarray

    def expand(self, d):
        eye = np.eye(d)
        return np.kron(eye, self.T), np.kron(eye, self.B.reshape(2, 1)), np.kron(eye, self.Q)


@dataclass(frozen=True)
class FilterInit:
    """Prior for the first state: position exact, velocity ``N(0, velocity_var I)``.

    ``velocity_var=None`` uses the stationary velocity variance ``sigma^2``
    of the first interval.
    """

    velocity_var: float | None = None

    def __post_init__(self):
        if self.velocity_var is not None and not (self.velocity_var > 0 and math.isfinite(self.velocity_var)):
            raise ValueError(f"velocity prior variance must be positive, got {self.velocity_var}")

    def resolve(self, first_sigma):
        return float(first_sigma) ** 2 if self.velocity_var is None else float(self.velocity_var)


def state_matrices(params: MovementParams, dt) -> StateSpaceStep:
    c = ou_coefficients(params.gamma, params.sigma, dt)
    return StateSpaceStep(
        T=np.array([[1.0, c.T12], [0.0, c.T22]]),
        B=np.array([c.B1, c.B2]),
        Q=np.array([[c.Q11, c.Q12], [c.Q12, c.Q22]]),
    )


@njit(cache=True, nogil=True)
def _filter_kernel(dx, h, coef, v0_var, reg_scale2):
    n, d = dx.shape
    m = np.zeros(d)
    P = v0_var
    ll = 0.0
    for i in range(n):
        t12 = coef[i, 0]
        t22 = coef[i, 1]
        b1 = coef[i, 2]
        b2 = coef[i, 3]
        F = t12 * t12 * P + coef[i, 4]
        if not F > 0.0:
            F += 1e-12 * reg_scale2[i]
            if not F > 0.0:
                return np.nan
        C = t12 * t22 * P + coef[i, 5]
        gain = C / F
        logF = math.log(F)
        for j in range(d):
            e = dx[i, j] - t12 * m[j] - b1 * h[i, j]
            ll -= 0.5 * (_LOG_2PI + logF + e * e / F)
            m[j] = t22 * m[j] + b2 * h[i, j] + gain * e
        P = t22 * t22 * P + coef[i, 6] - C * gain
        if P < 0.0:
            P = 0.0
    return ll


def loglik_from_arrays(dx, h, gammas, sigmas, dts, v0_var):
    """Filter log-likelihood from precomputed increments and gradient inputs.

    Parameters
    ----------
    dx : ndarray, shape (n - 1, d)
        Position increments ``x_{i+1} - x_i``.
    h : ndarray, shape (n - 1, d)
        ``grad log pi`` at the start of each interval.
    gammas, sigmas, dts : ndarray, shape (n - 1,)
    v0_var : float
        Prior velocity variance at the first observation.

    Returns
    -------
    float
        ``nan`` if the innovation variance could not be made positive.
    """
    coef = coefficient_table(gammas, sigmas, dts)
    return _filter_kernel(dx, h, coef, float(v0_var), (sigmas * dts) ** 2)


def check_track_domain(fields, track: Track):
    """Raise :class:`DomainError` naming the track and row of the first point outside any field's domain."""
    for f in fields:
        try:
            f.check_domain(track.positions)
        except DomainError:
            for row, p in enumerate(track.positions):
                try:
                    f.check_domain(p[None, :])
                except DomainError as exc:
                    raise DomainError(f"track {track.track_id}, row {row}: {exc}", exc.point, exc.bounds) from None
            raise


def _gradients_along(model, track: Track):
    check_track_domain(model.fields, track)
    return grad_log_pi(model, track.positions[:-1])


def kalman_loglik(params, model: StationaryModel, track: Track, init: FilterInit = FilterInit()):
    """Log-likelihood of positions 2..n given the first position.

    Parameters
    ----------
    params : MovementParams or TimeVaryingSpec
        Time-varying parameters are evaluated at the start of each interval.
    model : StationaryModel
    track : Track
    init : FilterInit

    Returns
    -------
    float
    """
    if len(track) < 2:
        raise ValueError(f"track {track.track_id}: need at least 2 observations, got {len(track)}")
    gammas, sigmas = interval_parameters(params, track.times, track.positions, track.covariates)
    dts = track.dts
    check_params(gammas, sigmas, dts)
    h = _gradients_along(model, track)
    dx = np.diff(track.positions, axis=0)
    ll = loglik_from_arrays(dx, np.ascontiguousarray(h), gammas, sigmas, dts, init.resolve(sigmas[0]))
    if not np.isfinite(ll):
        raise NumericalError(f"track {track.track_id}: innovation variance not positive definite")
    return float(ll)


def joint_density_oracle(params, model: StationaryModel, track: Track, init: FilterInit = FilterInit()):
    """Same density as :func:`kalman_loglik`, by dense Gaussian marginalisation.

    Conditional on the observed positions the gradient inputs are known, so
    the full state sequence is jointly Gaussian. Its mean and covariance are
    assembled explicitly and the velocities marginalised out. Cost grows as
    ``(2 d n)^3``; meant for tracks of about ten points.
    """
    n, d = track.positions.shape
    if n < 2:
        raise ValueError("need at least 2 observations")
    gammas, sigmas = interval_parameters(params, track.times, track.positions, track.covariates)
    h = _gradients_along(model, track)
    s = 2 * d
    mean = np.zeros(n * s)
    cov = np.zeros((n * s, n * s))
    z = np.zeros(s)
    z[0::2] = track.positions[0]
    mean[:s] = z
    cov[:s, :s] = np.kron(np.eye(d), np.diag([0.0, init.resolve(sigmas[0])]))
    for i in range(n - 1):
        T, B, Q = state_matrices(MovementParams(gammas[i], sigmas[i]), track.times[i + 1] - track.times[i]).expand(d)
        cur, nxt = slice(i * s, (i + 1) * s), slice((i + 1) * s, (i + 2) * s)
        mean[nxt] = T @ mean[cur] + B @ h[i]
        # Cov(Z_{i+1}, Z_j) = T Cov(Z_i, Z_j) for every earlier j
        prev = slice(0, (i + 1) * s)
        cov[nxt, prev] = T @ cov[cur, prev]
        cov[prev, nxt] = cov[nxt, prev].T
        cov[nxt, nxt] = T @ cov[cur, cur] @ T.T + Q
    pos_idx = np.array([k * s + 2 * j for k in range(1, n) for j in range(d)])
    observed = track.positions[1:].reshape(-1)
    sub = cov[np.ix_(pos_idx, pos_idx)]
    return float(multivariate_normal.logpdf(observed, mean[pos_idx], 0.5 * (sub + sub.T)))
