"""Step-selection-function form of the discretised Langevin transition.

For a constant interval ``dt``, replacing the velocity by the finite
difference ``(x_i - x_{i-1}) / dt`` and linearising ``log pi`` between
``x_i`` and ``x_{i+1}`` gives a next-step density that is exponential in
three kinds of covariate: the squared step length ``L_i^2``, the persistence
product ``L_{i-1} L_i cos(phi_i)``, and the habitat covariates evaluated at
the end of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._coefficients import check_params, ou_coefficients
from .dynamics import MovementParams
from .field import StationaryModel, field_values, grad_log_pi


@dataclass(frozen=True)
class SsfCoefficients:
    """Coefficients of ``L_i^2``, ``L_{i-1} L_i cos(phi_i)`` and each ``psi_k(x_{i+1})``."""

    c_len2: float
    c_persist: float
    c_habitat: np.ndarray
    dt: float


def _validate(params, beta, dt):
    check_params(params.gamma, params.sigma, dt)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return beta


def ssf_coefficients(params: MovementParams, beta, dt) -> SsfCoefficients:
    """Exact step-selection coefficients for interval ``dt``."""
    beta = _validate(params, beta, dt)
    g, s2, dt = params.gamma, params.sigma**2, float(dt)
    w = g * dt
    one_m = -math.expm1(-w)
    one_m2 = -math.expm1(-2.0 * w)
    denom = dt * dt * s2 * one_m2
    return SsfCoefficients(
        c_len2=-1.0 / (2.0 * denom),
        c_persist=math.exp(-w) / denom,
        c_habitat=one_m * beta / (dt * g * one_m2),
        dt=dt,
    )


def ssf_taylor_limits(params: MovementParams, beta, dt) -> SsfCoefficients:
    """Leading-order small-``dt`` forms of :func:`ssf_coefficients`.

    Accurate only when ``gamma * dt`` is small; at ``gamma * dt = 1`` the
    relative error exceeds 10%.
    """
    beta = _validate(params, beta, dt)
    g, s2, dt = params.gamma, params.sigma**2, float(dt)
    return SsfCoefficients(
        c_len2=-1.0 / (4.0 * g * s2 * dt**3),
        c_persist=1.0 / (2.0 * g * s2 * dt**3),
        c_habitat=beta / (2.0 * g * dt),
        dt=dt,
    )


def ssf_logdensity(coeffs: SsfCoefficients, x_next, x_cur, x_prev, model: StationaryModel):
    """Unnormalised log-density of ``x_next`` given the two previous positions.

    ``x_next`` may carry leading batch dimensions, shape ``(..., d)``. The
    persistence product is computed as ``(x_next - x_cur) . (x_cur - x_prev)``,
    which is zero when the previous step has zero length.
    """
    x_next = np.asarray(x_next, dtype=float)
    x_cur = np.asarray(x_cur, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    step = x_next - x_cur
    prev = x_cur - x_prev
    out = coeffs.c_len2 * np.sum(step * step, axis=-1) + coeffs.c_persist * np.sum(step * prev, axis=-1)
    if len(model.fields):
        out = out + field_values(model.fields, x_next) @ coeffs.c_habitat
    return out


def _gaussian_logpdf(x, mean, var):
    r = x - mean
    d = x.shape[-1]
    return -0.5 * (d * math.log(2.0 * math.pi * var) + np.sum(r * r, axis=-1) / var)


def discretised_moments(params: MovementParams, model: StationaryModel, x_cur, x_prev, dt):
    """Mean and per-axis variance of ``x_{i+1}`` with finite-difference velocity."""
    g, s2 = params.gamma, params.sigma**2
    w = g * dt
    x_cur = np.asarray(x_cur, dtype=float)
    grad = grad_log_pi(model, x_cur)
    mean = x_cur + math.exp(-w) * (x_cur - np.asarray(x_prev, dtype=float)) - dt * math.expm1(-w) * (s2 / g) * grad
    var = s2 * dt * dt * -math.expm1(-2.0 * w)
    return mean, var


def discretised_logdensity(params: MovementParams, model: StationaryModel, x_next, x_cur, x_prev, dt):
    """Gaussian log-density of ``x_next`` when the velocity at ``x_cur`` is ``(x_cur - x_prev) / dt``.

    This is the density from which the step-selection form is obtained by
    expanding the square and linearising ``log pi``.
    """
    check_params(params.gamma, params.sigma, dt)
    mean, var = discretised_moments(params, model, x_cur, x_prev, dt)
    return _gaussian_logpdf(np.asarray(x_next, dtype=float), mean, var)


def position_transition_logdensity(params: MovementParams, model: StationaryModel, x_next, x_cur, x_prev, dt):
    """Marginal position transition of the continuous model given ``v = (x_cur - x_prev) / dt``.

    Unlike :func:`discretised_logdensity`, the velocity is integrated over the
    interval, so the variance is ``Q11`` (of order ``gamma sigma^2 dt^3``)
    rather than ``sigma^2 dt^2 (1 - exp(-2 gamma dt))``.
    """
    c = ou_coefficients(params.gamma, params.sigma, dt)
    x_cur = np.asarray(x_cur, dtype=float)
    v = (x_cur - np.asarray(x_prev, dtype=float)) / dt
    mean = x_cur + c.T12 * v + c.B1 * grad_log_pi(model, x_cur)
    return _gaussian_logpdf(np.asarray(x_next, dtype=float), mean, c.Q11)


def step_grid(center, half_width, n):
    """Square ``n x n`` grid of candidate next positions and its cell area."""
    center = np.asarray(center, dtype=float)
    u = np.linspace(-half_width, half_width, n)
    xx, yy = np.meshgrid(center[0] + u, center[1] + u, indexing="xy")
    return np.stack([xx, yy], axis=-1), (u[1] - u[0]) ** 2


def total_variation(logp, logq):
    """Total-variation distance between two densities given as log-values on a shared uniform grid."""
    logp = np.ravel(logp)
    logq = np.ravel(logq)
    p = np.exp(logp - logp.max())
    q = np.exp(logq - logq.max())
    return 0.5 * float(np.sum(np.abs(p / p.sum() - q / q.sum())))


def ssf_table(params: MovementParams, beta, dts):
    """Exact and small-``dt`` coefficients across ``dts``, one dict per interval."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    rows = []
    for dt in dts:
        ex = ssf_coefficients(params, beta, dt)
        ty = ssf_taylor_limits(params, beta, dt)
        row = {
            "dt": float(dt),
            "c_len2_exact": ex.c_len2,
            "c_len2_taylor": ty.c_len2,
            "c_len2_ratio": ex.c_len2 / ty.c_len2,
            "c_persist_exact": ex.c_persist,
            "c_persist_taylor": ty.c_persist,
            "c_persist_ratio": ex.c_persist / ty.c_persist,
        }
        for k in range(beta.size):
            row[f"c_habitat{k + 1}_exact"] = float(ex.c_habitat[k])
            row[f"c_habitat{k + 1}_taylor"] = float(ty.c_habitat[k])
            row[f"c_habitat{k + 1}_ratio"] = float(ex.c_habitat[k] / ty.c_habitat[k]) if beta[k] != 0 else math.nan
        rows.append(row)
    return rows
