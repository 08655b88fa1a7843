"""Per-axis coefficients of the frozen-gradient Langevin transition.

For one spatial axis, holding the gradient ``h`` of ``log pi`` fixed over an
interval of length ``dt``, the state ``(x, v)`` moves as

    x' = x + T12 * v + B1 * h + noise_x
    v' =     T22 * v + B2 * h + noise_v

with ``Cov(noise) = [[Q11, Q12], [Q12, Q22]]``. Every closed form here is
written in terms of ``w = gamma * dt`` so that small-``w`` cancellation can
be handled by power series.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

# Below this w the direct formulas lose digits to cancellation.
_SERIES_CUTOFF = 0.5
_SERIES_TERMS = 30

N_COEF = 7
T12, T22, B1, B2, Q11, Q12, Q22 = range(N_COEF)


@njit(cache=True, nogil=True)
def _g2(w):
    # w - (1 - exp(-w)) = sum_{k>=2} (-w)^k / k!
    if w >= _SERIES_CUTOFF:
        return w + math.expm1(-w)
    total = 0.0
    term = -w  # (-w)^1 / 1!
    for k in range(2, _SERIES_TERMS):
        term *= -w / k
        total += term
    return total


@njit(cache=True, nogil=True)
def _g3(w):
    # 2w - 3 + 4 exp(-w) - exp(-2w) = sum_{k>=3} (-1)^k (4 - 2^k) w^k / k!
    if w >= _SERIES_CUTOFF:
        return 2.0 * w - 3.0 + 4.0 * math.exp(-w) - math.exp(-2.0 * w)
    total = 0.0
    pw = -w  # (-w)^k / k! for k = 1
    for k in range(2, _SERIES_TERMS):
        pw *= -w / k
        if k >= 3:
            total += (4.0 - 2.0**k) * pw
    return total


@njit(cache=True, nogil=True)
def coefficients_into(gamma, sigma, dt, out):
    w = gamma * dt
    s2 = sigma * sigma
    one_minus = -math.expm1(-w)  # 1 - exp(-w)
    out[T12] = one_minus / gamma
    out[T22] = math.exp(-w)
    out[B1] = s2 / (gamma * gamma) * _g2(w)
    out[B2] = s2 / gamma * one_minus
    out[Q11] = s2 / (gamma * gamma) * _g3(w)
    out[Q12] = s2 / gamma * one_minus * one_minus
    out[Q22] = -s2 * math.expm1(-2.0 * w)


@njit(cache=True, nogil=True)
def coefficient_table(gammas, sigmas, dts):
    """Coefficients for each interval, shape ``(n, 7)``."""
    n = dts.shape[0]
    out = np.empty((n, N_COEF))
    for i in range(n):
        coefficients_into(gammas[i], sigmas[i], dts[i], out[i])
    return out


class TransitionCoefficients(NamedTuple):
    T12: float
    T22: float
    B1: float
    B2: float
    Q11: float
    Q12: float
    Q22: float


def check_params(gamma, sigma, dt):
    for label, val in (("gamma", gamma), ("sigma", sigma), ("dt", dt)):
        if not np.all(np.isfinite(val)):
            raise ValueError(f"{label} must be finite, got {val}")
        if np.any(np.asarray(val) <= 0):
            raise ValueError(f"{label} must be positive, got {val}")


def ou_coefficients(gamma, sigma, dt) -> TransitionCoefficients:
    """Scalar transition coefficients for one interval."""
    check_params(gamma, sigma, dt)
    out = np.empty(N_COEF)
    coefficients_into(float(gamma), float(sigma), float(dt), out)
    return TransitionCoefficients(*out.tolist())


def coefficient_array(gammas, sigmas, dts):
    """Vectorised coefficients, broadcasting the three inputs; shape ``(..., 7)``."""
    g, s, d = np.broadcast_arrays(np.asarray(gammas, float), np.asarray(sigmas, float), np.asarray(dts, float))
    flat = coefficient_table(np.ascontiguousarray(g.ravel()), np.ascontiguousarray(s.ravel()), np.ascontiguousarray(d.ravel()))
    return flat.reshape(g.shape + (N_COEF,))
