"""Discretised underdamped Langevin dynamics.

The continuous model is

    dX = V dt
    dV = -gamma V dt + sigma^2 grad log pi(X) dt + sqrt(2 gamma) sigma dW

Over each interval the gradient is frozen at the interval's starting
position, which makes the transition Gaussian with closed-form moments.
State vectors are interleaved per axis: ``(x1, v1, x2, v2, ...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._coefficients import B1, B2, Q11, Q12, Q22, T12, T22, check_params, coefficient_array, ou_coefficients
from .errors import DomainError, NumericalError
from .field import StationaryModel, grad_log_pi
from .tracks import Track, thin  # noqa: F401  (thin is part of this module's surface)


@dataclass(frozen=True)
class MovementParams:
    """Friction ``gamma`` (1/time) and speed scale ``sigma`` (distance/time)."""

    gamma: float
    sigma: float

    def __post_init__(self):
        for label in ("gamma", "sigma"):
            val = getattr(self, label)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{label} must be positive and finite, got {val}")

    @property
    def zeta(self):
        """Diffusion parameter of the overdamped limit, ``sigma / sqrt(gamma)``."""
        return self.sigma / math.sqrt(self.gamma)


# -- time-varying parameters -------------------------------------------------
#
# A design function maps (times (n,), positions (n, d) or None, covariates
# dict or None) to an (n, p) design matrix. The speed parameter is always
# evaluated with positions=None, so it cannot depend on location; velocity
# is never passed to either design, so neither parameter depends on it.

Design = Callable[..., np.ndarray]


def intercept_design():
    def design(times, positions=None, covariates=None):
        return np.ones((np.size(times), 1))

    design.labels = ("intercept",)
    return design


def harmonic_design(period, n_harmonics=1):
    """Intercept plus sine/cosine terms of time, e.g. for daily activity cycles."""

    def design(times, positions=None, covariates=None):
        t = np.atleast_1d(np.asarray(times, dtype=float))
        cols = [np.ones_like(t)]
        for k in range(1, n_harmonics + 1):
            cols += [np.sin(2 * np.pi * k * t / period), np.cos(2 * np.pi * k * t / period)]
        return np.column_stack(cols)

    design.labels = ("intercept",) + tuple(f"{f}{k}" for k in range(1, n_harmonics + 1) for f in ("sin", "cos"))
    return design


def covariate_design(names, intercept=True):
    """Design built from per-time covariate columns carried by a track."""
    names = tuple(names)

    def design(times, positions=None, covariates=None):
        n = np.size(times)
        if names and covariates is None:
            raise ValueError(f"design needs covariates {names} but none were supplied")
        cols = [np.ones(n)] if intercept else []
        cols += [np.asarray(covariates[k], dtype=float)[:n] for k in names]
        return np.column_stack(cols)

    design.labels = (("intercept",) if intercept else ()) + names
    return design


def spatial_design(field, intercept=True):
    """Design using a spatial covariate at the current position (friction only)."""

    def design(times, positions=None, covariates=None):
        if positions is None:
            raise ValueError("spatial design needs positions; it cannot be used for the speed parameter")
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        cols = [np.ones(pos.shape[0])] if intercept else []
        cols.append(field.value(pos))
        return np.column_stack(cols)

    design.labels = (("intercept",) if intercept else ()) + (getattr(field, "name", "spatial"),)
    return design


@dataclass(frozen=True, eq=False)
class TimeVaryingSpec:
    """Log-linear movement parameters ``gamma_t = exp(a_t' alpha_gamma)``, ``sigma_t = exp(b_t' alpha_sigma)``."""

    alpha_gamma: np.ndarray
    alpha_sigma: np.ndarray
    gamma_design: Design
    sigma_design: Design

    def __post_init__(self):
        object.__setattr__(self, "alpha_gamma", np.array(self.alpha_gamma, dtype=float).reshape(-1))
        object.__setattr__(self, "alpha_sigma", np.array(self.alpha_sigma, dtype=float).reshape(-1))

    @property
    def gamma_labels(self):
        return tuple(getattr(self.gamma_design, "labels", [f"a{k}" for k in range(self.alpha_gamma.size)]))

    @property
    def sigma_labels(self):
        return tuple(getattr(self.sigma_design, "labels", [f"b{k}" for k in range(self.alpha_sigma.size)]))

    def with_alphas(self, alpha_gamma, alpha_sigma) -> TimeVaryingSpec:
        return TimeVaryingSpec(alpha_gamma, alpha_sigma, self.gamma_design, self.sigma_design)

    def design_matrices(self, times, positions, covariates=None):
        """``(A_gamma, A_sigma)`` evaluated at each time/position."""
        a_g = np.atleast_2d(self.gamma_design(times, positions, covariates))
        a_s = np.atleast_2d(self.sigma_design(times, None, covariates))
        if a_g.shape[1] != self.alpha_gamma.size or a_s.shape[1] != self.alpha_sigma.size:
            raise ValueError(
                f"design widths ({a_g.shape[1]}, {a_s.shape[1]}) do not match coefficient lengths "
                f"({self.alpha_gamma.size}, {self.alpha_sigma.size})"
            )
        return a_g, a_s

    def evaluate(self, times, positions, covariates=None):
        """Per-row ``(gamma_t, sigma_t)`` arrays."""
        a_g, a_s = self.design_matrices(times, positions, covariates)
        return np.exp(a_g @ self.alpha_gamma), np.exp(a_s @ self.alpha_sigma)


def interval_parameters(params, times, positions, covariates=None):
    """Movement parameters for each interval, evaluated at the interval start.

    Returns ``(gammas, sigmas)`` each of shape ``(n - 1,)``.
    """
    n_int = np.size(times) - 1
    if isinstance(params, MovementParams):
        return np.full(n_int, params.gamma), np.full(n_int, params.sigma)
    cov = None if covariates is None else {k: v[:-1] for k, v in covariates.items()}
    return params.evaluate(np.asarray(times)[:-1], np.asarray(positions)[:-1], cov)


# -- one-step transition ------------------------------------------------------

@dataclass(frozen=True)
class TransitionMoments:
    """Mean (interleaved ``x, v`` per axis) and the shared per-axis 2x2 covariance."""

    mu: np.ndarray
    Q: np.ndarray

    @property
    def dim(self):
        return self.mu.size // 2

    def covariance(self):
        """Full ``I_d kron Q`` covariance."""
        return np.kron(np.eye(self.dim), self.Q)


def _split_state(z):
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size % 2:
        raise ValueError(f"state must have even length (x1, v1, ..., xd, vd), got {z.size}")
    return z[0::2], z[1::2]


def _interleave(x, v):
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],))
    out[..., 0::2] = x
    out[..., 1::2] = v
    return out


def transition_moments(params: MovementParams, model: StationaryModel, z, dt) -> TransitionMoments:
    """Gaussian moments of ``Z(t + dt) | Z(t) = z`` with the gradient frozen at ``x``."""
    x, v = _split_state(z)
    c = ou_coefficients(params.gamma, params.sigma, dt)
    h = grad_log_pi(model, x)
    mu = _interleave(x + c.T12 * v + c.B1 * h, c.T22 * v + c.B2 * h)
    Q = np.array([[c.Q11, c.Q12], [c.Q12, c.Q22]])
    return TransitionMoments(mu, Q)


def _cholesky_2x2(q11, q12, q22):
    """Lower Cholesky factor entries of (batches of) 2x2 PSD matrices."""
    q11, q12, q22 = (np.asarray(a, dtype=float) for a in (q11, q12, q22))
    l11 = np.sqrt(np.maximum(q11, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0, q12 / np.where(l11 > 0, l11, 1.0), 0.0)
    rem = q22 - l21 * l21
    if np.any(q11 < 0) or np.any(rem < -1e-10 * np.abs(q22)) or not np.all(np.isfinite(rem)):
        raise NumericalError("transition covariance is not positive semi-definite")
    return l11, l21, np.sqrt(np.maximum(rem, 0.0))


def sample_transition(moments: TransitionMoments, rng: np.random.Generator):
    """Draw ``Z' ~ N(mu, I_d kron Q)``."""
    l11, l21, l22 = _cholesky_2x2(moments.Q[0, 0], moments.Q[0, 1], moments.Q[1, 1])
    eps = rng.standard_normal((moments.dim, 2))
    noise = _interleave(l11 * eps[:, 0], l21 * eps[:, 0] + l22 * eps[:, 1])
    return moments.mu + noise


# -- trajectory simulation ----------------------------------------------------

def _offending_track(model, positions):
    for k, p in enumerate(positions):
        try:
            model.check_domain(p[None, :])
        except DomainError:
            return k
    return None


def simulate_batch(params, model: StationaryModel, x0, v0, times, noise):
    """Simulate several tracks in lockstep from pre-drawn standard normal noise.

    Parameters
    ----------
    params : MovementParams or TimeVaryingSpec
    x0, v0 : ndarray, shape (m, d)
    times : ndarray, shape (n,)
    noise : ndarray, shape (m, n - 1, d, 2)
        Standard normals; ``[..., 0]`` drives position, ``[..., 1]`` velocity.

    Returns
    -------
    positions, velocities : ndarray, shape (m, n, d)
    """
    times = np.asarray(times, dtype=float)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    m, d = x0.shape
    n = times.size
    if n < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("simulation times must be strictly increasing with at least two entries")
    if noise.shape != (m, n - 1, d, 2):
        raise ValueError(f"noise has shape {noise.shape}, expected {(m, n - 1, d, 2)}")
    dts = np.diff(times)
    X = np.empty((m, n, d))
    V = np.empty((m, n, d))
    X[:, 0], V[:, 0] = x0, v0

    constant = isinstance(params, MovementParams)
    if constant:
        check_params(params.gamma, params.sigma, dts)
        coef = coefficient_array(params.gamma, params.sigma, dts)  # (n-1, 7)
        chol = np.stack(_cholesky_2x2(coef[:, Q11], coef[:, Q12], coef[:, Q22]), axis=-1)

    for i in range(n - 1):
        x, v = X[:, i], V[:, i]
        try:
            h = grad_log_pi(model, x)
        except DomainError as exc:
            k = _offending_track(model, x)
            raise DomainError(f"simulation left the covariate domain at step {i} (t={times[i]:.6g}), track {k}: {exc}", exc.point, exc.bounds) from None
        if constant:
            c = coef[i]
            l11, l21, l22 = chol[i]
        else:
            gam, sig = params.evaluate(np.full(m, times[i]), x)
            check_params(gam, sig, dts[i])
            c = coefficient_array(gam, sig, dts[i])[:, None, :]  # (m, 1, 7) broadcast over axes
            l11, l21, l22 = _cholesky_2x2(c[..., Q11], c[..., Q12], c[..., Q22])
        e = noise[:, i]
        X[:, i + 1] = x + c[..., T12] * v + c[..., B1] * h + l11 * e[..., 0]
        V[:, i + 1] = c[..., T22] * v + c[..., B2] * h + l21 * e[..., 0] + l22 * e[..., 1]

    if model.n_fields:
        k = _offending_track(model, X[:, -1])
        if k is not None:
            raise DomainError(f"simulation left the covariate domain at step {n - 1} (t={times[-1]:.6g}), track {k}")
    return X, V


def _as_state_arrays(z0, m=None):
    z0 = np.asarray(z0, dtype=float)
    if z0.ndim == 1:
        z0 = z0[None, :]
    if m is not None and z0.shape[0] == 1 and m > 1:
        z0 = np.repeat(z0, m, axis=0)
    return z0[:, 0::2], z0[:, 1::2]


def simulate(params, model: StationaryModel, z0, times, rng: np.random.Generator, track_id="0") -> Track:
    """Simulate one track on ``times`` starting from interleaved state ``z0``."""
    x0, v0 = _as_state_arrays(z0)
    times = np.asarray(times, dtype=float)
    noise = rng.standard_normal((times.size - 1, x0.shape[1], 2))[None]
    X, V = simulate_batch(params, model, x0, v0, times, noise)
    return Track(times, X[0], V[0], track_id=track_id)


def track_rng(seed, index):
    """Independent generator for track ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def simulate_tracks(params, model: StationaryModel, z0, times, n_tracks, seed, first_index=0) -> list[Track]:
    """Simulate ``n_tracks`` independent tracks.

    Track ``k`` draws all of its noise from ``track_rng(seed, first_index + k)``,
    so each track is reproducible on its own, whatever the batch it is
    simulated in. ``z0`` is one interleaved state shared by all tracks or one
    row per track.
    """
    times = np.asarray(times, dtype=float)
    x0, v0 = _as_state_arrays(z0, n_tracks)
    d = x0.shape[1]
    noise = np.stack([track_rng(seed, first_index + k).standard_normal((times.size - 1, d, 2)) for k in range(n_tracks)])
    X, V = simulate_batch(params, model, x0, v0, times, noise)
    return [Track(times, X[k], V[k], track_id=str(first_index + k)) for k in range(n_tracks)]


# -- summaries and limits -----------------------------------------------------

def mean_speed(params: MovementParams):
    """Mean speed of the 2-d stationary velocity distribution, ``sqrt(pi/2) sigma``."""
    return math.sqrt(math.pi / 2.0) * params.sigma


def relaxation_time(params: MovementParams):
    """Time for the velocity autocorrelation to fall by a factor ``e``."""
    return 1.0 / params.gamma


def autocorrelation_timescale(params: MovementParams):
    """Time over which velocity autocorrelation decays by about 95% (``3 / gamma``)."""
    return 3.0 / params.gamma


def overdamped_moments(zeta, model: StationaryModel, x, dt):
    """Euler-Maruyama step of ``dX = zeta^2 grad log pi dt + sqrt(2) zeta dW``.

    Returns
    -------
    mean : ndarray, shape (d,)
    variance : float
        Per-axis variance ``2 zeta^2 dt``.
    """
    if not (zeta > 0 and dt > 0):
        raise ValueError(f"zeta and dt must be positive, got zeta={zeta}, dt={dt}")
    x = np.asarray(x, dtype=float)
    return x + zeta**2 * grad_log_pi(model, x) * dt, 2.0 * zeta**2 * dt
