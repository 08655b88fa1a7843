"""Maximum-likelihood fitting, Wald covariance and simulation-based uncertainty.

Parameters are optimised on an unconstrained scale. With constant movement
parameters the vector is ``(log gamma, log sigma, beta_1..beta_K)``; with a
:class:`TimeVaryingSpec` it is ``(alpha_gamma, alpha_sigma, beta)``.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from .dynamics import MovementParams, TimeVaryingSpec
from .errors import NumericalError
from .field import CovariateField, StationaryModel, field_gradients, field_values, normalize_log_values
from .kalman import FilterInit, check_track_domain, loglik_from_arrays
from .raster import RasterGrid
from .tracks import Track


@dataclass
class FitOptions:
    """Optimiser and uncertainty settings (all recorded in fit output)."""

    n_restarts: int = 3
    restart_scale: float = 0.5
    initial_step: float = 0.5
    xatol: float = 1e-6
    fatol: float = 1e-8
    maxiter_per_param: int = 1000
    seed: int = 0
    velocity_var: float | None = None
    hessian_rel_step: float = 1e-4
    compute_covariance: bool = True
    threads: int = 1


class LogLikelihood:
    """Summed filter log-likelihood over tracks as a function of ``theta``.

    Gradients of each covariate at every interval start are computed once at
    construction; each evaluation only forms ``h = sum_k beta_k grad psi_k``
    and runs the filter.
    """

    def __init__(self, tracks: Sequence[Track], fields: Sequence[CovariateField], time_varying: TimeVaryingSpec | None = None, init: FilterInit = FilterInit(), threads=1):
        self.fields = tuple(fields)
        self.time_varying = time_varying
        self.init = init
        self.threads = max(1, int(threads))
        self._data = []
        for tr in tracks:
            if len(tr) < 3:
                raise ValueError(f"track {tr.track_id}: need at least 3 observations, got {len(tr)}")
            starts = tr.positions[:-1]
            check_track_domain(self.fields, tr)
            G = np.ascontiguousarray(np.moveaxis(field_gradients(self.fields, starts), 1, 0))  # (K, n-1, d)
            entry = {"dx": np.diff(tr.positions, axis=0), "G": G, "dts": np.ascontiguousarray(tr.dts), "id": tr.track_id}
            if time_varying is not None:
                cov = None if tr.covariates is None else {k: v[:-1] for k, v in tr.covariates.items()}
                entry["A_gamma"], entry["A_sigma"] = time_varying.design_matrices(tr.times[:-1], starts, cov)
            self._data.append(entry)
        if time_varying is None:
            self.n_gamma = self.n_sigma = 1
        else:
            self.n_gamma, self.n_sigma = time_varying.alpha_gamma.size, time_varying.alpha_sigma.size
        self.n_params = self.n_gamma + self.n_sigma + len(self.fields)

    @property
    def n_obs(self):
        return sum(d["dx"].shape[0] for d in self._data)

    @property
    def names(self):
        if self.time_varying is None:
            head = ["log_gamma", "log_sigma"]
        else:
            head = [f"gamma:{lab}" for lab in self.time_varying.gamma_labels]
            head += [f"sigma:{lab}" for lab in self.time_varying.sigma_labels]
        return head + [f"beta:{f.name}" for f in self.fields]

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        g, s = self.n_gamma, self.n_sigma
        return theta[:g], theta[g : g + s], theta[g + s :]

    def _track_loglik(self, data, theta):
        a_g, a_s, beta = self.split(theta)
        n = data["dts"].size
        with np.errstate(over="ignore", invalid="ignore"):
            if self.time_varying is None:
                gammas = np.full(n, math.exp(a_g[0]) if a_g[0] < 700 else math.inf)
                sigmas = np.full(n, math.exp(a_s[0]) if a_s[0] < 700 else math.inf)
            else:
                gammas = np.exp(data["A_gamma"] @ a_g)
                sigmas = np.exp(data["A_sigma"] @ a_s)
        if not (np.all(np.isfinite(gammas)) and np.all(np.isfinite(sigmas)) and np.all(gammas > 0) and np.all(sigmas > 0)):
            return -math.inf
        if beta.size:
            h = np.tensordot(beta, data["G"], axes=1)
        else:
            h = np.zeros_like(data["dx"])
        v0 = self.init.resolve(sigmas[0])
        ll = loglik_from_arrays(data["dx"], h, gammas, sigmas, data["dts"], v0)
        return ll if np.isfinite(ll) else -math.inf

    def per_track(self, theta):
        if self.threads > 1 and len(self._data) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(lambda d: self._track_loglik(d, theta), self._data))
        return [self._track_loglik(d, theta) for d in self._data]

    def __call__(self, theta):
        return float(sum(self.per_track(theta)))

    def params_at(self, theta):
        """Movement parameters implied by ``theta`` (constant mode only)."""
        a_g, a_s, _ = self.split(theta)
        if self.time_varying is not None:
            return self.time_varying.with_alphas(a_g, a_s)
        return MovementParams(math.exp(a_g[0]), math.exp(a_s[0]))

    def theta_of(self, params, beta):
        """Inverse of :meth:`params_at` plus ``beta``."""
        if isinstance(params, MovementParams):
            head = [math.log(params.gamma), math.log(params.sigma)]
        else:
            head = list(params.alpha_gamma) + list(params.alpha_sigma)
        return np.array(head + list(np.asarray(beta, dtype=float)))


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``covariance`` is the inverse observed information on the unconstrained
    scale, or ``None`` if it was not requested or could not be computed.
    """

    theta_hat: np.ndarray
    covariance: np.ndarray | None
    loglik: float
    converged: bool
    iterations: int
    names: list
    field_names: list
    n_gamma: int = 1
    n_sigma: int = 1
    n_obs: int = 0
    n_tracks: int = 0
    message: str = ""
    runs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def time_varying(self):
        return not (self.n_gamma == 1 and self.n_sigma == 1 and self.names[:2] == ["log_gamma", "log_sigma"])

    @property
    def beta(self):
        return self.theta_hat[self.n_gamma + self.n_sigma :]

    @property
    def beta_slice(self):
        return slice(self.n_gamma + self.n_sigma, None)

    @property
    def params(self) -> MovementParams:
        if self.time_varying:
            raise ValueError("time-varying fit has no single (gamma, sigma)")
        return MovementParams(math.exp(self.theta_hat[0]), math.exp(self.theta_hat[1]))

    @property
    def standard_errors(self):
        if self.covariance is None:
            return np.full(self.theta_hat.size, np.nan)
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))

    def confidence_intervals(self, level=0.95):
        """Wald intervals on the unconstrained scale, shape ``(p, 2)``."""
        from scipy.stats import norm

        z = norm.ppf(0.5 + level / 2)
        se = self.standard_errors
        return np.column_stack([self.theta_hat - z * se, self.theta_hat + z * se])

    def model(self, fields) -> StationaryModel:
        return StationaryModel(tuple(fields), self.beta)

    def to_dict(self):
        se = self.standard_errors
        out = {
            "parameter_names": list(self.names),
            "estimates": dict(zip(self.names, self.theta_hat.tolist())),
            "standard_errors": {k: (None if not np.isfinite(v) else float(v)) for k, v in zip(self.names, se)},
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_obs": self.n_obs,
            "n_tracks": self.n_tracks,
            "n_gamma": self.n_gamma,
            "n_sigma": self.n_sigma,
            "field_names": list(self.field_names),
            "message": self.message,
            "runs": self.runs,
            "config": self.config,
        }
        if not self.time_varying:
            out["movement"] = {
                "gamma": math.exp(self.theta_hat[0]),
                "sigma": math.exp(self.theta_hat[1]),
                "mean_speed": math.sqrt(math.pi / 2) * math.exp(self.theta_hat[1]),
                "relaxation_time": math.exp(-self.theta_hat[0]),
            }
        return out

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, doc) -> FitResult:
        names = doc["parameter_names"]
        cov = doc.get("covariance")
        return cls(
            theta_hat=np.array([doc["estimates"][k] for k in names]),
            covariance=None if cov is None else np.array(cov),
            loglik=doc["loglik"],
            converged=doc["converged"],
            iterations=doc["iterations"],
            names=list(names),
            field_names=list(doc["field_names"]),
            n_gamma=doc.get("n_gamma", 1),
            n_sigma=doc.get("n_sigma", 1),
            n_obs=doc.get("n_obs", 0),
            n_tracks=doc.get("n_tracks", 0),
            message=doc.get("message", ""),
            runs=doc.get("runs", []),
            config=doc.get("config", {}),
        )


def starting_values(tracks: Sequence[Track]):
    """Method-of-moments warm start ``(gamma0, sigma0)`` from step velocities.

    ``gamma0 = -log(r1) / dt`` from the pooled lag-1 autocorrelation of
    finite-difference velocities (clipped to [1e-2, 1e2]); ``sigma0`` is
    their per-axis root mean square.
    """
    num = den = sq = 0.0
    count = 0
    dts = []
    for tr in tracks:
        v = np.diff(tr.positions, axis=0) / tr.dts[:, None]
        num += float(np.sum(v[:-1] * v[1:]))
        den += float(np.sum(v[:-1] * v[:-1]))
        sq += float(np.sum(v * v))
        count += v.size
        dts.append(tr.dts)
    dt = float(np.median(np.concatenate(dts)))
    r1 = num / den if den > 0 else 0.0
    gamma0 = -math.log(r1) / dt if 0 < r1 < 1 else (1e-2 if r1 >= 1 else 1e2)
    gamma0 = min(max(gamma0, 1e-2), 1e2)
    sigma0 = math.sqrt(sq / count) if sq > 0 else 1.0
    return gamma0, sigma0


def _initial_theta(loglik: LogLikelihood, tracks):
    gamma0, sigma0 = starting_values(tracks)
    K = len(loglik.fields)
    if loglik.time_varying is None:
        return np.concatenate([[math.log(gamma0), math.log(sigma0)], np.zeros(K)])
    # least-squares fit of each design to the constant warm start
    a_g = np.vstack([d["A_gamma"] for d in loglik._data])
    a_s = np.vstack([d["A_sigma"] for d in loglik._data])
    alpha_g = np.linalg.lstsq(a_g, np.full(a_g.shape[0], math.log(gamma0)), rcond=None)[0]
    alpha_s = np.linalg.lstsq(a_s, np.full(a_s.shape[0], math.log(sigma0)), rcond=None)[0]
    return np.concatenate([alpha_g, alpha_s, np.zeros(K)])


def _nelder_mead(neg, x0, options: FitOptions):
    p = x0.size
    simplex = np.vstack([x0] + [x0 + options.initial_step * e for e in np.eye(p)])
    res = minimize(
        neg,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": options.xatol,
            "fatol": options.fatol,
            "maxiter": options.maxiter_per_param * p,
            "maxfev": 2 * options.maxiter_per_param * p,
        },
    )
    return res


def fit(tracks: Sequence[Track], fields, options: FitOptions | None = None, time_varying: TimeVaryingSpec | None = None) -> FitResult:
    """Maximum-likelihood fit over one or more independent tracks.

    Parameters
    ----------
    tracks : sequence of Track
        Each with at least three observations inside every field's domain.
    fields : sequence of CovariateField or StationaryModel
        The covariates of ``log pi``; coefficients of a model are ignored.
    options : FitOptions, optional
    time_varying : TimeVaryingSpec, optional
        Template whose designs define time-varying ``gamma_t`` and
        ``sigma_t``; its coefficient values are not used.

    Returns
    -------
    FitResult
        The best of ``1 + n_restarts`` Nelder-Mead runs. If the best run
        hit its iteration limit, ``converged`` is ``False``.
    """
    options = options or FitOptions()
    if isinstance(fields, StationaryModel):
        fields = fields.fields
    tracks = list(tracks)
    if not tracks:
        raise ValueError("need at least one track")
    loglik = LogLikelihood(tracks, fields, time_varying, FilterInit(options.velocity_var), options.threads)

    def neg(theta):
        val = loglik(theta)
        return -val if np.isfinite(val) else math.inf

    rng = np.random.default_rng(options.seed)
    x0 = _initial_theta(loglik, tracks)
    best = None
    runs = []
    total_iter = 0
    start = x0
    for k in range(1 + options.n_restarts):
        if k > 0:
            start = best.x + options.restart_scale * rng.standard_normal(x0.size)
        res = _nelder_mead(neg, start, options)
        total_iter += int(res.nit)
        runs.append({"start": start.tolist(), "loglik": float(-res.fun), "converged": bool(res.success), "iterations": int(res.nit)})
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise NumericalError("log-likelihood was not finite at any visited parameter value")

    theta_hat = np.asarray(best.x, dtype=float)
    covariance = None
    message = str(best.message)
    if options.compute_covariance:
        try:
            covariance = hessian_covariance(loglik, theta_hat, options.hessian_rel_step)
        except NumericalError as exc:
            message = f"{message}; covariance unavailable: {exc}"
    config = asdict(options)
    config["parameter_layout"] = loglik.names
    return FitResult(
        theta_hat=theta_hat,
        covariance=covariance,
        loglik=float(-best.fun),
        converged=bool(best.success),
        iterations=total_iter,
        names=loglik.names,
        field_names=[f.name for f in loglik.fields],
        n_gamma=loglik.n_gamma,
        n_sigma=loglik.n_sigma,
        n_obs=loglik.n_obs,
        n_tracks=len(tracks),
        message=message,
        runs=runs,
        config=config,
    )


def finite_difference_hessian(f, theta, rel_step=1e-4):
    """Central-difference Hessian with step ``rel_step * max(|theta_i|, 1)``."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    steps = rel_step * np.maximum(np.abs(theta), 1.0)
    f0 = f(theta)
    H = np.empty((p, p))

    def at(*moves):
        t = theta.copy()
        for idx, s in moves:
            t[idx] += s * steps[idx]
        return f(t)

    for i in range(p):
        H[i, i] = (at((i, 1)) - 2.0 * f0 + at((i, -1))) / steps[i] ** 2
        for j in range(i):
            val = (at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((i, -1), (j, 1)) + at((i, -1), (j, -1))) / (4.0 * steps[i] * steps[j])
            H[i, j] = H[j, i] = val
    return H


def hessian_covariance(loglik, theta_hat, rel_step=1e-4):
    """Inverse of the negative finite-difference Hessian of ``loglik`` at ``theta_hat``."""
    H = finite_difference_hessian(loglik, theta_hat, rel_step)
    if not np.all(np.isfinite(H)):
        raise NumericalError("Hessian has non-finite entries; the optimum may be at a boundary")
    info = -0.5 * (H + H.T)
    try:
        factor = cho_factor(info)
    except LinAlgError:
        raise NumericalError(
            "negative Hessian is not positive definite: the optimiser may not have converged, or a parameter direction is flat"
        ) from None
    cov = cho_solve(factor, np.eye(info.shape[0]))
    return 0.5 * (cov + cov.T)


def _psd_factor(cov):
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = max(1.0, float(np.max(np.abs(vals)))) if vals.size else 1.0
    if vals.size and vals.min() < -1e-10 * scale:
        raise NumericalError(f"covariance matrix is not positive semi-definite (smallest eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_params(result: FitResult, n, rng: np.random.Generator):
    """``n`` draws from ``N(theta_hat, covariance)``, shape ``(n, p)``."""
    if result.covariance is None:
        raise NumericalError("fit result has no covariance matrix")
    L = _psd_factor(result.covariance)
    z = rng.standard_normal((int(n), result.theta_hat.size))
    return result.theta_hat + z @ L.T


@dataclass
class UDUncertainty:
    """Mean utilisation distribution over parameter draws, with CV map."""

    mean: RasterGrid
    cv: RasterGrid
    estimate: RasterGrid
    sd: RasterGrid


def ud_with_uncertainty(result: FitResult, fields, geometry, n, rng: np.random.Generator, chunk=256) -> UDUncertainty:
    """Propagate parameter uncertainty to the gridded utilisation distribution.

    Each of ``n`` parameter draws is mapped to a normalised UD on
    ``geometry``. The coefficient of variation is the across-draw standard
    deviation divided by the UD at the point estimate.
    """
    if isinstance(fields, StationaryModel):
        fields = fields.fields
    geom = geometry.geometry if isinstance(geometry, RasterGrid) else geometry
    if n < 100:
        raise ValueError(f"need at least 100 draws, got {n}")
    psi = field_values(fields, geom.center_points())  # (cells, K)
    draws = sample_params(result, n, rng)[:, result.beta_slice]
    count = 0
    mean = np.zeros(psi.shape[0])
    m2 = np.zeros(psi.shape[0])
    for lo in range(0, n, chunk):
        ud = normalize_log_values(draws[lo : lo + chunk] @ psi.T, geom.cell_area)
        k = ud.shape[0]
        c_mean = ud.mean(axis=0)
        c_m2 = ((ud - c_mean) ** 2).sum(axis=0)
        delta = c_mean - mean
        tot = count + k
        mean = mean + delta * k / tot
        m2 = m2 + c_m2 + delta**2 * count * k / tot
        count = tot
    sd = np.sqrt(m2 / (count - 1))
    est = normalize_log_values(psi @ result.beta, geom.cell_area)
    zero = est <= 0
    if np.any(zero):
        warnings.warn(f"{int(zero.sum())} cells have an estimated UD that underflows to zero; their CV is reported as 0")
    cv = np.divide(sd, est, out=np.zeros_like(sd), where=~zero)
    shape = geom.shape
    return UDUncertainty(
        mean=RasterGrid.from_geometry(geom, mean.reshape(shape)),
        cv=RasterGrid.from_geometry(geom, cv.reshape(shape)),
        estimate=RasterGrid.from_geometry(geom, est.reshape(shape)),
        sd=RasterGrid.from_geometry(geom, sd.reshape(shape)),
    )
