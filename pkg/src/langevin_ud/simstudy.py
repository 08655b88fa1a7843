"""Simulation study: simulate on random covariate maps, thin, refit, tabulate.

Covariates are Gaussian-smoothed white noise on a square grid centred on the
origin, standardised to mean 0 and variance 1. The true utilisation
distribution is ``exp(b1 psi1 + b2 psi2 + b3 |x - c|^2)`` with ``c`` the grid
centre. Each replicate is one long track simulated at ``base_dt`` from the
centre at rest, then thinned to every interval in ``deltas`` and refitted.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .dynamics import MovementParams, simulate_tracks
from .errors import DomainError, NumericalError
from .field import QuadraticDistance, RasterCovariate, StationaryModel, normalize_ud
from .fit import FitOptions, LogLikelihood, fit
from .kalman import FilterInit
from .raster import GridGeometry, RasterGrid
from .tracks import thin

FULL_SCALE_DELTAS = (0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0)


@dataclass
class SimStudyConfig:
    """Settings of one simulation study; defaults are the desk-scale study."""

    n_replicates: int = 20
    horizon: float = 500.0
    base_dt: float = 0.01
    deltas: tuple = (0.02, 0.2, 2.0)
    gamma: float = 1.0
    sigma: float = 1.0
    beta: tuple = (2.0, 5.0, -10.0)
    half_width: float = 2.0
    cell_size: float = 0.05
    smoothing_cells: float = 5.0
    seed: int = 0
    n_restarts: int = 3
    threads: int = 1
    batch_size: int = 20

    def __post_init__(self):
        self.deltas = tuple(float(d) for d in self.deltas)
        self.beta = tuple(float(b) for b in self.beta)
        if len(self.beta) != 3:
            raise ValueError(f"beta needs 3 coefficients (psi1, psi2, squared distance), got {len(self.beta)}")
        if list(self.deltas) != sorted(self.deltas) or len(set(self.deltas)) != len(self.deltas):
            raise ValueError(f"deltas must be strictly ascending, got {self.deltas}")
        for d in self.deltas:
            k = d / self.base_dt
            if abs(k - round(k)) > 1e-9 * max(1.0, k) or round(k) < 1:
                raise ValueError(f"base_dt {self.base_dt} does not divide delta {d}")
        if self.n_replicates < 1 or self.horizon <= 0 or self.cell_size <= 0 or self.half_width <= 0:
            raise ValueError("n_replicates, horizon, cell_size and half_width must be positive")
        if self.horizon / self.deltas[-1] < 3:
            raise ValueError("horizon too short for the coarsest delta (need at least 3 observations)")

    @classmethod
    def full_scale(cls, **overrides) -> SimStudyConfig:
        """100 replicates over seven intervals from 0.02 to 2."""
        opts = {"n_replicates": 100, "deltas": FULL_SCALE_DELTAS}
        opts.update(overrides)
        return cls(**opts)

    @property
    def params(self):
        return MovementParams(self.gamma, self.sigma)

    @property
    def geometry(self) -> GridGeometry:
        n = int(round(2 * self.half_width / self.cell_size))
        first = -self.half_width + 0.5 * self.cell_size
        return GridGeometry(first, first, self.cell_size, self.cell_size, n, n)

    def thinning_factor(self, delta):
        return int(round(delta / self.base_dt))

    def to_dict(self):
        out = asdict(self)
        out["deltas"] = list(self.deltas)
        out["beta"] = list(self.beta)
        return out


def generate_covariates(geometry: GridGeometry, seed, smoothing_cells=5.0):
    """Two smooth random rasters: white noise smoothed by a Gaussian kernel, then standardised."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1,)))
    out = []
    for _ in range(2):
        z = gaussian_filter(rng.standard_normal(geometry.shape), smoothing_cells, mode="reflect")
        z = z - z.mean()
        z = z / z.std()
        out.append(RasterGrid.from_geometry(geometry, z))
    return out


def study_model(config: SimStudyConfig, rasters=None) -> StationaryModel:
    """The true model of a study, generating its covariates if not given."""
    geom = config.geometry
    if rasters is None:
        rasters = generate_covariates(geom, config.seed, config.smoothing_cells)
    x0, x1, y0, y1 = geom.bounds
    centre = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    fields = (RasterCovariate(rasters[0], "psi1"), RasterCovariate(rasters[1], "psi2"), QuadraticDistance(centre, "dist2"))
    return StationaryModel(fields, np.array(config.beta))


def ud_correlation(true_model: StationaryModel, est_model: StationaryModel, geometry) -> float:
    """Pearson correlation of the two normalised UDs over the grid cells."""
    a = normalize_ud(true_model, geometry).values.ravel()
    b = normalize_ud(est_model, geometry).values.ravel()
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("utilisation distribution is constant on the grid; correlation undefined")
    r = float(np.corrcoef(a, b)[0, 1])
    return min(1.0, max(-1.0, r))


RESULT_COLUMNS = [
    "replicate", "delta", "n_obs", "gamma_hat", "sigma_hat", "beta1", "beta2", "beta3",
    "se_log_gamma", "se_log_sigma", "se_beta1", "se_beta2", "se_beta3",
    "ud_corr", "loglik_hat", "loglik_true", "converged", "error",
]
SUMMARY_QUANTITIES = ["gamma_hat", "sigma_hat", "beta1", "beta2", "beta3", "ud_corr"]


@dataclass
class SimStudyResults:
    """Per (replicate, delta) rows sorted by replicate then delta, plus per-delta summaries."""

    config: SimStudyConfig
    rows: list
    summary: list = field(default_factory=list)

    def values(self, name, delta, ok_only=True):
        out = [r[name] for r in self.rows if math.isclose(r["delta"], delta) and (not ok_only or not r["error"])]
        return np.array(out, dtype=float)

    def median(self, name, delta):
        v = self.values(name, delta)
        v = v[np.isfinite(v)]
        return float(np.median(v)) if v.size else math.nan

    def mean(self, name, delta):
        v = self.values(name, delta)
        v = v[np.isfinite(v)]
        return float(np.mean(v)) if v.size else math.nan

    def write(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_csv(outdir / "results.csv", RESULT_COLUMNS, self.rows)
        cols = ["delta", "quantity", "n", "mean", "median", "q025", "q25", "q75", "q975"]
        _write_csv(outdir / "summary.csv", cols, self.summary)
        with open(outdir / "simstudy_config.json", "w") as fh:
            json.dump(self.config.to_dict(), fh, indent=2)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def summarize(rows, deltas):
    out = []
    for d in deltas:
        sel = [r for r in rows if math.isclose(r["delta"], d) and not r["error"]]
        for q in SUMMARY_QUANTITIES:
            v = np.array([r[q] for r in sel], dtype=float)
            v = v[np.isfinite(v)]
            if v.size:
                qs = np.quantile(v, [0.025, 0.25, 0.5, 0.75, 0.975])
                stats = {"n": int(v.size), "mean": float(v.mean()), "median": float(qs[2]),
                         "q025": float(qs[0]), "q25": float(qs[1]), "q75": float(qs[3]), "q975": float(qs[4])}
            else:
                stats = {"n": 0, **{k: math.nan for k in ("mean", "median", "q025", "q25", "q75", "q975")}}
            out.append({"delta": d, "quantity": q, **stats})
    return out


def _empty_row(rep, delta, error):
    row = {c: math.nan for c in RESULT_COLUMNS}
    row.update(replicate=rep, delta=delta, n_obs=0, converged=False, error=error)
    return row


def _simulate_replicates(config, model, times, reps):
    z0 = np.zeros(4)
    z0[0::2] = model.fields[2].center
    try:
        tracks = simulate_tracks(config.params, model, z0, times, len(reps), config.seed, first_index=reps[0])
        return {rep: tr for rep, tr in zip(reps, tracks)}
    except DomainError:
        # isolate the replicate(s) that left the grid
        out = {}
        for rep in reps:
            try:
                out[rep] = simulate_tracks(config.params, model, z0, times, 1, config.seed, first_index=rep)[0]
            except DomainError as exc:
                out[rep] = exc
        return out


def _fit_one(config, model, track, rep, delta):
    sub = thin(track, config.thinning_factor(delta))
    try:
        res = fit([sub], model.fields, FitOptions(n_restarts=config.n_restarts, seed=config.seed + rep))
    except (DomainError, NumericalError, ValueError) as exc:
        return _empty_row(rep, delta, f"{type(exc).__name__}: {exc}")
    se = res.standard_errors
    est = res.model(model.fields)
    try:
        corr = ud_correlation(model, est, config.geometry)
    except ValueError:
        corr = math.nan
    ll_true = LogLikelihood([sub], model.fields, init=FilterInit())
    theta_true = ll_true.theta_of(config.params, model.beta)
    g, s = res.params.gamma, res.params.sigma
    return {
        "replicate": rep, "delta": delta, "n_obs": len(sub),
        "gamma_hat": g, "sigma_hat": s,
        "beta1": float(res.beta[0]), "beta2": float(res.beta[1]), "beta3": float(res.beta[2]),
        "se_log_gamma": float(se[0]), "se_log_sigma": float(se[1]),
        "se_beta1": float(se[2]), "se_beta2": float(se[3]), "se_beta3": float(se[4]),
        "ud_corr": corr, "loglik_hat": res.loglik, "loglik_true": ll_true(theta_true),
        "converged": res.converged, "error": "",
    }


def run_simstudy(config: SimStudyConfig, progress=None) -> SimStudyResults:
    """Run every replicate at every interval.

    A replicate whose simulation leaves the grid, or whose fit fails, is
    recorded with its error message and NaN estimates; the study continues.
    Rows come back sorted by replicate and interval regardless of
    ``config.threads``.
    """
    model = study_model(config)
    n_steps = int(round(config.horizon / config.base_dt))
    times = np.arange(n_steps + 1) * config.base_dt
    rows = []
    for lo in range(0, config.n_replicates, config.batch_size):
        reps = list(range(lo, min(lo + config.batch_size, config.n_replicates)))
        sims = _simulate_replicates(config, model, times, reps)
        jobs = []
        for rep in reps:
            for d in config.deltas:
                if isinstance(sims[rep], Exception):
                    rows.append(_empty_row(rep, d, f"DomainError: {sims[rep]}"))
                else:
                    jobs.append((rep, d))
        run = lambda job: _fit_one(config, model, sims[job[0]], *job)
        if config.threads > 1:
            with ThreadPoolExecutor(config.threads) as pool:
                rows.extend(pool.map(run, jobs))
        else:
            for job in jobs:
                rows.append(run(job))
                if progress is not None:
                    progress(job)
    rows.sort(key=lambda r: (r["replicate"], r["delta"]))
    return SimStudyResults(config, rows, summarize(rows, config.deltas))
