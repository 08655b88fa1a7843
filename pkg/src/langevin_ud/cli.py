"""Command-line interface: ``langevin-ud {simulate,fit,ssf,simstudy}``.

Every option can also come from a JSON file given with ``--config``; flags
given on the command line win. Each command writes ``config.json`` with the
fully resolved settings to its output directory, so a run can be repeated
with ``--config OUT/config.json``.

Exit status: 0 success, 2 bad input, 3 optimiser did not converge,
4 a position fell outside a covariate raster.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dynamics import MovementParams, simulate_tracks
from .errors import DomainError, NumericalError
from .field import load_model_spec
from .fit import FitOptions, fit, ud_with_uncertainty
from .raster import GridGeometry, write_ascii_grid
from .simstudy import FULL_SCALE_DELTAS, SimStudyConfig, run_simstudy, study_model
from .ssf import ssf_table
from .tracks import read_tracks_csv, write_tracks_csv

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_DOMAIN = 0, 2, 3, 4

DEFAULTS = {
    "simulate": {
        "model": None, "gamma": 1.0, "sigma": 1.0, "n_tracks": 1, "horizon": 100.0, "dt": 0.01,
        "x0": [0.0, 0.0], "v0": [0.0, 0.0], "seed": 0, "out": "out",
    },
    "fit": {
        "tracks": None, "model": None, "out": "out", "seed": 0, "restarts": 3, "velocity_var": None,
        "draws": 0, "grid": None, "threads": None, "maxiter_per_param": 1000,
    },
    "ssf": {"gamma": 1.0, "sigma": 1.0, "beta": [1.0], "dts": [1e-3, 1e-2, 1e-1, 1.0], "out": "out"},
    "simstudy": {
        "replicates": 20, "horizon": 500.0, "base_dt": 0.01, "deltas": [0.02, 0.2, 2.0], "full_scale": False,
        "gamma": 1.0, "sigma": 1.0, "beta": [2.0, 5.0, -10.0], "half_width": 2.0, "cell_size": 0.05,
        "smoothing_cells": 5.0, "restarts": 3, "seed": 0, "threads": None, "out": "out",
    },
}


class InputError(Exception):
    pass


def build_parser():
    p = argparse.ArgumentParser(prog="langevin-ud", description="Underdamped Langevin movement models with log-linear utilisation distributions.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values (flags override it)")
        sp.add_argument("--out", help="output directory")
        return sp

    s = common(sub.add_parser("simulate", help="simulate tracks from a model"))
    s.add_argument("--model", help="JSON model specification (omit for no habitat effect)")
    s.add_argument("--gamma", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--n-tracks", dest="n_tracks", type=int)
    s.add_argument("--horizon", type=float, help="simulated duration")
    s.add_argument("--dt", type=float, help="time step")
    s.add_argument("--x0", type=float, nargs=2)
    s.add_argument("--v0", type=float, nargs=2)
    s.add_argument("--seed", type=int)

    f = common(sub.add_parser("fit", help="fit a model to tracks"))
    f.add_argument("--tracks", help="track CSV (track_id,t,x,y)")
    f.add_argument("--model", help="JSON model specification; its beta is ignored")
    f.add_argument("--restarts", type=int)
    f.add_argument("--velocity-var", dest="velocity_var", type=float, help="prior velocity variance (default sigma^2)")
    f.add_argument("--maxiter-per-param", dest="maxiter_per_param", type=int, help="Nelder-Mead iteration cap per parameter")
    f.add_argument("--draws", type=int, help="parameter draws for UD and CV rasters (0 = skip)")
    f.add_argument("--grid", type=float, nargs=6, metavar=("XMIN", "XMAX", "YMIN", "YMAX", "NCOLS", "NROWS"),
                   help="UD grid (default: geometry of the first raster)")
    f.add_argument("--seed", type=int)
    f.add_argument("--threads", type=int)

    t = common(sub.add_parser("ssf", help="tabulate step-selection coefficients"))
    t.add_argument("--gamma", type=float)
    t.add_argument("--sigma", type=float)
    t.add_argument("--beta", type=float, nargs="+")
    t.add_argument("--dts", type=float, nargs="+")

    m = common(sub.add_parser("simstudy", help="run the simulation study"))
    m.add_argument("--replicates", type=int)
    m.add_argument("--horizon", type=float)
    m.add_argument("--base-dt", dest="base_dt", type=float)
    m.add_argument("--deltas", type=float, nargs="+")
    m.add_argument("--full-scale", dest="full_scale", action="store_const", const=True,
                   help="100 replicates over seven intervals")
    m.add_argument("--gamma", type=float)
    m.add_argument("--sigma", type=float)
    m.add_argument("--beta", type=float, nargs=3)
    m.add_argument("--half-width", dest="half_width", type=float)
    m.add_argument("--cell-size", dest="cell_size", type=float)
    m.add_argument("--smoothing-cells", dest="smoothing_cells", type=float)
    m.add_argument("--restarts", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--threads", type=int)
    return p


def resolve_config(args) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        unknown = set(doc) - set(cfg) - {"command"}
        if unknown:
            raise InputError(f"{path}: unknown option(s) {sorted(unknown)}")
        cfg.update({k: v for k, v in doc.items() if k != "command"})
    for k, v in vars(args).items():
        if k in cfg and v is not None:
            cfg[k] = v
    if "threads" in cfg and cfg["threads"] is None:
        cfg["threads"] = os.cpu_count() or 1
    if cmd == "simstudy" and cfg["full_scale"] and "deltas" not in _explicit(args):
        cfg["deltas"] = list(FULL_SCALE_DELTAS)
        if "replicates" not in _explicit(args):
            cfg["replicates"] = 100
        cfg["full_scale"] = False  # expanded; the echoed config reproduces without the flag
    return cfg


def _explicit(args):
    return {k for k, v in vars(args).items() if v is not None}


def _prepare_out(cfg):
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise InputError(f"output directory not writable: {out}")
    return out


def _echo(cfg, out, command):
    with open(out / "config.json", "w") as fh:
        json.dump({"command": command, **cfg}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_model(path):
    if path is None:
        from .field import StationaryModel

        return StationaryModel((), np.zeros(0))
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model specification not found: {path}")
    return load_model_spec(path)


def cmd_simulate(cfg):
    out = _prepare_out(cfg)
    model = _load_model(cfg["model"])
    n = int(round(cfg["horizon"] / cfg["dt"]))
    if n < 1:
        raise InputError("horizon must be at least one time step")
    times = np.arange(n + 1) * cfg["dt"]
    z0 = np.empty(4)
    z0[0::2], z0[1::2] = cfg["x0"], cfg["v0"]
    tracks = simulate_tracks(MovementParams(cfg["gamma"], cfg["sigma"]), model, z0, times, cfg["n_tracks"], cfg["seed"])
    write_tracks_csv(tracks, out / "tracks.csv")
    _echo(cfg, out, "simulate")
    print(f"wrote {len(tracks)} track(s) to {out / 'tracks.csv'}")
    return EXIT_OK


def cmd_fit(cfg):
    out = _prepare_out(cfg)
    if cfg["tracks"] is None:
        raise InputError("--tracks is required")
    tpath = Path(cfg["tracks"])
    if not tpath.exists():
        raise FileNotFoundError(f"track file not found: {tpath}")
    model = _load_model(cfg["model"])
    tracks = read_tracks_csv(tpath)
    opts = FitOptions(n_restarts=cfg["restarts"], seed=cfg["seed"], velocity_var=cfg["velocity_var"], threads=cfg["threads"],
                      maxiter_per_param=cfg["maxiter_per_param"])
    res = fit(tracks, model.fields, opts)
    res.config.update({"tracks": str(tpath), "model": cfg["model"]})
    res.to_json(out / "fit.json")
    if cfg["draws"]:
        if cfg["grid"] is not None:
            x0, x1, y0, y1, nc, nr = cfg["grid"]
            geom = GridGeometry.from_bounds(x0, x1, y0, y1, int(nc), int(nr))
        else:
            geom = model.raster_geometry()
            if geom is None:
                raise InputError("no raster in the model; give --grid for UD output")
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), 1]))
        unc = ud_with_uncertainty(res, model.fields, geom, cfg["draws"], rng)
        write_ascii_grid(unc.estimate, out / "ud.asc")
        write_ascii_grid(unc.mean, out / "ud_mean.asc")
        write_ascii_grid(unc.cv, out / "ud_cv.asc")
    _echo(cfg, out, "fit")
    print(f"loglik {res.loglik:.6f}; converged {res.converged}; wrote {out / 'fit.json'}")
    if not res.converged:
        print("optimiser did not converge; estimates are the best point found", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_ssf(cfg):
    out = _prepare_out(cfg)
    rows = ssf_table(MovementParams(cfg["gamma"], cfg["sigma"]), cfg["beta"], cfg["dts"])
    _write_rows(out / "ssf_coefficients.csv", rows)
    _echo(cfg, out, "ssf")
    print(f"wrote {out / 'ssf_coefficients.csv'}")
    return EXIT_OK


def cmd_simstudy(cfg):
    out = _prepare_out(cfg)
    config = SimStudyConfig(
        n_replicates=cfg["replicates"], horizon=cfg["horizon"], base_dt=cfg["base_dt"], deltas=tuple(cfg["deltas"]),
        gamma=cfg["gamma"], sigma=cfg["sigma"], beta=tuple(cfg["beta"]), half_width=cfg["half_width"],
        cell_size=cfg["cell_size"], smoothing_cells=cfg["smoothing_cells"], seed=cfg["seed"],
        n_restarts=cfg["restarts"], threads=cfg["threads"],
    )
    for k, field in enumerate(study_model(config).fields[:2]):
        write_ascii_grid(field.grid, out / f"psi{k + 1}.asc")
    results = run_simstudy(config)
    results.write(out)
    _echo(cfg, out, "simstudy")
    print(f"wrote {out / 'results.csv'} and {out / 'summary.csv'}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "ssf": cmd_ssf, "simstudy": cmd_simstudy}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (InputError, FileNotFoundError, ValueError, KeyError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
