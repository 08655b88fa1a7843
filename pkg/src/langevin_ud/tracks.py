"""Tracks: timed position sequences, their CSV format, and thinning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Track:
    """One animal's observed (or simulated) trajectory.

    Attributes
    ----------
    times : ndarray, shape (n,)
        Strictly increasing observation times.
    positions : ndarray, shape (n, d)
    velocities : ndarray, shape (n, d), optional
        Only available for simulated tracks.
    covariates : dict of str -> ndarray (n,), optional
        Per-time covariate columns for time-varying movement parameters.
    track_id : str
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray | None = None
    covariates: dict | None = None
    track_id: str = "0"

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] != times.size:
            raise ValueError(f"track {self.track_id}: {times.size} times but {pos.shape[0]} positions")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(pos))):
            raise ValueError(f"track {self.track_id}: non-finite time or coordinate")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            bad = int(np.argmin(np.diff(times) > 0))
            raise ValueError(f"track {self.track_id}: times not strictly increasing at row {bad + 1}")
        vel = None
        if self.velocities is not None:
            vel = np.array(self.velocities, dtype=float).reshape(pos.shape)
        covs = None
        if self.covariates:
            covs = {k: np.array(v, dtype=float).reshape(-1) for k, v in self.covariates.items()}
            for k, v in covs.items():
                if v.size != times.size:
                    raise ValueError(f"track {self.track_id}: covariate {k!r} has {v.size} rows, expected {times.size}")
        for arr in (times, pos, vel, *(covs or {}).values()):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "track_id", str(self.track_id))

    def __len__(self):
        return self.times.size

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def dts(self):
        return np.diff(self.times)

    def subset(self, index) -> Track:
        return replace(
            self,
            times=self.times[index],
            positions=self.positions[index],
            velocities=None if self.velocities is None else self.velocities[index],
            covariates=None if self.covariates is None else {k: v[index] for k, v in self.covariates.items()},
        )


def thin(track: Track, factor: int) -> Track:
    """Keep every ``factor``-th observation, starting with the first."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"thinning factor must be a positive integer, got {factor}")
    return track.subset(slice(0, None, int(factor)))


def write_tracks_csv(tracks, path):
    """Write tracks with header ``track_id,t,x,y[,vx,vy]``.

    Velocity columns are written only if every track has velocities.
    """
    tracks = list(tracks)
    with_vel = bool(tracks) and all(tr.velocities is not None for tr in tracks)
    for tr in tracks:
        if tr.dim != 2:
            raise ValueError(f"track {tr.track_id}: CSV format holds 2-d tracks only")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["track_id", "t", "x", "y"] + (["vx", "vy"] if with_vel else []))
        for tr in tracks:
            for i in range(len(tr)):
                row = [tr.track_id, repr(float(tr.times[i])), repr(float(tr.positions[i, 0])), repr(float(tr.positions[i, 1]))]
                if with_vel:
                    row += [repr(float(tr.velocities[i, 0])), repr(float(tr.velocities[i, 1]))]
                w.writerow(row)


def read_tracks_csv(path) -> list[Track]:
    """Read tracks written by :func:`write_tracks_csv`.

    Extra numeric columns become per-time covariates. Rows are grouped by
    ``track_id`` in order of first appearance.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        missing = [c for c in ("track_id", "t", "x", "y") if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        col = {name: k for k, name in enumerate(header)}
        extra = [h for h in header if h not in ("track_id", "t", "x", "y", "vx", "vy")]
        has_vel = "vx" in col and "vy" in col
        groups: dict[str, dict] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            g = groups.setdefault(row[col["track_id"]].strip(), {"t": [], "xy": [], "v": [], "cov": {k: [] for k in extra}, "vel_ok": True})
            try:
                g["t"].append(float(row[col["t"]]))
                g["xy"].append((float(row[col["x"]]), float(row[col["y"]])))
                if has_vel:
                    vx, vy = row[col["vx"]].strip(), row[col["vy"]].strip()
                    if vx == "" or vy == "":
                        g["vel_ok"] = False
                    else:
                        g["v"].append((float(vx), float(vy)))
                for k in extra:
                    g["cov"][k].append(float(row[col[k]]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value") from None
    tracks = []
    for tid, g in groups.items():
        vel = np.array(g["v"]) if has_vel and g["vel_ok"] else None
        try:
            tracks.append(Track(g["t"], np.array(g["xy"]), vel, g["cov"] or None, track_id=tid))
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
    return tracks
