"""Log-linear stationary distributions built from covariate fields.

The utilisation distribution is modelled as

    log pi(x) = sum_k beta_k * psi_k(x) + const

where each ``psi_k`` is a differentiable field. Only the gradient of
``log pi`` drives the movement dynamics, so the additive constant is never
tracked except when mapping the distribution onto a grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .raster import GridGeometry, RasterGrid, read_ascii_grid


class CovariateField:
    """Base class: a scalar field ``psi(x)`` with an analytic gradient."""

    name: str = "field"

    def value(self, points):
        raise NotImplementedError

    def gradient(self, points):
        raise NotImplementedError

    def check_domain(self, points):
        """Raise :class:`DomainError` if any point is outside the field's domain."""


@dataclass(frozen=True, eq=False)
class RasterCovariate(CovariateField):
    """Bilinearly interpolated raster covariate (2-d only)."""

    grid: RasterGrid
    name: str = "raster"
    source: str | None = None

    def value(self, points):
        return self.grid.value(points)

    def gradient(self, points):
        return self.grid.gradient(points)

    def check_domain(self, points):
        pts = np.asarray(points, dtype=float)
        if not np.all(self.grid.geometry.contains(pts)):
            self.grid.value(pts)  # raises with the offending point


@dataclass(frozen=True, eq=False)
class QuadraticDistance(CovariateField):
    """Squared distance ``||x - c||^2`` to a centre, for home-range attraction."""

    center: np.ndarray
    name: str = "dist2"

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    def value(self, points):
        diff = np.asarray(points, dtype=float) - self.center
        return np.sum(diff * diff, axis=-1)

    def gradient(self, points):
        return 2.0 * (np.asarray(points, dtype=float) - self.center)


@dataclass(frozen=True, eq=False)
class AnalyticField(CovariateField):
    """Field given by user callables; the hook for basis-function expansions.

    Both callables take an ``(..., d)`` array; ``value_fn`` returns shape
    ``(...)`` and ``gradient_fn`` shape ``(..., d)``.
    """

    value_fn: Callable
    gradient_fn: Callable
    name: str = "analytic"

    def value(self, points):
        return np.asarray(self.value_fn(np.asarray(points, dtype=float)), dtype=float)

    def gradient(self, points):
        return np.asarray(self.gradient_fn(np.asarray(points, dtype=float)), dtype=float)


@dataclass(frozen=True, eq=False)
class StationaryModel:
    """Ordered covariate fields and their coefficients."""

    fields: tuple = ()
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        fields = tuple(self.fields)
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if len(fields) != beta.size:
            raise ValueError(f"{len(fields)} fields but {beta.size} coefficients")
        if not np.all(np.isfinite(beta)):
            raise ValueError("coefficients must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "beta", beta)

    @property
    def n_fields(self):
        return len(self.fields)

    @property
    def names(self):
        return [f.name for f in self.fields]

    def with_beta(self, beta) -> StationaryModel:
        return StationaryModel(self.fields, beta)

    def log_pi(self, points):
        return log_pi(self, points)

    def grad_log_pi(self, points):
        return grad_log_pi(self, points)

    def check_domain(self, points):
        for f in self.fields:
            f.check_domain(points)

    def raster_geometry(self) -> GridGeometry | None:
        """Geometry of the first raster field, if there is one."""
        for f in self.fields:
            if isinstance(f, RasterCovariate):
                return f.grid.geometry
        return None


def field_values(fields: Sequence[CovariateField], points):
    """Stack of ``psi_k(points)``, shape ``(..., K)``."""
    pts = np.asarray(points, dtype=float)
    if not fields:
        return np.zeros(pts.shape[:-1] + (0,))
    return np.stack([f.value(pts) for f in fields], axis=-1)


def field_gradients(fields: Sequence[CovariateField], points):
    """Stack of ``grad psi_k(points)``, shape ``(..., K, d)``."""
    pts = np.asarray(points, dtype=float)
    if not fields:
        return np.zeros(pts.shape[:-1] + (0, pts.shape[-1]))
    return np.stack([f.gradient(pts) for f in fields], axis=-2)


def log_pi(model: StationaryModel, points):
    """Unnormalised ``log pi`` at ``points``."""
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape[:-1])
    for b, f in zip(model.beta, model.fields):
        out = out + b * f.value(pts)
    return out


def grad_log_pi(model: StationaryModel, points):
    """``sum_k beta_k * grad psi_k`` at ``points``, same shape as ``points``."""
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape)
    for b, f in zip(model.beta, model.fields):
        out = out + b * f.gradient(pts)
    return out


def normalize_log_values(logv, cell_area):
    """Exponentiate log values on grid cells so that ``sum(values) * cell_area == 1``."""
    logv = np.asarray(logv, dtype=float)
    w = np.exp(logv - np.max(logv, axis=-1, keepdims=True))
    return w / (np.sum(w, axis=-1, keepdims=True) * cell_area)


def normalize_ud(model: StationaryModel, geometry) -> RasterGrid:
    """Utilisation distribution on the cell centres of ``geometry``.

    Cell values are densities: they sum to one after multiplying by the cell
    area. ``geometry`` may be a :class:`GridGeometry` or a :class:`RasterGrid`.
    """
    geom = geometry.geometry if isinstance(geometry, RasterGrid) else geometry
    logv = log_pi(model, geom.center_points())
    dens = normalize_log_values(logv, geom.cell_area)
    return RasterGrid.from_geometry(geom, dens.reshape(geom.shape))


# -- model specification files ---------------------------------------------

def load_model_spec(path):
    """Read a JSON model specification.

    The document looks like::

        {"fields": [{"type": "raster", "path": "cov1.asc", "name": "forest"},
                    {"type": "quadratic", "center": [0.0, 0.0]}],
         "beta": [2.0, -10.0]}

    Raster paths are resolved relative to the specification file. ``beta`` is
    optional (defaults to zeros).

    Returns
    -------
    StationaryModel
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc, base_dir=path.parent)


def model_from_dict(doc, base_dir=Path(".")):
    fields = []
    for k, entry in enumerate(doc.get("fields", [])):
        kind = entry.get("type")
        name = entry.get("name")
        if kind == "raster":
            rpath = Path(entry["path"])
            if not rpath.is_absolute():
                rpath = Path(base_dir) / rpath
            if not rpath.exists():
                raise FileNotFoundError(f"raster file not found: {rpath}")
            fields.append(RasterCovariate(read_ascii_grid(rpath), name=name or rpath.stem, source=str(rpath)))
        elif kind == "quadratic":
            fields.append(QuadraticDistance(entry["center"], name=name or "dist2"))
        else:
            raise ValueError(f"field {k}: unknown type {kind!r} (expected 'raster' or 'quadratic')")
    beta = doc.get("beta")
    if beta is None:
        beta = np.zeros(len(fields))
    return StationaryModel(tuple(fields), beta)


def model_to_dict(model: StationaryModel):
    """Serialisable description of ``model``; raster fields must carry a ``source`` path."""
    entries = []
    for f in model.fields:
        if isinstance(f, RasterCovariate):
            if f.source is None:
                raise ValueError(f"raster field {f.name!r} has no source path to serialise")
            entries.append({"type": "raster", "path": f.source, "name": f.name})
        elif isinstance(f, QuadraticDistance):
            entries.append({"type": "quadratic", "center": f.center.tolist(), "name": f.name})
        else:
            raise ValueError(f"field {f.name!r} of type {type(f).__name__} cannot be serialised")
    return {"fields": entries, "beta": model.beta.tolist()}


__all__ = [
    "AnalyticField",
    "CovariateField",
    "DomainError",
    "QuadraticDistance",
    "RasterCovariate",
    "StationaryModel",
    "field_gradients",
    "field_values",
    "grad_log_pi",
    "load_model_spec",
    "log_pi",
    "model_from_dict",
    "model_to_dict",
    "normalize_log_values",
    "normalize_ud",
]
