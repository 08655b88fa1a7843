"""Gridded covariates with bilinear interpolation.

Grids are cell-centre based: ``x_origin``/``y_origin`` are the coordinates of
the centre of the first (south-west) cell and ``values[row, col]`` holds the
covariate at ``(x_origin + col * dx, y_origin + row * dy)``. Row 0 is the
southern-most row, so ``values`` is stored bottom-up, unlike the ESRI ASCII
file layout, which lists the northern row first.

The interpolated surface is defined on the closed rectangle spanned by the
outermost cell centres. Anything outside raises :class:`DomainError`; there
is no extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

# Slack, in cell units, for points that land a rounding error outside the domain.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class GridGeometry:
    """Cell-centre geometry of a rectangular grid, without values."""

    x_origin: float
    y_origin: float
    dx: float
    dy: float
    n_cols: int
    n_rows: int

    def __post_init__(self):
        if not (np.isfinite(self.dx) and self.dx > 0 and np.isfinite(self.dy) and self.dy > 0):
            raise ValueError(f"cell sizes must be positive and finite, got dx={self.dx}, dy={self.dy}")
        if self.n_cols < 2 or self.n_rows < 2:
            raise ValueError(f"grid needs at least 2x2 cells, got {self.n_rows}x{self.n_cols}")
        if not (np.isfinite(self.x_origin) and np.isfinite(self.y_origin)):
            raise ValueError("grid origin must be finite")

    @classmethod
    def from_bounds(cls, xmin, xmax, ymin, ymax, n_cols, n_rows):
        """Geometry whose outermost cell centres sit on the given bounds."""
        return cls(
            float(xmin),
            float(ymin),
            (xmax - xmin) / (n_cols - 1),
            (ymax - ymin) / (n_rows - 1),
            int(n_cols),
            int(n_rows),
        )

    @property
    def bounds(self):
        """``(xmin, xmax, ymin, ymax)`` of the evaluation domain."""
        return (
            self.x_origin,
            self.x_origin + (self.n_cols - 1) * self.dx,
            self.y_origin,
            self.y_origin + (self.n_rows - 1) * self.dy,
        )

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def cell_area(self):
        return self.dx * self.dy

    def centers(self):
        """Cell-centre coordinate vectors ``(xs, ys)``."""
        xs = self.x_origin + self.dx * np.arange(self.n_cols)
        ys = self.y_origin + self.dy * np.arange(self.n_rows)
        return xs, ys

    def center_points(self):
        """All cell centres as an ``(n_rows * n_cols, 2)`` array in row-major order."""
        xs, ys = self.centers()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def contains(self, points):
        """Boolean mask of points inside the closed evaluation domain."""
        pts = np.asarray(points, dtype=float)
        sx = (pts[..., 0] - self.x_origin) / self.dx
        sy = (pts[..., 1] - self.y_origin) / self.dy
        return (
            np.isfinite(sx)
            & np.isfinite(sy)
            & (sx >= -_EDGE_TOL)
            & (sx <= self.n_cols - 1 + _EDGE_TOL)
            & (sy >= -_EDGE_TOL)
            & (sy <= self.n_rows - 1 + _EDGE_TOL)
        )


class RasterGrid:
    """Immutable grid of covariate values with bilinear evaluation.

    Parameters
    ----------
    x_origin, y_origin : float
        Coordinates of the centre of cell ``values[0, 0]``.
    dx, dy : float
        Cell width and height.
    values : array_like, shape (n_rows, n_cols)
        Covariate values, row 0 being the southern-most row.
    """

    __slots__ = ("geometry", "values")

    def __init__(self, x_origin, y_origin, dx, dy, values):
        vals = np.array(values, dtype=float, copy=True)
        if vals.ndim != 2:
            raise ValueError(f"values must be a 2-d array, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("raster values must all be finite")
        vals.setflags(write=False)
        n_rows, n_cols = vals.shape
        object.__setattr__(self, "geometry", GridGeometry(float(x_origin), float(y_origin), float(dx), float(dy), n_cols, n_rows))
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("RasterGrid is immutable")

    @classmethod
    def from_geometry(cls, geometry: GridGeometry, values) -> RasterGrid:
        vals = np.asarray(values, dtype=float)
        if vals.shape != geometry.shape:
            raise ValueError(f"values shape {vals.shape} does not match geometry {geometry.shape}")
        return cls(geometry.x_origin, geometry.y_origin, geometry.dx, geometry.dy, vals)

    @classmethod
    def from_function(cls, geometry: GridGeometry, fn) -> RasterGrid:
        """Sample ``fn(points) -> values`` at every cell centre."""
        vals = np.asarray(fn(geometry.center_points()), dtype=float)
        return cls.from_geometry(geometry, vals.reshape(geometry.shape))

    x_origin = property(lambda self: self.geometry.x_origin)
    y_origin = property(lambda self: self.geometry.y_origin)
    dx = property(lambda self: self.geometry.dx)
    dy = property(lambda self: self.geometry.dy)
    n_cols = property(lambda self: self.geometry.n_cols)
    n_rows = property(lambda self: self.geometry.n_rows)
    bounds = property(lambda self: self.geometry.bounds)

    def scaled(self, factor) -> RasterGrid:
        """Copy with every value multiplied by ``factor``."""
        return RasterGrid.from_geometry(self.geometry, self.values * factor)

    def value(self, points):
        return bilinear_value(self, points)

    def gradient(self, points):
        return bilinear_gradient(self, points)

    def __repr__(self):
        g = self.geometry
        return f"RasterGrid({g.n_rows}x{g.n_cols}, origin=({g.x_origin}, {g.y_origin}), dx={g.dx}, dy={g.dy})"


def _locate(grid: RasterGrid, points):
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError(f"raster evaluation needs 2-d points, got trailing dimension {pts.shape[-1]}")
    g = grid.geometry
    inside = g.contains(pts)
    if not np.all(inside):
        p = pts.reshape(-1, 2)[np.argmin(np.ravel(inside))]
        raise DomainError(
            f"point ({p[0]:.6g}, {p[1]:.6g}) is outside raster domain "
            f"x in [{g.bounds[0]:.6g}, {g.bounds[1]:.6g}], y in [{g.bounds[2]:.6g}, {g.bounds[3]:.6g}]",
            point=(float(p[0]), float(p[1])),
            bounds=g.bounds,
        )
    sx = np.clip((pts[..., 0] - g.x_origin) / g.dx, 0.0, g.n_cols - 1)
    sy = np.clip((pts[..., 1] - g.y_origin) / g.dy, 0.0, g.n_rows - 1)
    # ceil - 1 sends points on an interior gridline to the lower-left cell
    i = np.clip(np.ceil(sx).astype(np.intp) - 1, 0, g.n_cols - 2)
    j = np.clip(np.ceil(sy).astype(np.intp) - 1, 0, g.n_rows - 2)
    return i, j, sx - i, sy - j


def bilinear_value(grid: RasterGrid, points):
    """Bilinear interpolation of the grid at ``points`` (shape ``(..., 2)``)."""
    i, j, u, v = _locate(grid, points)
    f = grid.values
    f00, f10, f01, f11 = f[j, i], f[j, i + 1], f[j + 1, i], f[j + 1, i + 1]
    return (1.0 - v) * ((1.0 - u) * f00 + u * f10) + v * ((1.0 - u) * f01 + u * f11)


def bilinear_gradient(grid: RasterGrid, points):
    """Analytic gradient of the bilinear surface, shape ``(..., 2)``.

    Within a cell the surface is bilinear so the gradient is exact. On an
    interior gridline, where the surface has a kink, the gradient of the cell
    to the lower-left is returned.
    """
    i, j, u, v = _locate(grid, points)
    f = grid.values
    f00, f10, f01, f11 = f[j, i], f[j, i + 1], f[j + 1, i], f[j + 1, i + 1]
    gx = ((f10 - f00) * (1.0 - v) + (f11 - f01) * v) / grid.dx
    gy = ((f01 - f00) * (1.0 - u) + (f11 - f10) * u) / grid.dy
    return np.stack([gx, gy], axis=-1)


def read_ascii_grid(path) -> RasterGrid:
    """Read an ESRI ASCII grid.

    Accepts ``xllcorner``/``yllcorner`` or ``xllcenter``/``yllcenter`` and
    either ``cellsize`` or separate ``dx``/``dy``. Any cell equal to
    ``NODATA_value`` is an error.
    """
    path = Path(path)
    header = {}
    data_lines = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if not data_lines and key[0].isalpha():
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: malformed header line {line.strip()!r}")
                header[key] = parts[1]
            else:
                data_lines.append((lineno, parts))
    try:
        n_cols = int(header["ncols"])
        n_rows = int(header["nrows"])
        if "cellsize" in header:
            dx = dy = float(header["cellsize"])
        else:
            dx, dy = float(header["dx"]), float(header["dy"])
        if "xllcenter" in header:
            x0 = float(header["xllcenter"])
        else:
            x0 = float(header["xllcorner"]) + 0.5 * dx
        if "yllcenter" in header:
            y0 = float(header["yllcenter"])
        else:
            y0 = float(header["yllcorner"]) + 0.5 * dy
    except KeyError as exc:
        raise ValueError(f"{path}: missing header key {exc.args[0]!r}") from None

    rows = []
    for lineno, parts in data_lines:
        try:
            rows.extend(float(p) for p in parts)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric raster value") from None
    if len(rows) != n_rows * n_cols:
        raise ValueError(f"{path}: expected {n_rows * n_cols} values, found {len(rows)}")
    values = np.array(rows).reshape(n_rows, n_cols)
    if "nodata_value" in header:
        nodata = float(header["nodata_value"])
        hits = np.argwhere(values == nodata)
        if len(hits):
            r, c = hits[0]
            raise ValueError(f"{path}: NODATA cell at file row {r + 1}, column {c + 1} ({len(hits)} in total)")
    return RasterGrid(x0, y0, dx, dy, values[::-1])


def write_ascii_grid(grid: RasterGrid, path, nodata=-9999.0):
    """Write ``grid`` as an ESRI ASCII grid, northern row first."""
    g = grid.geometry
    lines = [f"ncols {g.n_cols}", f"nrows {g.n_rows}"]
    lines.append(f"xllcorner {g.x_origin - 0.5 * g.dx!r}")
    lines.append(f"yllcorner {g.y_origin - 0.5 * g.dy!r}")
    if g.dx == g.dy:
        lines.append(f"cellsize {g.dx!r}")
    else:
        lines.append(f"dx {g.dx!r}")
        lines.append(f"dy {g.dy!r}")
    lines.append(f"NODATA_value {nodata!r}")
    for row in grid.values[::-1]:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
