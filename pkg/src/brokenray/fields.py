"""Scalar fields sampled on regular cell-centered grids."""

from __future__ import annotations

import numpy as np

from . import _core
from .errors import ConfigError

__all__ = ["ScalarGridField", "grid_for_domain"]


class ScalarGridField:
    """Scalar samples on a regular n-d grid, cell-centered.

    Sample ``i`` sits at ``origin + (i + 0.5) * spacing``; the field is the
    chosen interpolant of the samples inside the grid box and zero outside.
    """

    def __init__(self, origin, spacing, values, mode="multilinear"):
        self.origin = np.asarray(origin, dtype=float).copy()
        self.values = np.asarray(values, dtype=float)
        spacing = np.asarray(spacing, dtype=float)
        if spacing.ndim == 0:
            spacing = np.full(len(self.origin), float(spacing))
        self.spacing = spacing.copy()
        if mode not in ("multilinear", "nearest"):
            raise ConfigError(f"unknown interpolation mode {mode!r}")
        self.mode = mode
        if self.values.ndim != len(self.origin):
            raise ConfigError("values rank does not match origin dimension")
        if any(d < 2 for d in self.values.shape):
            raise ConfigError("grid needs at least 2 samples per axis")
        if np.any(self.spacing <= 0):
            raise ConfigError("grid spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("field values must be finite")

    # -- constructors --------------------------------------------------------

    @staticmethod
    def zeros(origin, spacing, dims, mode="multilinear"):
        return ScalarGridField(origin, spacing, np.zeros(tuple(dims)), mode)

    @staticmethod
    def from_function(origin, spacing, dims, fn, mode="multilinear"):
        f = ScalarGridField.zeros(origin, spacing, dims, mode)
        f.values[...] = fn(f.cell_centers()).reshape(f.dims)
        return f

    def like(self, values=None, mode=None):
        v = np.zeros(self.dims) if values is None else np.asarray(values, dtype=float)
        return ScalarGridField(self.origin, self.spacing, v.reshape(self.dims),
                               mode or self.mode)

    def copy(self):
        return self.like(self.values.copy())

    # -- geometry --------------------------------------------------------------

    @property
    def dims(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def box(self):
        hi = self.origin + np.asarray(self.dims) * self.spacing
        return self.origin.copy(), hi

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axis_centers(self, a):
        return self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.spacing[a]

    def cell_centers(self):
        """All cell centers as an (N, n) array in C order."""
        axes = [self.axis_centers(a) for a in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    # -- evaluation ------------------------------------------------------------

    def interpolate(self, pts, mode=None):
        mode = mode or self.mode
        dims = np.asarray(self.dims, dtype=np.int64)
        flat = np.ascontiguousarray(self.values).ravel()
        if mode == "multilinear":
            return _core.interp_multilinear(self.origin, self.spacing, dims, flat,
                                            np.atleast_2d(pts))
        return _core.interp_nearest(self.origin, self.spacing, dims, flat,
                                    np.atleast_2d(pts))

    __call__ = interpolate

    # -- algebra ---------------------------------------------------------------

    def inner(self, other):
        """Grid inner product with the cell-volume weight."""
        return float(self.cell_volume * np.sum(self.values * other.values))

    def l2_norm(self):
        return float(np.sqrt(self.cell_volume) * np.linalg.norm(self.values))

    def __add__(self, other):
        return self.like(self.values + other.values)

    def __sub__(self, other):
        return self.like(self.values - other.values)

    def __mul__(self, c):
        return self.like(self.values * c)

    __rmul__ = __mul__


def grid_for_domain(domain, resolution, mode="multilinear", pad_cells=0):
    """Grid covering the domain's bounding box at ``resolution`` cells along
    the longest axis (isotropic spacing)."""
    lo, hi = domain.bbox
    extent = hi - lo
    h = extent.max() / resolution
    dims = np.maximum(np.ceil(extent / h - 1e-12).astype(int) + 2 * pad_cells, 2)
    origin = lo - pad_cells * h
    return ScalarGridField.zeros(origin, h, dims, mode)
