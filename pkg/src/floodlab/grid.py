"""Uniform raster grid: index/world coordinate mapping and unit normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class RasterGrid:
    """Uniform square-cell raster.

    Cell (i, j) has its center at (origin_x + i*dx, origin_y + j*dx), with
    i indexing x (columns) and j indexing y (rows). Arrays over the grid are
    stored with shape (ny, nx), i.e. field[j, i].
    """

    nx: int
    ny: int
    dx: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if not (self.dx > 0.0 and np.isfinite(self.dx)):
            raise ConfigurationError(f"cell size must be positive and finite, got {self.dx}")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (ny, nx) for per-cell fields."""
        return (self.ny, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        """World coordinates of the center of cell (i, j)."""
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise DomainError(f"cell index ({i}, {j}) outside {self.nx}x{self.ny} grid")
        return (self.origin_x + i * self.dx, self.origin_y + j * self.dx)

    def x_centers(self) -> np.ndarray:
        return self.origin_x + np.arange(self.nx, dtype=np.float64) * self.dx

    def y_centers(self) -> np.ndarray:
        return self.origin_y + np.arange(self.ny, dtype=np.float64) * self.dx

    def bounds(self) -> tuple[float, float, float, float]:
        """Cell-center hull (x_min, y_min, x_max, y_max)."""
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + (self.nx - 1) * self.dx,
            self.origin_y + (self.ny - 1) * self.dx,
        )

    def contains(self, x, y) -> np.ndarray:
        """True where (x, y) lies within the cell-center hull."""
        x0, y0, x1, y1 = self.bounds()
        return (np.asarray(x) >= x0) & (np.asarray(x) <= x1) & (np.asarray(y) >= y0) & (np.asarray(y) <= y1)

    def to_unit(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Map world coordinates onto [0, 1]^2 spanned by the cell-center hull.

        Both the meshless query path and the full-grid decode path must use
        this one mapping so cell-center queries reproduce grid values exactly.
        """
        x0, y0, x1, y1 = self.bounds()
        u = (np.asarray(x, dtype=np.float64) - x0) / (x1 - x0)
        v = (np.asarray(y, dtype=np.float64) - y0) / (y1 - y0)
        return u, v
