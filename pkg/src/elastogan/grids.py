"""Uniform grids on the unit square and bilinear interpolation helpers."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

Array = np.ndarray

_GRID_SPEC = re.compile(r"^(\d+)x(\d+)$")


def parse_grid_spec(spec: str) -> tuple[int, int]:
    """Parse a grid spec like ``"25x25"`` into (n_x, n_y) point counts."""
    m = _GRID_SPEC.match(spec.strip())
    if m is None:
        raise ValueError(f"invalid grid spec {spec!r}, expected e.g. '25x25'")
    nx, ny = int(m.group(1)), int(m.group(2))
    if nx < 2 or ny < 2:
        raise ValueError(f"grid spec {spec!r} must have at least 2 points per side")
    return nx, ny


@dataclass(frozen=True)
class UniformGrid2D:
    """Boundary-inclusive equidistant grid of n_x * n_y points on [0,1]^2.

    Points are ordered row-major with x varying fastest: index = j * n_x + i
    for x = i/(n_x-1), y = j/(n_y-1).
    """

    n_x: int
    n_y: int

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError("UniformGrid2D needs at least 2 points per side")

    @classmethod
    def from_spec(cls, spec: str) -> "UniformGrid2D":
        nx, ny = parse_grid_spec(spec)
        return cls(nx, ny)

    @property
    def spec(self) -> str:
        return f"{self.n_x}x{self.n_y}"

    @property
    def n_points(self) -> int:
        return self.n_x * self.n_y

    @property
    def xs(self) -> Array:
        return np.linspace(0.0, 1.0, self.n_x)

    @property
    def ys(self) -> Array:
        return np.linspace(0.0, 1.0, self.n_y)

    def points(self) -> Array:
        """All grid points as an (n_x*n_y, 2) array."""
        xx, yy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def trapezoid_weights(self) -> Array:
        """Quadrature weights of the 2-D trapezoid rule, flattened like points()."""
        wx = _trapezoid_1d(self.n_x)
        wy = _trapezoid_1d(self.n_y)
        return np.outer(wy, wx).ravel()

    def row_indices(self, y: float) -> Array:
        """Indices of the grid row at height y (must lie on the grid)."""
        j = y * (self.n_y - 1)
        if abs(j - round(j)) > 1e-9:
            raise ValueError(f"y={y} is not a grid row of {self.spec}")
        j = int(round(j))
        return np.arange(self.n_x) + j * self.n_x

    def point_index(self, x: float, y: float) -> int:
        """Flat index of the grid point at (x, y) (must lie on the grid)."""
        i = x * (self.n_x - 1)
        j = y * (self.n_y - 1)
        if abs(i - round(i)) > 1e-9 or abs(j - round(j)) > 1e-9:
            raise ValueError(f"({x}, {y}) is not a grid point of {self.spec}")
        return int(round(j)) * self.n_x + int(round(i))


def _trapezoid_1d(n: int) -> Array:
    h = 1.0 / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2.0
    return w


def bilinear_interpolate(grid: UniformGrid2D, values: Array, points: Array) -> Array:
    """Bilinearly interpolate grid values at arbitrary points in [0,1]^2.

    values has shape (..., n_points) flattened like grid.points(); returns an
    array of shape (..., len(points)). Points are clipped to the closed domain.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64)
    vgrid = values.reshape(values.shape[:-1] + (grid.n_y, grid.n_x))

    hx = 1.0 / (grid.n_x - 1)
    hy = 1.0 / (grid.n_y - 1)
    x = np.clip(points[:, 0], 0.0, 1.0)
    y = np.clip(points[:, 1], 0.0, 1.0)

    i = np.minimum((x / hx).astype(int), grid.n_x - 2)
    j = np.minimum((y / hy).astype(int), grid.n_y - 2)
    tx = x / hx - i
    ty = y / hy - j

    v00 = vgrid[..., j, i]
    v10 = vgrid[..., j, i + 1]
    v01 = vgrid[..., j + 1, i]
    v11 = vgrid[..., j + 1, i + 1]
    return (
        (1 - tx) * (1 - ty) * v00
        + tx * (1 - ty) * v10
        + (1 - tx) * ty * v01
        + tx * ty * v11
    )
