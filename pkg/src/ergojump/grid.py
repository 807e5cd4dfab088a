"""Uniform tensor grids on a box and grid-aligned fields."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[-R, R]^d`` with ``n`` nodes per axis.

    ``n`` must be odd so the origin is a node. Nodes are flattened in C order.
    """

    d: int
    R: float
    n: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"grid dimension must be >= 1, got {self.d}")
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"nodes per axis must be odd and >= 3, got {self.n}")
        if not self.R > 0:
            raise ValueError(f"box radius must be positive, got {self.R}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.R / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.R, self.R, self.n)

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(size, d)``."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def multi_index(self) -> np.ndarray:
        """Integer node indices, shape ``(size, d)``."""
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=-1)

    @property
    def origin_index(self) -> int:
        mid = (self.n - 1) // 2
        return int(np.ravel_multi_index((mid,) * self.d, self.shape))

    @cached_property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=-1)

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of nodes not on the box boundary."""
        mi = self.multi_index
        return np.all((mi > 0) & (mi < self.n - 1), axis=-1)

    def flat(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape)

    def nearest(self, x: np.ndarray) -> np.ndarray:
        """Flat index of the nearest node; points off the box map to the nearest boundary node."""
        x = np.asarray(x, dtype=float)
        idx = np.rint((x + self.R) / self.spacing).astype(np.int64)
        np.clip(idx, 0, self.n - 1, out=idx)
        return self.flat(idx)

    def shares_nodes_with(self, other: "Grid") -> bool:
        return self.d == other.d and np.isclose(self.spacing, other.spacing)

    def restrict_to(self, other: "Grid") -> np.ndarray:
        """Flat indices into ``self`` of the nodes of a smaller grid with equal spacing."""
        if not self.shares_nodes_with(other) or other.R > self.R + 1e-12:
            raise ValueError("grids do not nest")
        off = int(round((self.R - other.R) / self.spacing))
        return self.flat(other.multi_index + off)


@dataclass
class ValueField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value field contains non-finite entries")

    def at_origin(self) -> float:
        return float(self.values[self.grid.origin_index])

    def __call__(self, x):
        return self.values[self.grid.nearest(x)]


@dataclass
class PolicyField:
    """Control index per grid node; lookup off-grid uses the nearest node."""

    grid: Grid
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} indices, got shape {self.indices.shape}")

    def validate(self, n_controls: int) -> None:
        if self.indices.min() < 0 or self.indices.max() >= n_controls:
            raise ValueError(f"policy indices must lie in [0, {n_controls})")

    def __call__(self, x):
        return self.indices[self.grid.nearest(x)]

    @classmethod
    def constant(cls, grid: Grid, index: int) -> "PolicyField":
        return cls(grid, np.full(grid.size, index, dtype=np.int64))
