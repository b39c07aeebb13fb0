"""Tensor-product midpoint grids and complex-valued samples on them.

The midpoint rule is spectrally accurate here because every integrand carries
a compactly supported smooth cutoff vanishing at the box boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .boxes import Box
from .errors import CapacityError, ShapeError
from .phases import PhaseFunction

MIN_POINTS = 16
MAX_GRID_POINTS = int(float(__import__("os").environ.get("OSCILLAB_GRID_CAP", 8e6)))


@dataclass(frozen=True)
class GridSpec:
    box: Box
    points_per_dim: tuple[int, ...]
    K: float = 6.0

    def __post_init__(self):
        if len(self.points_per_dim) != self.box.dim:
            raise ShapeError("points_per_dim does not match box dimension")

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_dim

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_dim))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.box.sides / np.asarray(self.points_per_dim)))

    def axis(self, k: int) -> np.ndarray:
        n = self.points_per_dim[k]
        h = (self.box.hi[k] - self.box.lo[k]) / n
        return self.box.lo[k] + (np.arange(n) + 0.5) * h

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(self.axis(k) for k in range(self.dim))

    @cached_property
    def nodes(self) -> np.ndarray:
        """(size, dim) array of grid nodes in C (lexicographic) order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refine(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.box, tuple(n * factor for n in self.points_per_dim), self.K)


@dataclass
class DiscreteFunction:
    grid: GridSpec
    values: np.ndarray   # complex, flat, length grid.size

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).reshape(-1)
        if self.values.size != self.grid.size:
            raise ShapeError(f"{self.values.size} values on a {self.grid.size}-point grid")

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def copy(self) -> "DiscreteFunction":
        return DiscreteFunction(self.grid, self.values.copy())

    @staticmethod
    def from_callable(grid: GridSpec, fn) -> "DiscreteFunction":
        return DiscreteFunction(grid, np.asarray(fn(grid.nodes), dtype=complex))

    @staticmethod
    def random(grid: GridSpec, rng: np.random.Generator) -> "DiscreteFunction":
        v = rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)
        return DiscreteFunction(grid, v)


def gradient_bound(phase: PhaseFunction, side: str, x_box: Box, y_box: Box,
                   probes: int = 6) -> np.ndarray:
    """Per-axis sup of |d phi / d coordinate| over the box pair, probed on a
    coarse mesh (the built-ins are recentred, so these stay O(box size))."""
    d = phase.dim
    ax = [np.linspace(x_box.lo[k], x_box.hi[k], probes) for k in range(d)]
    ay = [np.linspace(y_box.lo[k], y_box.hi[k], probes) for k in range(d)]
    xs = np.stack([m.ravel() for m in np.meshgrid(*ax, indexing="ij")], axis=-1)
    ys = np.stack([m.ravel() for m in np.meshgrid(*ay, indexing="ij")], axis=-1)
    gx, gy = phase.gradients(xs[:, None, :], ys[None, :, :])
    g = gx if side == "left" else gy
    return np.max(np.abs(g), axis=(0, 1))


def points_for(lam: float, side_len: float, grad_bound: float, K: float) -> int:
    if lam <= 0 or grad_bound <= 0:
        return MIN_POINTS
    return max(MIN_POINTS, int(np.ceil(K * lam * side_len * grad_bound / (2 * np.pi))))


def build_grid(box: Box, lam: float, phase: PhaseFunction, K: float = 6.0,
               side: str = "right", other_box: Box | None = None,
               grad_bounds=None, cap: int = MAX_GRID_POINTS) -> GridSpec:
    """Midpoint grid resolving lam * phi with >= K points per oscillation along
    every axis of ``box``.

    ``side`` selects which gradient controls the resolution ("right" = the
    integration variable).  An explicit per-axis ``grad_bounds`` overrides the
    probe.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if K < 4:
        raise ValueError("K >= 4 required for a meaningful oscillation budget")
    if grad_bounds is None:
        if side == "right":
            xb = other_box or phase.domain[0]
            grad_bounds = gradient_bound(phase, "right", xb, box)
        else:
            yb = other_box or phase.domain[1]
            grad_bounds = gradient_bound(phase, "left", box, yb)
    grad_bounds = np.broadcast_to(np.asarray(grad_bounds, float), (box.dim,))
    n = tuple(points_for(lam, box.hi[k] - box.lo[k], grad_bounds[k], K)
              for k in range(box.dim))
    total = int(np.prod(n))
    if total > cap:
        raise CapacityError(
            f"grid needs {n} = {total} points, above the cap {cap}")
    return GridSpec(box, n, K)


def build_grid_pair(phase: PhaseFunction, lam: float, K: float = 6.0,
                    x_box: Box | None = None, y_box: Box | None = None,
                    cap: int = MAX_GRID_POINTS) -> tuple[GridSpec, GridSpec]:
    """Output/input grids for one operator.  For 1-d translation-invariant
    phases the two spacings are made equal (commensurate boxes required) so
    the Toeplitz fast path applies."""
    x_box = x_box or phase.domain[0]
    y_box = y_box or phase.domain[1]
    xg = build_grid(x_box, lam, phase, K, side="left", other_box=y_box, cap=cap)
    yg = build_grid(y_box, lam, phase, K, side="right", other_box=x_box, cap=cap)
    if phase.translation_invariant and phase.dim == 1:
        sx = x_box.hi[0] - x_box.lo[0]
        sy = y_box.hi[0] - y_box.lo[0]
        h = min(sx / xg.points_per_dim[0], sy / yg.points_per_dim[0])
        ny = int(np.ceil(sy / h))
        for _ in range(4096):
            h = sy / ny
            r = sx / h
            if abs(r - round(r)) < 1e-9:
                return GridSpec(x_box, (int(round(r)),), K), GridSpec(y_box, (ny,), K)
            ny += 1
        # incommensurate sides: fall back to the unmatched pair
    return xg, yg
