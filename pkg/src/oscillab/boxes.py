"""Axis-aligned boxes used for phase domains, grids and witness supports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi dimension mismatch")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box {self.lo}..{self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    @property
    def sides(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        lo = np.asarray(self.lo) - pad
        hi = np.asarray(self.hi) + pad
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def shrink(self, factor: float) -> "Box":
        c, s = self.center, self.sides * factor / 2.0
        return Box(tuple(c - s), tuple(c + s))

    @staticmethod
    def cube(center, half: float) -> "Box":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return Box(tuple(c - half), tuple(c + half))
