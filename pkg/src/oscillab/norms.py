"""Discrete Lebesgue and Lorentz (quasi-)norms with cell-volume weights."""

from __future__ import annotations

import numpy as np

from .grids import DiscreteFunction


def lp_norm(f: DiscreteFunction, p: float) -> float:
    """Weighted l^p norm; p may be inf."""
    a = np.abs(f.values)
    if np.isinf(p):
        return float(np.max(a, initial=0.0))
    if p <= 0:
        raise ValueError("p must be positive")
    return float((np.sum(a**p) * f.grid.cell_volume) ** (1.0 / p))


def lorentz_weak(f: DiscreteFunction, q: float) -> float:
    """Weak-type quasi-norm: max over sorted magnitudes a_k of
    a_k * (k * cell_volume)^(1/q)."""
    a = np.sort(np.abs(f.values))[::-1]
    a = a[a > 0]
    if a.size == 0:
        return 0.0
    k = np.arange(1, a.size + 1)
    return float(np.max(a * (k * f.grid.cell_volume) ** (1.0 / q)))


def lorentz_p1(f: DiscreteFunction, p: float) -> float:
    """L^(p,1) norm normalized so an indicator of measure m has norm m^(1/p)."""
    a = np.sort(np.abs(f.values))[::-1]
    a = a[a > 0]
    if a.size == 0:
        return 0.0
    v = f.grid.cell_volume
    t = np.arange(0, a.size + 1) * v
    increments = t[1:] ** (1.0 / p) - t[:-1] ** (1.0 / p)
    return float(np.sum(a * increments))


def support_measure(f: DiscreteFunction, threshold: float = 0.0) -> float:
    return float(np.count_nonzero(np.abs(f.values) > threshold) * f.grid.cell_volume)
