"""Smooth bumps, tensor cutoffs and the dyadic partition used to split the
operator by distance to the fold surface."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box


def bump(t: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1-t^2)) on |t| < 1, zero outside; equals 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


def plateau_bump(t: np.ndarray, plateau: float) -> np.ndarray:
    """C-infinity bump equal to 1 on |t| <= plateau, supported in |t| < 1."""
    t = np.abs(np.asarray(t, dtype=float))
    return smoothstep((1.0 - t) / (1.0 - plateau))


def box_bump(box: Box, plateau: float = 0.0):
    """Tensor bump scaled to a box: product over axes of bump(2(u-c)/side).

    plateau = 0 gives the classic exp(1 - 1/(1-t^2)) profile; plateau > 0
    gives a profile equal to 1 on the central fraction of the box, which
    reaches the oscillatory asymptotics earlier at equal box size.
    """
    c = box.center
    s = box.sides

    def chi(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        t = 2.0 * (pts - c) / s
        if plateau > 0:
            return np.prod(plateau_bump(t, plateau), axis=-1)
        return np.prod(bump(t), axis=-1)

    return chi


def smoothstep(u: np.ndarray) -> np.ndarray:
    """C-infinity monotone step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    a = np.zeros_like(u)
    pos = u > 0
    a[pos] = np.exp(-1.0 / u[pos])
    b = np.zeros_like(u)
    neg = u < 1
    b[neg] = np.exp(-1.0 / (1.0 - u[neg]))
    return a / (a + b)


def mother_bump(t: np.ndarray) -> np.ndarray:
    """psi with psi = 1 on [-1, 1] and support in [-2, 2]."""
    return smoothstep(2.0 - np.abs(np.asarray(t, dtype=float)))


@dataclass
class DyadicCutoffFamily:
    """Annuli chi1_l(t) = psi(2^l t) - psi(2^(l+1) t) for l < L_max plus the
    core psi(2^L_max t); the pieces telescope exactly back to psi."""

    L_max: int
    scales: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if self.L_max < 1:
            raise ValueError("L_max >= 1")
        self.scales = tuple(float(2**l) for l in range(self.L_max + 1))

    def annulus(self, l: int):
        if not 0 <= l < self.L_max:
            raise ValueError(f"annulus level {l} outside 0..{self.L_max - 1}")
        s0, s1 = self.scales[l], self.scales[l + 1]
        return lambda t: mother_bump(s0 * np.asarray(t)) - mother_bump(s1 * np.asarray(t))

    def core(self):
        s = self.scales[-1]
        return lambda t: mother_bump(s * np.asarray(t))

    def partition_residual(self, t: np.ndarray) -> np.ndarray:
        """sum of pieces + core - psi(t); identically zero by telescoping."""
        t = np.asarray(t, dtype=float)
        total = self.core()(t)
        for l in range(self.L_max):
            total = total + self.annulus(l)(t)
        return total - mother_bump(t)


def dyadic_cutoff(L_max: int) -> DyadicCutoffFamily:
    return DyadicCutoffFamily(L_max)


def operator_fences(lam: float) -> list[float]:
    """Scale fences for the fold-distance decomposition of one operator:
    [1, 2, 4, ..., 2^l_max, lam^(1/3)].  Dyadic except that the innermost
    fence sits exactly at lam^(1/3), so the near-fold piece cuts at exactly
    that threshold while the pieces still telescope exactly.
    """
    lam_third = float(lam) ** (1.0 / 3.0)
    fences = [1.0]
    while fences[-1] * 2 < lam_third:
        fences.append(fences[-1] * 2)
    fences.append(lam_third)
    return fences


def n_levels(lam: float) -> int:
    """Number of annular pieces: levels l with 2^l < lam^(1/3)."""
    return len(operator_fences(lam)) - 1
