"""Phase functions and their derivative jets.

A phase ``phi(x, y)`` is a smooth real-valued function on a product of two
boxes in R^d.  Every phase exposes batched evaluation (``value``, ``gradients``,
``mixed_hessian``) plus exact single-point derivative tensors up to total
order 3 (``jet``).  Built-in phases carry closed-form jets; arbitrary callables
fall back to finite-difference stencils.

Derivative tensors are indexed over the combined variable z = (x_1..x_d,
y_1..y_d); the mixed Hessian convention is rows = x-derivatives, columns =
y-derivatives.

Built-in phases are *recentred* by default: the linear part of the gradient at
the base point is subtracted.  This multiplies the integral kernel by fixed
unimodular factors in x and y separately, so operator norms and all fold and
curvature quantities (which only involve mixed or higher derivatives) are
unchanged, while quadrature grids stay small.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .boxes import Box

EPS = np.finfo(float).eps
# steps balancing truncation vs rounding for value-based central stencils
FD_STEP = {1: EPS ** (1.0 / 3), 2: EPS ** 0.25, 3: 1.8 * EPS ** 0.2}


def _fd_step(order: int, coord: float) -> float:
    return FD_STEP[order] * max(1.0, abs(coord))


def fd_derivative(f: Callable[[np.ndarray], float], z: np.ndarray, idx: tuple[int, ...]) -> float:
    """Central finite difference of ``f`` at ``z`` for the multi-index ``idx``.

    ``idx`` lists the coordinates differentiated against (length 1..3).  Uses a
    single value-based stencil per order so rounding error stays ~eps^(2/5)
    even for third derivatives.
    """
    z = np.asarray(z, dtype=float)
    order = len(idx)
    counts: dict[int, int] = {}
    for i in idx:
        counts[i] = counts.get(i, 0) + 1
    axes = sorted(counts)
    if order == 1:
        (i,) = idx
        h = _fd_step(1, z[i])
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        return (f(zp) - f(zm)) / (2 * h)
    if order == 2:
        if len(axes) == 1:
            i = axes[0]
            h = _fd_step(2, z[i])
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            return (f(zp) + f(zm) - 2 * f(z)) / h**2
        i, j = axes
        hi, hj = _fd_step(2, z[i]), _fd_step(2, z[j])
        total = 0.0
        for si, sj in itertools.product((1, -1), repeat=2):
            zz = z.copy()
            zz[i] += si * hi
            zz[j] += sj * hj
            total += si * sj * f(zz)
        return total / (4 * hi * hj)
    if order == 3:
        if len(axes) == 1:
            i = axes[0]
            h = _fd_step(3, z[i])
            vals = []
            for s in (2, 1, -1, -2):
                zz = z.copy()
                zz[i] += s * h
                vals.append(f(zz))
            return (vals[0] - 2 * vals[1] + 2 * vals[2] - vals[3]) / (2 * h**3)
        if len(axes) == 2:
            # one coordinate repeated twice, one simple
            i = next(a for a in axes if counts[a] == 1)
            j = next(a for a in axes if counts[a] == 2)
            hi, hj = _fd_step(3, z[i]), _fd_step(3, z[j])
            total = 0.0
            for si in (1, -1):
                for w, sj in ((1.0, 1), (1.0, -1), (-2.0, 0)):
                    zz = z.copy()
                    zz[i] += si * hi
                    zz[j] += sj * hj
                    total += si * w * f(zz)
            return total / (2 * hi * hj**2)
        i, j, k = axes
        hs = [_fd_step(3, z[a]) for a in axes]
        total = 0.0
        for si, sj, sk in itertools.product((1, -1), repeat=3):
            zz = z.copy()
            zz[i] += si * hs[0]
            zz[j] += sj * hs[1]
            zz[k] += sk * hs[2]
            total += si * sj * sk * f(zz)
        return total / (8 * hs[0] * hs[1] * hs[2])
    raise ValueError(f"unsupported derivative order {order}")


def fd_jet(f: Callable[[np.ndarray], float], z: np.ndarray, order: int) -> list[np.ndarray]:
    """Full derivative tensors of ``f`` at ``z`` up to ``order`` (<= 3) by FD."""
    z = np.asarray(z, dtype=float)
    m = z.size
    jets: list[np.ndarray] = [np.asarray(f(z), dtype=float)]
    for k in range(1, order + 1):
        tens = np.zeros((m,) * k)
        for idx in itertools.combinations_with_replacement(range(m), k):
            val = fd_derivative(f, z, idx)
            for perm in set(itertools.permutations(idx)):
                tens[perm] = val
        jets.append(tens)
    return jets


def _sym_fill(tens: np.ndarray, idx: tuple[int, ...], val: float) -> None:
    for perm in set(itertools.permutations(idx)):
        tens[perm] = val


class PhaseFunction:
    """Base phase.  Subclasses supply ``_value``/``_gradients`` (batched) and
    ``_jet`` (single point); this class layers domain checks and recentring."""

    #: index into y of the coordinate solved for on the fold surface, or None
    fold_coordinate: int | None = None
    #: phi(x, y) = phi(x - y) in one dimension (enables Toeplitz application)
    translation_invariant: bool = False

    def __init__(self, name: str, dim: int, domain: tuple[Box, Box],
                 params: dict | None = None, base_point=None, recenter: bool = False):
        self.name = name
        self.dim = dim
        self.domain = domain
        self.params = dict(params or {})
        if base_point is None:
            base_point = (domain[0].center, domain[1].center)
        self.base_point = (np.asarray(base_point[0], float), np.asarray(base_point[1], float))
        self._shift_x = np.zeros(dim)
        self._shift_y = np.zeros(dim)
        if recenter:
            # midrange of the gradient over the domain: the subtracted linear
            # part is a unimodular modulation, chosen to minimize the residual
            # oscillation budget per axis
            probes = 5
            ax = [np.linspace(domain[0].lo[k], domain[0].hi[k], probes) for k in range(dim)]
            ay = [np.linspace(domain[1].lo[k], domain[1].hi[k], probes) for k in range(dim)]
            xs = np.stack([m.ravel() for m in np.meshgrid(*ax, indexing="ij")], axis=-1)
            ys = np.stack([m.ravel() for m in np.meshgrid(*ay, indexing="ij")], axis=-1)
            gx, gy = self._gradients(xs[:, None, :], ys[None, :, :])
            self._shift_x = (gx.max(axis=(0, 1)) + gx.min(axis=(0, 1))) / 2.0
            self._shift_y = (gy.max(axis=(0, 1)) + gy.min(axis=(0, 1))) / 2.0

    # ---- subclass surface -------------------------------------------------
    def _value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradients(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _jet(self, x: np.ndarray, y: np.ndarray, order: int) -> list[np.ndarray]:
        raise NotImplementedError

    def _mixed_hessian(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        # batched (..., d, d); default goes through single-point jets
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        xb = np.broadcast_to(x, batch + (self.dim,)).reshape(-1, self.dim)
        yb = np.broadcast_to(y, batch + (self.dim,)).reshape(-1, self.dim)
        out = np.empty((xb.shape[0], self.dim, self.dim))
        for i in range(xb.shape[0]):
            j2 = self._jet(xb[i], yb[i], 2)[2]
            out[i] = j2[: self.dim, self.dim:]
        return out.reshape(batch + (self.dim, self.dim))

    # ---- public API --------------------------------------------------------
    def value(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        v = self._value(x, y)
        if self._shift_x.any() or self._shift_y.any():
            v = v - x @ self._shift_x - y @ self._shift_y
        return v

    def gradients(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        gx, gy = self._gradients(x, y)
        return gx - self._shift_x, gy - self._shift_y

    def jet(self, x, y, order: int = 3) -> list[np.ndarray]:
        """Derivative tensors [phi, D, D^2, D^3][:order+1] over z=(x, y)."""
        if not 0 <= order <= 3:
            raise ValueError("order must be in 0..3")
        x = np.asarray(x, float).reshape(self.dim)
        y = np.asarray(y, float).reshape(self.dim)
        jets = self._jet(x, y, order)
        shift = np.concatenate([self._shift_x, self._shift_y])
        if shift.any():
            jets = list(jets)
            jets[0] = jets[0] - x @ self._shift_x - y @ self._shift_y
            if order >= 1:
                jets[1] = jets[1] - shift
        return jets[: order + 1]

    def mixed_hessian(self, x, y) -> np.ndarray:
        """Batched d x d matrix of d/dx_i d/dy_j phi (unchanged by recentring)."""
        return self._mixed_hessian(np.asarray(x, float), np.asarray(y, float))

    def fold_offset(self, x, y):
        """Batched signed offset y_sol - g(x, y_rest) when a closed-form fold
        solve is available, else None."""
        return None

    @property
    def linear_shifts(self) -> tuple[np.ndarray, np.ndarray]:
        """Recentring shifts (c_x, c_y); phi = phi_raw - c_x.x - c_y.y."""
        return self._shift_x, self._shift_y

    def in_domain(self, x, y, pad: float = 1e-9) -> bool:
        return bool(np.all(self.domain[0].contains(x, pad)) and np.all(self.domain[1].contains(y, pad)))

    def __repr__(self):
        return f"<phase {self.name} d={self.dim}>"


def _split(z, d):
    return z[:d], z[d:]


class CallablePhase(PhaseFunction):
    """User phase from a plain callable; all derivatives by finite differences."""

    def __init__(self, name, dim, func, domain, params=None, base_point=None, recenter=False):
        self._func = func
        super().__init__(name, dim, domain, params, base_point, recenter)

    def _value(self, x, y):
        return self._func(x, y)

    def _scalar(self, z):
        x, y = _split(z, self.dim)
        return float(self._func(x, y))

    def _gradients(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        xb = np.broadcast_to(x, batch + (self.dim,)).reshape(-1, self.dim)
        yb = np.broadcast_to(y, batch + (self.dim,)).reshape(-1, self.dim)
        gx = np.empty_like(xb)
        gy = np.empty_like(yb)
        for i in range(xb.shape[0]):
            z = np.concatenate([xb[i], yb[i]])
            g = np.array([fd_derivative(self._scalar, z, (k,)) for k in range(2 * self.dim)])
            gx[i], gy[i] = g[: self.dim], g[self.dim:]
        return gx.reshape(batch + (self.dim,)), gy.reshape(batch + (self.dim,))

    def _jet(self, x, y, order):
        z = np.concatenate([x, y])
        return fd_jet(self._scalar, z, order)


class ModelFold(PhaseFunction):
    """Two-sided fold model: x'.y' + (x_d - y_d)^3/6 + x_d |y'|^2."""

    def __init__(self, dim=2, domain=None, recenter=True):
        if domain is None:
            domain = (Box.cube(np.zeros(dim), 0.25), Box.cube(np.zeros(dim), 0.25))
        super().__init__("model_fold", dim, domain,
                         base_point=(np.zeros(dim), np.zeros(dim)), recenter=recenter)

    @property
    def fold_coordinate(self):
        return self.dim - 1

    def _value(self, x, y):
        u = x[..., -1] - y[..., -1]
        v = u**3 / 6.0
        if self.dim > 1:
            v = v + np.sum(x[..., :-1] * y[..., :-1], axis=-1) \
                + x[..., -1] * np.sum(y[..., :-1] ** 2, axis=-1)
        return v

    def _gradients(self, x, y):
        u = x[..., -1] - y[..., -1]
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        gx = np.zeros(batch + (self.dim,))
        gy = np.zeros(batch + (self.dim,))
        if self.dim > 1:
            gx[..., :-1] = np.broadcast_to(y[..., :-1], batch + (self.dim - 1,))
            gx[..., -1] = np.sum(y[..., :-1] ** 2, axis=-1)
            gy[..., :-1] = x[..., :-1] + 2.0 * x[..., -1:] * y[..., :-1]
        gx[..., -1] = gx[..., -1] + u**2 / 2.0
        gy[..., -1] = -(u**2) / 2.0
        return gx, gy

    def _mixed_hessian(self, x, y):
        u = np.asarray(x[..., -1] - y[..., -1])
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        m = np.zeros(batch + (self.dim, self.dim))
        for j in range(self.dim - 1):
            m[..., j, j] = 1.0
            m[..., -1, j] = 2.0 * np.broadcast_to(y[..., j], batch)
        m[..., -1, -1] = -u
        return m

    def _jet(self, x, y, order):
        d = self.dim
        u = x[-1] - y[-1]
        jets = [np.asarray(self._value(x, y), dtype=float)]
        if order >= 1:
            gx, gy = self._gradients(x, y)
            jets.append(np.concatenate([gx, gy]))
        if order >= 2:
            h = np.zeros((2 * d, 2 * d))
            xd, yd = d - 1, 2 * d - 1
            h[xd, xd] = u
            h[yd, yd] = u
            h[xd, yd] = h[yd, xd] = -u
            for j in range(d - 1):
                h[j, d + j] = h[d + j, j] = 1.0
                h[xd, d + j] = h[d + j, xd] = 2.0 * y[j]
                h[d + j, d + j] = 2.0 * x[-1]
            jets.append(h)
        if order >= 3:
            t = np.zeros((2 * d,) * 3)
            xd, yd = d - 1, 2 * d - 1
            _sym_fill(t, (xd, xd, xd), 1.0)
            _sym_fill(t, (xd, xd, yd), -1.0)
            _sym_fill(t, (xd, yd, yd), 1.0)
            _sym_fill(t, (yd, yd, yd), -1.0)
            for j in range(d - 1):
                _sym_fill(t, (xd, d + j, d + j), 2.0)
            jets.append(t)
        return jets

    def fold_offset(self, x, y):
        # det of the mixed Hessian is y_d - x_d in this row/column convention
        return np.asarray(y)[..., -1] - np.asarray(x)[..., -1]

    def fold_g(self, x, y_rest):
        x = np.asarray(x, float)
        return x[..., -1]


class OneSidedFold(PhaseFunction):
    """x'.y' + x_d |y|^2: the left projection folds, the right one is
    maximally degenerate."""

    def __init__(self, dim=2, domain=None, recenter=True):
        if domain is None:
            domain = (Box.cube(np.zeros(dim), 0.25), Box.cube(np.zeros(dim), 0.25))
        super().__init__("one_sided_fold", dim, domain,
                         base_point=(np.zeros(dim), np.zeros(dim)), recenter=recenter)

    @property
    def fold_coordinate(self):
        return self.dim - 1

    def _value(self, x, y):
        v = x[..., -1] * np.sum(y * y, axis=-1)
        if self.dim > 1:
            v = v + np.sum(x[..., :-1] * y[..., :-1], axis=-1)
        return v

    def _gradients(self, x, y):
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        gx = np.zeros(batch + (self.dim,))
        gy = np.zeros(batch + (self.dim,))
        if self.dim > 1:
            gx[..., :-1] = np.broadcast_to(y[..., :-1], batch + (self.dim - 1,))
            gy[..., :-1] = x[..., :-1]
        gx[..., -1] = np.sum(y * y, axis=-1)
        gy[...] += 2.0 * x[..., -1:] * y
        return gx, gy

    def _mixed_hessian(self, x, y):
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        m = np.zeros(batch + (self.dim, self.dim))
        for j in range(self.dim - 1):
            m[..., j, j] = 1.0
        for j in range(self.dim):
            m[..., -1, j] = 2.0 * np.broadcast_to(y[..., j], batch)
        return m

    def _jet(self, x, y, order):
        d = self.dim
        jets = [np.asarray(self._value(x, y), dtype=float)]
        if order >= 1:
            gx, gy = self._gradients(x, y)
            jets.append(np.concatenate([gx, gy]))
        if order >= 2:
            h = np.zeros((2 * d, 2 * d))
            xd = d - 1
            for j in range(d - 1):
                h[j, d + j] = h[d + j, j] = 1.0
            for j in range(d):
                h[xd, d + j] = h[d + j, xd] = 2.0 * y[j]
                h[d + j, d + j] = 2.0 * x[-1]
            jets.append(h)
        if order >= 3:
            t = np.zeros((2 * d,) * 3)
            xd = d - 1
            for j in range(d):
                _sym_fill(t, (xd, d + j, d + j), 2.0)
            jets.append(t)
        return jets

    def fold_offset(self, x, y):
        return np.asarray(y)[..., -1]

    def fold_g(self, x, y_rest):
        x = np.asarray(x, float)
        return np.zeros(x.shape[:-1])


class CircleExtension(PhaseFunction):
    """cos(x - y) in one dimension: extension from a circular arc to an arc of
    a large circle, in arclength coordinates."""

    fold_coordinate = 0
    translation_invariant = True

    def __init__(self, domain=None, recenter=True):
        x0, y0 = math.pi / 4, -math.pi / 4
        if domain is None:
            domain = (Box.cube([x0], 0.25), Box.cube([y0], 0.25))
        super().__init__("circle_extension", 1, domain,
                         base_point=(np.array([x0]), np.array([y0])), recenter=recenter)

    def _value(self, x, y):
        return np.cos(x[..., 0] - y[..., 0])

    def _gradients(self, x, y):
        s = np.sin(x[..., 0] - y[..., 0])
        return -s[..., None], s[..., None]

    def _mixed_hessian(self, x, y):
        return np.cos(x[..., 0] - y[..., 0])[..., None, None]

    def _jet(self, x, y, order):
        u = float(x[0] - y[0])
        table = [math.cos(u), -math.sin(u), -math.cos(u), math.sin(u)]
        jets = [np.asarray(table[0])]
        for k in range(1, order + 1):
            t = np.zeros((2,) * k)
            for idx in itertools.product(range(2), repeat=k):
                ny = sum(idx)
                t[idx] = table[k] * (-1.0) ** ny
            jets.append(t)
        return jets

    def fold_offset(self, x, y):
        # root of cos(x - y) with y = x - pi/2 inside the default window
        return np.asarray(y)[..., 0] - (np.asarray(x)[..., 0] - math.pi / 2)

    def fold_g(self, x, y_rest):
        return np.asarray(x, float)[..., 0] - math.pi / 2


class DotProduct(PhaseFunction):
    """Nondegenerate phase x.y; the fold set is empty."""

    def __init__(self, dim=1, domain=None, recenter=False):
        if domain is None:
            domain = (Box.cube(np.zeros(dim), 0.25), Box.cube(np.zeros(dim), 0.25))
        super().__init__("dot_product", dim, domain, recenter=recenter)

    def _value(self, x, y):
        return np.sum(x * y, axis=-1)

    def _gradients(self, x, y):
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        return (np.broadcast_to(y, batch + (self.dim,)).copy(),
                np.broadcast_to(x, batch + (self.dim,)).copy())

    def _mixed_hessian(self, x, y):
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        m = np.zeros(batch + (self.dim, self.dim))
        for j in range(self.dim):
            m[..., j, j] = 1.0
        return m

    def _jet(self, x, y, order):
        d = self.dim
        jets = [np.asarray(float(np.dot(x, y)))]
        if order >= 1:
            jets.append(np.concatenate([y, x]).astype(float))
        if order >= 2:
            h = np.zeros((2 * d, 2 * d))
            for j in range(d):
                h[j, d + j] = h[d + j, j] = 1.0
            jets.append(h)
        if order >= 3:
            jets.append(np.zeros((2 * d,) * 3))
        return jets


class CurveAveraging(PhaseFunction):
    """Oscillatory phase of the averaging operator along (s, s^2/2, s^3/6):
    y2 (x2 + (x1-y1)^2/2) + y3 (x3 + (x1-y1)^3/6), with y3 near 1."""

    fold_coordinate = 1

    def __init__(self, domain=None, recenter=True):
        if domain is None:
            domain = (Box.cube(np.zeros(3), 0.25),
                      Box((-0.25, -0.25, 0.75), (0.25, 0.25, 1.25)))
        super().__init__("curve_avg", 3, domain,
                         base_point=(np.zeros(3), np.array([0.0, 0.0, 1.0])),
                         recenter=recenter)

    def _value(self, x, y):
        w = x[..., 0] - y[..., 0]
        return y[..., 1] * (x[..., 1] + w**2 / 2) + y[..., 2] * (x[..., 2] + w**3 / 6)

    def _gradients(self, x, y):
        w = x[..., 0] - y[..., 0]
        a = y[..., 1] * w + y[..., 2] * w**2 / 2
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        gx = np.zeros(batch + (3,))
        gy = np.zeros(batch + (3,))
        gx[..., 0] = a
        gx[..., 1] = y[..., 1]
        gx[..., 2] = y[..., 2]
        gy[..., 0] = -a
        gy[..., 1] = x[..., 1] + w**2 / 2
        gy[..., 2] = x[..., 2] + w**3 / 6
        return gx, gy

    def _mixed_hessian(self, x, y):
        w = np.asarray(x[..., 0] - y[..., 0])
        b = y[..., 1] + y[..., 2] * w
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        m = np.zeros(batch + (3, 3))
        m[..., 0, 0] = -b
        m[..., 0, 1] = w
        m[..., 0, 2] = w**2 / 2
        m[..., 1, 1] = 1.0
        m[..., 2, 2] = 1.0
        return m

    def _jet(self, x, y, order):
        w = float(x[0] - y[0])
        jets = [np.asarray(self._value(x, y), dtype=float)]
        if order >= 1:
            gx, gy = self._gradients(x, y)
            jets.append(np.concatenate([gx, gy]))
        X1, X2, X3, Y1, Y2, Y3 = range(6)
        if order >= 2:
            b = y[1] + y[2] * w
            h = np.zeros((6, 6))
            h[X1, X1] = b
            _sym_fill(h, (X1, Y1), -b)
            h[Y1, Y1] = b
            _sym_fill(h, (X1, Y2), w)
            _sym_fill(h, (X1, Y3), w**2 / 2)
            _sym_fill(h, (Y1, Y2), -w)
            _sym_fill(h, (Y1, Y3), -(w**2) / 2)
            _sym_fill(h, (X2, Y2), 1.0)
            _sym_fill(h, (X3, Y3), 1.0)
            jets.append(h)
        if order >= 3:
            t = np.zeros((6, 6, 6))
            _sym_fill(t, (X1, X1, X1), y[2])
            _sym_fill(t, (X1, X1, Y1), -y[2])
            _sym_fill(t, (X1, Y1, Y1), y[2])
            _sym_fill(t, (Y1, Y1, Y1), -y[2])
            _sym_fill(t, (X1, X1, Y2), 1.0)
            _sym_fill(t, (X1, Y1, Y2), -1.0)
            _sym_fill(t, (Y1, Y1, Y2), 1.0)
            _sym_fill(t, (X1, X1, Y3), w)
            _sym_fill(t, (X1, Y1, Y3), -w)
            _sym_fill(t, (Y1, Y1, Y3), w)
            jets.append(t)
        return jets

    def fold_offset(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        return y[..., 1] + y[..., 2] * (x[..., 0] - y[..., 0])

    def fold_g(self, x, y_rest):
        # y_rest carries (y1, y3) for the solved coordinate y2
        x = np.asarray(x, float)
        y_rest = np.asarray(y_rest, float)
        return -y_rest[..., 1] * (x[..., 0] - y_rest[..., 0])


def _tangent_frame(p: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal frame of the tangent space of S^d at p."""
    n = p.size
    frame = []
    for e in np.eye(n):
        v = e - (e @ p) * p
        for u in frame:
            v = v - (v @ u) * u
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            frame.append(v / nv)
        if len(frame) == n - 1:
            break
    return np.array(frame)


class SphereExtension(PhaseFunction):
    """<Xi(x), Gamma(y)> with both surfaces unit spheres in graph charts over
    tangent planes at base points; base points orthogonal so the chart origin
    sits on the fold variety."""

    def __init__(self, dim=2, base_x=None, base_y=None, domain=None, recenter=True):
        q = np.zeros(dim + 1)
        q[0] = 1.0
        p = np.zeros(dim + 1)
        p[-1] = 1.0
        if base_x is not None:
            q = np.asarray(base_x, float)
            q = q / np.linalg.norm(q)
        if base_y is not None:
            p = np.asarray(base_y, float)
            p = p / np.linalg.norm(p)
        self._q, self._p = q, p
        self._u = _tangent_frame(q)   # (d, d+1) frame for the x chart
        self._v = _tangent_frame(p)   # (d, d+1) frame for the y chart
        if domain is None:
            domain = (Box.cube(np.zeros(dim), 0.25), Box.cube(np.zeros(dim), 0.25))
        super().__init__("sphere_extension", dim, domain,
                         params={"base_x": tuple(q), "base_y": tuple(p)},
                         base_point=(np.zeros(dim), np.zeros(dim)), recenter=recenter)

    def _chart(self, w, frame, pole):
        r2 = np.sum(w * w, axis=-1)
        s = np.sqrt(np.clip(1.0 - r2, 1e-12, None))
        return w @ frame + s[..., None] * pole

    @staticmethod
    def _height_jets(w: np.ndarray, order: int) -> list:
        # derivatives of s(w) = sqrt(1 - |w|^2)
        d = w.size
        r2 = float(w @ w)
        s = math.sqrt(1.0 - r2)
        out = [s]
        if order >= 1:
            out.append(-w / s)
        if order >= 2:
            out.append(-np.eye(d) / s - np.multiply.outer(w, w) / s**3)
        if order >= 3:
            t = np.zeros((d, d, d))
            for i, j, k in itertools.product(range(d), repeat=3):
                t[i, j, k] = -((i == j) * w[k] + (i == k) * w[j] + (j == k) * w[i]) / s**3 \
                    - 3 * w[i] * w[j] * w[k] / s**5
            out.append(t)
        return out

    def _value(self, x, y):
        return np.sum(self._chart(x, self._u, self._q) * self._chart(y, self._v, self._p), axis=-1)

    def _gradients(self, x, y):
        gy_pt = self._chart(y, self._v, self._p)
        gx_pt = self._chart(x, self._u, self._q)
        sx = np.sqrt(np.clip(1.0 - np.sum(x * x, axis=-1), 1e-12, None))
        sy = np.sqrt(np.clip(1.0 - np.sum(y * y, axis=-1), 1e-12, None))
        # D Xi_i = u_i - (x_i / s_x) q
        gx = gy_pt @ self._u.T - (x / sx[..., None]) * (gy_pt @ self._q)[..., None]
        gy = gx_pt @ self._v.T - (y / sy[..., None]) * (gx_pt @ self._p)[..., None]
        return gx, gy

    def _mixed_hessian(self, x, y):
        sx = np.sqrt(np.clip(1.0 - np.sum(x * x, axis=-1), 1e-12, None))
        sy = np.sqrt(np.clip(1.0 - np.sum(y * y, axis=-1), 1e-12, None))
        uv = self._u @ self._v.T
        up = self._u @ self._p
        qv = self._q @ self._v.T
        qp = float(self._q @ self._p)
        xn = x / sx[..., None]
        yn = y / sy[..., None]
        m = np.broadcast_to(uv, np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + uv.shape).copy()
        m -= xn[..., :, None] * qv[None, :]
        m -= yn[..., None, :] * up[:, None]
        m += (xn[..., :, None] * yn[..., None, :]) * qp
        return m

    def _chart_jets(self, w, frame, pole, order):
        hj = self._height_jets(w, order)
        d = w.size
        jets = [w @ frame + hj[0] * pole]
        if order >= 1:
            jets.append(frame + np.multiply.outer(hj[1], pole))
        for k in range(2, order + 1):
            jets.append(np.multiply.outer(hj[k], pole))
        return jets

    def _jet(self, x, y, order):
        d = self.dim
        jx = self._chart_jets(x, self._u, self._q, order)
        jy = self._chart_jets(y, self._v, self._p, order)
        jets = [np.asarray(jx[0] @ jy[0])]
        for k in range(1, order + 1):
            t = np.zeros((2 * d,) * k)
            for idx in itertools.product(range(2 * d), repeat=k):
                a = tuple(i for i in idx if i < d)
                b = tuple(i - d for i in idx if i >= d)
                if len(a) > order or len(b) > order:
                    continue
                t[idx] = np.tensordot(jx[len(a)][a], jy[len(b)][b], axes=(0, 0))
            jets.append(t)
        return jets


_REGISTRY = {
    "model_fold": ModelFold,
    "one_sided_fold": OneSidedFold,
    "circle_extension": CircleExtension,
    "sphere_extension": SphereExtension,
    "curve_avg": CurveAveraging,
    "dot_product": DotProduct,
}

BUILTIN_PHASES = tuple(sorted(_REGISTRY))


def make_phase(name: str, **params) -> PhaseFunction:
    """Instantiate a built-in phase by registry name."""
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown phase {name!r}; built-ins: {', '.join(BUILTIN_PHASES)}") from None
    return cls(**params)


class AffinePrecomposedPhase(PhaseFunction):
    """phi(x, y) = base(A_L x + b_L, A_R y + b_R), with exact chain-rule jets."""

    def __init__(self, base: PhaseFunction, A_L, b_L, A_R, b_R, domain=None,
                 name=None, subtract_y_slice=False, x_anchor=None):
        d = base.dim
        self.base = base
        self.A_L = np.asarray(A_L, float).reshape(d, d)
        self.b_L = np.asarray(b_L, float).reshape(d)
        self.A_R = np.asarray(A_R, float).reshape(d, d)
        self.b_R = np.asarray(b_R, float).reshape(d)
        # subtracting the pure-y slice phi(x_anchor, .) kills every pure-y
        # derivative at the anchor without touching mixed derivatives
        self.subtract_y_slice = subtract_y_slice
        self.x_anchor = np.zeros(d) if x_anchor is None else np.asarray(x_anchor, float)
        if domain is None:
            domain = base.domain
        super().__init__(name or f"{base.name}@affine", d, domain,
                         base_point=(np.zeros(d), np.zeros(d)), recenter=False)

    def _map(self, x, y):
        return x @ self.A_L.T + self.b_L, y @ self.A_R.T + self.b_R

    def _value(self, x, y):
        xm, ym = self._map(x, y)
        v = self.base.value(xm, ym)
        if self.subtract_y_slice:
            xa, ya = self._map(np.broadcast_to(self.x_anchor, x.shape), y)
            v = v - self.base.value(xa, ya)
        return v

    def _gradients(self, x, y):
        xm, ym = self._map(x, y)
        gx, gy = self.base.gradients(xm, ym)
        gx = gx @ self.A_L
        gy = gy @ self.A_R
        if self.subtract_y_slice:
            xa, ya = self._map(np.broadcast_to(self.x_anchor, np.shape(x)), y)
            _, gys = self.base.gradients(xa, ya)
            gy = gy - gys @ self.A_R
        return gx, gy

    def _mixed_hessian(self, x, y):
        xm, ym = self._map(x, y)
        m = self.base.mixed_hessian(xm, ym)
        return np.einsum("ki,...kl,lj->...ij", self.A_L, m, self.A_R)

    def _jet(self, x, y, order):
        d = self.dim
        xm, ym = self._map(x[None, :], y[None, :])
        base_jets = self.base.jet(xm[0], ym[0], order)
        J = np.zeros((2 * d, 2 * d))
        J[:d, :d] = self.A_L
        J[d:, d:] = self.A_R
        jets = [np.asarray(base_jets[0])]
        if order >= 1:
            jets.append(J.T @ base_jets[1])
        if order >= 2:
            jets.append(J.T @ base_jets[2] @ J)
        if order >= 3:
            jets.append(np.einsum("abc,ai,bj,ck->ijk", base_jets[3], J, J, J))
        if self.subtract_y_slice:
            xa = self.x_anchor
            xam, yam = self._map(xa[None, :], y[None, :])
            sj = self.base.jet(xam[0], yam[0], order)
            R = self.A_R
            jets[0] = jets[0] - sj[0]
            if order >= 1:
                g = R.T @ sj[1][d:]
                corr = np.zeros(2 * d)
                corr[d:] = g
                jets[1] = jets[1] - corr
            if order >= 2:
                h = R.T @ sj[2][d:, d:] @ R
                corr = np.zeros((2 * d, 2 * d))
                corr[d:, d:] = h
                jets[2] = jets[2] - corr
            if order >= 3:
                t = np.einsum("abc,ai,bj,ck->ijk", sj[3][d:, d:, d:], R, R, R)
                corr = np.zeros((2 * d,) * 3)
                corr[d:, d:, d:] = t
                jets[3] = jets[3] - corr
        return jets
