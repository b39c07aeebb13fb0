"""Matrix-free application of the oscillatory kernel exp(i lam phi) chi, its
adjoint, the fold-distance localized pieces, and a dense assembler for
small-instance oracles.

Strategies, chosen once per (config, grid pair):

* ``dense``    - kernel cached as a matrix when it fits the cache cap;
* ``factored`` - exact algebraic factorization of the kernel sum for the
  model fold (d = 2) and the curve-averaging phase (d = 3), turning the
  O(Nx * Ny) sum into a few small matrix products;
* ``stream``   - chunked direct summation (any phase, any cutoff).

All strategies evaluate the same sum and agree to rounding error; summation
order is fixed by construction, so results are reproducible and independent
of any sweep-level parallelism.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .boxes import Box
from .cutoffs import box_bump, bump, mother_bump, operator_fences, plateau_bump
from .errors import CapacityError, ConfigError, ShapeError
from .geometry import propose_brackets, solve_fold_surface
from .grids import DiscreteFunction, GridSpec
from .phases import PhaseFunction

DENSE_CACHE_CAP = int(float(os.environ.get("OSCILLAB_DENSE_CAP", 1.6e7)))
DENSE_ASSEMBLE_CAP = int(4e7)
STREAM_CHUNK = int(2e6)


# --------------------------------------------------------------------------
# localization
# --------------------------------------------------------------------------

class TabulatedFoldSolver:
    """Fold-surface evaluator g(x, y_rest) for phases without a closed form:
    multilinear table as initial guess, polished by vectorized Newton on det,
    so evaluations meet a 1e-10 residual budget without huge tables."""

    def __init__(self, phase: PhaseFunction, coord: int, x_box: Box, y_box: Box,
                 nodes_per_axis: int = 9):
        self.phase = phase
        self.coord = coord
        d = phase.dim
        rest = [k for k in range(d) if k != coord]
        axes = [np.linspace(x_box.lo[k], x_box.hi[k], nodes_per_axis) for k in range(d)]
        axes += [np.linspace(y_box.lo[k], y_box.hi[k], nodes_per_axis) for k in rest]
        self.axes = axes
        self.rest = rest
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        lo, hi = y_box.lo[coord], y_box.hi[coord]
        table = np.empty(pts.shape[0])
        for i, row in enumerate(pts):
            x, yr = row[:d], row[d:]
            brs = propose_brackets(phase, x, yr, coord, lo, hi)
            if len(brs) != 1:
                raise ConfigError(
                    "fold surface not uniquely solvable over the tabulation box")
            table[i] = solve_fold_surface(phase, x, yr, brs[0], coordinate=coord)
        self.table = table.reshape([len(a) for a in axes])

    def _interp(self, pts: np.ndarray) -> np.ndarray:
        # multilinear interpolation on the rectilinear table
        idxw = []
        for k, ax in enumerate(self.axes):
            u = np.clip(pts[:, k], ax[0], ax[-1])
            j = np.clip(np.searchsorted(ax, u) - 1, 0, len(ax) - 2)
            w = (u - ax[j]) / (ax[j + 1] - ax[j])
            idxw.append((j, w))
        out = np.zeros(pts.shape[0])
        m = len(self.axes)
        for corner in range(1 << m):
            wgt = np.ones(pts.shape[0])
            idx = []
            for k in range(m):
                j, w = idxw[k]
                if corner >> k & 1:
                    idx.append(j + 1)
                    wgt = wgt * w
                else:
                    idx.append(j)
                    wgt = wgt * (1 - w)
            out += wgt * self.table[tuple(idx)]
        return out

    def __call__(self, x: np.ndarray, y_rest: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        y_rest = np.atleast_2d(np.asarray(y_rest, float))
        pts = np.concatenate([x, y_rest], axis=-1)
        g = self._interp(pts)
        d = self.phase.dim
        h = 1e-6
        for _ in range(3):
            y = np.empty((pts.shape[0], d))
            y[:, self.rest] = y_rest
            y[:, self.coord] = g
            from .geometry import det_mixed_hessian
            f0 = det_mixed_hessian(self.phase, x, y)
            y[:, self.coord] = g + h
            f1 = det_mixed_hessian(self.phase, x, y)
            y[:, self.coord] = g - h
            f2 = det_mixed_hessian(self.phase, x, y)
            slope = (f1 - f2) / (2 * h)
            step = np.where(slope != 0, f0 / np.where(slope == 0, 1.0, slope), 0.0)
            g = g - step
        return g


def fold_distance(phase: PhaseFunction, solver, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed offset between y and the fold surface over (x, remaining y)."""
    s = phase.fold_offset(x, y)
    if s is not None:
        return s
    if solver is None:
        raise ConfigError(f"phase {phase.name} has no fold evaluator for localization")
    coord = solver.coord
    shp = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
    d = phase.dim
    xb = np.broadcast_to(x, shp + (d,)).reshape(-1, d)
    yb = np.broadcast_to(y, shp + (d,)).reshape(-1, d)
    g = solver(xb, yb[:, solver.rest])
    return (yb[:, coord] - g).reshape(shp)


@dataclass
class OperatorConfig:
    """Frequency, cutoff and optional fold localization for one operator."""

    phase: PhaseFunction
    lam: float
    x_box: Box | None = None
    y_box: Box | None = None
    cutoff: Callable | None = None        # full chi(x, y); None = tensor bumps
    localization: tuple | None = None     # None | ("level", l) | ("near_fold",)
    cutoff_scale: float = 1.0
    plateau: float = 0.0                  # flat fraction of the tensor bump
    _fold_solver: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if self.x_box is None:
            self.x_box = self.phase.domain[0]
        if self.y_box is None:
            self.y_box = self.phase.domain[1]
        if self.localization is not None:
            kind = self.localization[0]
            if kind == "level":
                l = self.localization[1]
                if self.lam < 2:
                    raise ConfigError("localization requires lam >= 2")
                if 2 ** l > self.lam ** (1 / 3):
                    raise ConfigError(
                        f"level {l} outside the cutoff range 2^l <= lam^(1/3)")
            elif kind != "near_fold":
                raise ConfigError(f"unknown localization {self.localization!r}")

    # -- cutoff pieces -------------------------------------------------------
    @property
    def tensor_cutoff(self) -> bool:
        return self.cutoff is None

    def chi_x(self, pts):
        return self.cutoff_scale * box_bump(self.x_box, self.plateau)(pts)

    def chi_y(self, pts):
        return box_bump(self.y_box, self.plateau)(pts)

    def chi(self, x, y):
        if self.cutoff is not None:
            return self.cutoff_scale * np.asarray(self.cutoff(x, y))
        return self.chi_x(x) * self.chi_y(y)

    def fold_solver(self):
        if self.phase.fold_offset(self.x_box.center[None, :],
                                  self.y_box.center[None, :]) is not None:
            return None
        if self._fold_solver is None:
            coord = self.phase.fold_coordinate
            if coord is None:
                from .geometry import _detect_fold_coordinate
                coord, _ = _detect_fold_coordinate(
                    self.phase, self.x_box.center, self.y_box)
                if coord is None:
                    raise ConfigError("no solvable fold surface for localization")
            self._fold_solver = TabulatedFoldSolver(self.phase, coord,
                                                    self.x_box, self.y_box)
        return self._fold_solver

    def localization_weight(self, x, y):
        """Cutoff factor in the fold distance; 1.0 when not localized."""
        if self.localization is None:
            return None
        s = fold_distance(self.phase, self.fold_solver(), x, y)
        fences = operator_fences(self.lam)
        if self.localization[0] == "near_fold":
            return mother_bump(fences[-1] * s)
        l = self.localization[1]
        return mother_bump(fences[l] * s) - mother_bump(fences[l + 1] * s)

    def kernel_block(self, x_pts: np.ndarray, y_pts: np.ndarray) -> np.ndarray:
        """Kernel values exp(i lam phi) chi [loc] on an (nx, ny) block of point
        pairs (no quadrature weight)."""
        xb = x_pts[:, None, :]
        yb = y_pts[None, :, :]
        v = self.phase.value(xb, yb)
        k = np.exp(1j * self.lam * v) * self.chi(xb, yb)
        w = self.localization_weight(xb, yb)
        if w is not None:
            k = k * w
        return k


# --------------------------------------------------------------------------
# applicators
# --------------------------------------------------------------------------

class Applicator:
    """Binds an OperatorConfig to a grid pair and applies T / T*."""

    def __init__(self, config: OperatorConfig, x_grid: GridSpec, y_grid: GridSpec):
        if x_grid.dim != config.phase.dim or y_grid.dim != config.phase.dim:
            raise ShapeError("grid dimension does not match the phase")
        self.config = config
        self.x_grid = x_grid
        self.y_grid = y_grid
        self.strategy = self._pick_strategy()
        self._dense = None
        self._tables = None

    def _pick_strategy(self) -> str:
        n_entries = self.x_grid.size * self.y_grid.size
        ph = self.config.phase
        if ph.name == "model_fold" and ph.dim == 2 and self.config.tensor_cutoff:
            return "factored_model"
        if ph.name == "curve_avg" and self.config.tensor_cutoff:
            return "factored_curve"
        if ph.translation_invariant and ph.dim == 1 and self.config.tensor_cutoff:
            hx = (self.x_grid.box.hi[0] - self.x_grid.box.lo[0]) / self.x_grid.shape[0]
            hy = (self.y_grid.box.hi[0] - self.y_grid.box.lo[0]) / self.y_grid.shape[0]
            if abs(hx - hy) <= 1e-12 * hy:
                return "toeplitz"
        if n_entries <= DENSE_CACHE_CAP:
            return "dense"
        return "stream"

    # -- dense ---------------------------------------------------------------
    def _dense_matrix(self) -> np.ndarray:
        if self._dense is None:
            self._dense = assemble_dense(self.config, self.x_grid, self.y_grid,
                                         cap=max(DENSE_ASSEMBLE_CAP, DENSE_CACHE_CAP))
        return self._dense

    # -- factored model fold ---------------------------------------------------
    def _model_tables(self):
        if self._tables is None:
            lam = self.config.lam
            x1, x2 = self.x_grid.axes
            y1, y2 = self.y_grid.axes
            M1 = np.exp(1j * lam * np.outer(x1, y1))
            P2 = np.exp(1j * lam * np.outer(x2, y1**2))
            K2 = np.exp(1j * lam * (x2[:, None] - y2[None, :]) ** 3 / 6.0)
            if self.config.localization is not None:
                # fold distance for this phase depends on (x2, y2) only
                w = self.config.localization_weight(
                    np.stack([np.zeros_like(x2), x2], axis=-1)[:, None, :],
                    np.stack([np.zeros_like(y2), y2], axis=-1)[None, :, :])
                K2 = K2 * w
            sx, sy = self.config.phase.linear_shifts
            mx = [np.exp(-1j * lam * sx[0] * x1), np.exp(-1j * lam * sx[1] * x2)]
            my = [np.exp(-1j * lam * sy[0] * y1), np.exp(-1j * lam * sy[1] * y2)]
            pl = self.config.plateau
            cx = [box_bump_axis(self.config.x_box, 0, pl)(x1) * self.config.cutoff_scale,
                  box_bump_axis(self.config.x_box, 1, pl)(x2)]
            cy = [box_bump_axis(self.config.y_box, 0, pl)(y1),
                  box_bump_axis(self.config.y_box, 1, pl)(y2)]
            self._tables = (M1, P2, K2, mx, my, cx, cy)
        return self._tables

    def _apply_model(self, f: np.ndarray) -> np.ndarray:
        M1, P2, K2, mx, my, cx, cy = self._model_tables()
        F = f.reshape(self.y_grid.shape)
        F = F * (cy[0] * my[0])[:, None] * (cy[1] * my[1])[None, :]
        G = K2 @ F.T                      # (nx2, ny1)
        H = P2 * G                        # modulation by x2 y1^2
        out = M1 @ H.T                    # (nx1, nx2)
        out *= (cx[0] * mx[0])[:, None] * (cx[1] * mx[1])[None, :]
        return (out * self.y_grid.cell_volume).ravel()

    def _apply_model_adjoint(self, g: np.ndarray) -> np.ndarray:
        M1, P2, K2, mx, my, cx, cy = self._model_tables()
        G = g.reshape(self.x_grid.shape)
        G = G * (cx[0] * np.conj(mx[0]))[:, None] * (cx[1] * np.conj(mx[1]))[None, :]
        W = M1.conj().T @ G               # (ny1, nx2)
        W = W * P2.conj().T               # (ny1, nx2)
        out = W @ K2.conj()               # (ny1, ny2)
        out *= (cy[0] * np.conj(my[0]))[:, None] * (cy[1] * np.conj(my[1]))[None, :]
        return (out * self.x_grid.cell_volume).ravel()

    # -- factored curve averaging ---------------------------------------------
    def _curve_tables(self):
        if self._tables is None:
            lam = self.config.lam
            x1, x2, x3 = self.x_grid.axes
            y1, y2, y3 = self.y_grid.axes
            M2 = np.exp(1j * lam * np.outer(x2, y2))
            M3 = np.exp(1j * lam * np.outer(x3, y3))
            sx, sy = self.config.phase.linear_shifts
            mx = [np.exp(-1j * lam * sx[k] * ax) for k, ax in enumerate((x1, x2, x3))]
            my = [np.exp(-1j * lam * sy[k] * ay) for k, ay in enumerate((y1, y2, y3))]
            pl = self.config.plateau
            cx = [box_bump_axis(self.config.x_box, k, pl)(ax)
                  for k, ax in enumerate((x1, x2, x3))]
            cx[0] = cx[0] * self.config.cutoff_scale
            cy = [box_bump_axis(self.config.y_box, k, pl)(ay)
                  for k, ay in enumerate((y1, y2, y3))]
            # inner factor exp(i lam C(x1, y)) [loc] chi_y on (ny1, ny2, ny3), per x1
            Y1, Y2, Y3 = np.meshgrid(y1, y2, y3, indexing="ij")
            CY = (cy[0] * my[0])[:, None, None] * (cy[1] * my[1])[None, :, None] \
                * (cy[2] * my[2])[None, None, :]
            inner = []
            for a in x1:
                w = a - Y1
                c = Y2 * w**2 / 2.0 + Y3 * w**3 / 6.0
                blk = np.exp(1j * lam * c) * CY
                if self.config.localization is not None:
                    s = Y2 + Y3 * w
                    fences = operator_fences(lam)
                    if self.config.localization[0] == "near_fold":
                        blk = blk * mother_bump(fences[-1] * s)
                    else:
                        l = self.config.localization[1]
                        blk = blk * (mother_bump(fences[l] * s)
                                     - mother_bump(fences[l + 1] * s))
                inner.append(blk)
            self._tables = (M2, M3, mx, cx, inner)
        return self._tables

    def _apply_curve(self, f: np.ndarray) -> np.ndarray:
        M2, M3, mx, cx, inner = self._curve_tables()
        F = f.reshape(self.y_grid.shape)
        nx = self.x_grid.shape
        out = np.empty(nx, dtype=complex)
        for i in range(nx[0]):
            A = np.sum(inner[i] * F, axis=0)      # (ny2, ny3)
            out[i] = M2 @ A @ M3.T
        out *= (cx[0] * mx[0])[:, None, None] * (cx[1] * mx[1])[None, :, None] \
            * (cx[2] * mx[2])[None, None, :]
        return (out * self.y_grid.cell_volume).ravel()

    def _apply_curve_adjoint(self, g: np.ndarray) -> np.ndarray:
        M2, M3, mx, cx, inner = self._curve_tables()
        G = g.reshape(self.x_grid.shape)
        G = G * (cx[0] * np.conj(mx[0]))[:, None, None] \
            * (cx[1] * np.conj(mx[1]))[None, :, None] \
            * (cx[2] * np.conj(mx[2]))[None, None, :]
        ny = self.y_grid.shape
        out = np.zeros(ny, dtype=complex)
        for i in range(self.x_grid.shape[0]):
            A = M2.conj().T @ G[i] @ M3.conj()    # (ny2, ny3)
            out += inner[i].conj() * A[None, :, :]
        return (out * self.x_grid.cell_volume).ravel()

    # -- Toeplitz (1d translation-invariant kernel) --------------------------
    def _toeplitz_tables(self):
        if self._tables is None:
            nx, ny = self.x_grid.size, self.y_grid.size
            x0 = self.x_grid.axis(0)[0]
            y0 = self.y_grid.axis(0)[0]
            h = self.x_grid.axis(0)[1] - self.x_grid.axis(0)[0] if nx > 1 \
                else self.y_grid.axis(0)[1] - self.y_grid.axis(0)[0]
            # kernel symbol on the difference lattice x_i - y_j
            k = np.arange(-(ny - 1), nx)
            u = (x0 - y0) + k * h
            xp = (u + y0)[:, None]
            yp = np.full_like(xp, y0)
            v = self.config.phase.value(xp, yp)
            sym = np.exp(1j * self.config.lam * v)
            w = self.config.localization_weight(xp, yp)
            if w is not None:
                sym = sym * w
            size = 1 << int(np.ceil(np.log2(nx + ny - 1)))
            fsym = np.fft.fft(sym, size)
            rsym = np.fft.fft(sym[::-1].conj(), size)
            cx = self.config.chi_x(self.x_grid.nodes)
            cy = self.config.chi_y(self.y_grid.nodes)
            self._tables = (fsym, rsym, size, cx, cy)
        return self._tables

    def _apply_toeplitz(self, f: np.ndarray) -> np.ndarray:
        fsym, rsym, size, cx, cy = self._toeplitz_tables()
        nx, ny = self.x_grid.size, self.y_grid.size
        fw = f * cy * self.y_grid.cell_volume
        conv = np.fft.ifft(fsym * np.fft.fft(fw, size))
        return conv[ny - 1: ny - 1 + nx] * cx

    def _apply_toeplitz_adjoint(self, g: np.ndarray) -> np.ndarray:
        fsym, rsym, size, cx, cy = self._toeplitz_tables()
        nx, ny = self.x_grid.size, self.y_grid.size
        gw = g * cx * self.x_grid.cell_volume
        conv = np.fft.ifft(rsym * np.fft.fft(gw, size))
        return conv[nx - 1: nx - 1 + ny] * cy

    # -- streamed ----------------------------------------------------------
    def _apply_stream(self, f: np.ndarray) -> np.ndarray:
        xs = self.x_grid.nodes
        ys = self.y_grid.nodes
        fw = f * self.y_grid.cell_volume
        out = np.empty(self.x_grid.size, dtype=complex)
        step = max(1, STREAM_CHUNK // max(1, self.y_grid.size))
        for i0 in range(0, xs.shape[0], step):
            blk = self.config.kernel_block(xs[i0:i0 + step], ys)
            out[i0:i0 + step] = blk @ fw
        return out

    def _apply_stream_adjoint(self, g: np.ndarray) -> np.ndarray:
        xs = self.x_grid.nodes
        ys = self.y_grid.nodes
        gw = g * self.x_grid.cell_volume
        out = np.zeros(self.y_grid.size, dtype=complex)
        step = max(1, STREAM_CHUNK // max(1, self.y_grid.size))
        for i0 in range(0, xs.shape[0], step):
            blk = self.config.kernel_block(xs[i0:i0 + step], ys)
            out += blk.conj().T @ gw[i0:i0 + step]
        return out

    # -- public -------------------------------------------------------------
    def apply(self, f: np.ndarray) -> np.ndarray:
        if self.strategy == "dense":
            return self._dense_matrix() @ f
        if self.strategy == "factored_model":
            return self._apply_model(f)
        if self.strategy == "factored_curve":
            return self._apply_curve(f)
        if self.strategy == "toeplitz":
            return self._apply_toeplitz(f)
        return self._apply_stream(f)

    def apply_adjoint(self, g: np.ndarray) -> np.ndarray:
        if self.strategy == "dense":
            m = self._dense_matrix()
            scale = self.x_grid.cell_volume / self.y_grid.cell_volume
            return (m.conj().T @ g) * scale
        if self.strategy == "factored_model":
            return self._apply_model_adjoint(g)
        if self.strategy == "factored_curve":
            return self._apply_curve_adjoint(g)
        if self.strategy == "toeplitz":
            return self._apply_toeplitz_adjoint(g)
        return self._apply_stream_adjoint(g)


def box_bump_axis(box: Box, k: int, plateau: float = 0.0):
    lo, hi = box.lo[k], box.hi[k]
    c, s = (lo + hi) / 2.0, hi - lo

    def chi(u):
        t = 2.0 * (np.asarray(u) - c) / s
        if plateau > 0:
            return plateau_bump(t, plateau)
        return bump(t)

    return chi


def apply_operator(config: OperatorConfig, f: DiscreteFunction,
                   x_grid: GridSpec) -> DiscreteFunction:
    """T f on the x grid.  f may live on any sub-grid of the phase's y domain
    (it is treated as zero outside its own grid box)."""
    _check_grid_box(f.grid, config.phase.domain[1])
    app = Applicator(config, x_grid, f.grid)
    return DiscreteFunction(x_grid, app.apply(f.values))


def apply_adjoint(config: OperatorConfig, g: DiscreteFunction,
                  y_grid: GridSpec) -> DiscreteFunction:
    """T* g on the y grid (adjoint in the cell-volume weighted inner product)."""
    _check_grid_box(g.grid, config.phase.domain[0])
    app = Applicator(config, g.grid, y_grid)
    return DiscreteFunction(y_grid, app.apply_adjoint(g.values))


def _check_grid_box(grid: GridSpec, domain: Box):
    if grid.dim != domain.dim:
        raise ShapeError(f"{grid.dim}-dimensional grid under a {domain.dim}-dimensional phase")
    pad = 0.51 * float(np.max(domain.sides))
    if not (domain.contains(np.asarray(grid.box.lo), pad)
            and domain.contains(np.asarray(grid.box.hi), pad)):
        raise ShapeError(f"grid box {grid.box} far outside phase domain {domain}")


def assemble_dense(config: OperatorConfig, x_grid: GridSpec, y_grid: GridSpec,
                   cap: int = DENSE_ASSEMBLE_CAP) -> np.ndarray:
    """Explicit kernel matrix M with (T f) = M f (the y cell volume is folded
    in).  Intended for small-instance oracles."""
    n_entries = x_grid.size * y_grid.size
    if n_entries > cap:
        raise CapacityError(f"dense kernel needs {n_entries} entries, cap {cap}")
    xs = x_grid.nodes
    ys = y_grid.nodes
    rows = []
    step = max(1, STREAM_CHUNK // max(1, y_grid.size))
    for i0 in range(0, xs.shape[0], step):
        rows.append(config.kernel_block(xs[i0:i0 + step], ys))
    return np.concatenate(rows, axis=0) * y_grid.cell_volume


def inner(u: DiscreteFunction, v: DiscreteFunction) -> complex:
    """Discrete weighted inner product sum(u conj(v)) * cell_volume."""
    if u.grid.size != v.grid.size:
        raise ShapeError("inner product of functions on different grids")
    return complex(np.sum(u.values * np.conj(v.values)) * u.grid.cell_volume)
