"""Fold geometry: fold-condition checks, fold-surface solving, curvature of
the fiber surfaces, and reduction of a phase to normal form at a fold point.

The fold variety is {(x, y): det phi_xy = 0}.  At a fold point the mixed
Hessian has a one-dimensional kernel (direction b in y-space) and cokernel
(direction a in x-space); the two fold conditions ask the directional
derivatives of det phi_xy along b (in y) and along a (in x) to be nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box
from .errors import (AmbiguityError, CorankError, DomainError,
                     FoldDegeneracyError, NoRootError, PreconditionError)
from .phases import EPS, PhaseFunction

MARGIN_THRESHOLD = 1e-4      # "nonzero" cutoff in normalized coordinates
ZERO_RESIDUAL_TOL = 1e-8
CORANK_RTOL = 1e-6


def eval_phase_derivatives(phase: PhaseFunction, x, y, order: int) -> np.ndarray:
    """All partial derivatives of total order ``order`` at (x, y), as a
    symmetric tensor over the combined variable z = (x, y)."""
    x = np.asarray(x, float).reshape(phase.dim)
    y = np.asarray(y, float).reshape(phase.dim)
    if not phase.in_domain(x, y):
        raise DomainError(f"point outside domain of {phase.name}: x={x}, y={y}")
    return phase.jet(x, y, order)[order]


def det_mixed_hessian(phase: PhaseFunction, x, y):
    """det of the d x d matrix d/dx_i d/dy_j phi (batched)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    m = phase.mixed_hessian(x, y)
    if phase.dim == 1:
        return m[..., 0, 0]
    return np.linalg.det(m)


def _sign_fix(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def kernel_cokernel(phase: PhaseFunction, x, y, corank_rtol: float = CORANK_RTOL):
    """Unit kernel/cokernel directions (b, a) of the mixed Hessian via SVD,
    plus its singular values.  Raises CorankError if the rank drops below
    d - 1."""
    m = np.atleast_2d(phase.mixed_hessian(x, y))
    u, s, vt = np.linalg.svd(m)
    d = phase.dim
    if d > 1 and s[d - 2] <= corank_rtol * max(s[0], 1e-300):
        raise CorankError(f"mixed Hessian corank > 1 at x={x}, y={y}: singular values {s}")
    b = _sign_fix(vt[d - 1])
    a = _sign_fix(u[:, d - 1])
    return b, a, s


@dataclass
class FoldReport:
    point: tuple
    det_value: float
    applicable: bool
    left_fold_ok: bool | None
    right_fold_ok: bool | None
    curvature_ok: bool | None
    witness_b: np.ndarray | None
    witness_a: np.ndarray | None
    margin: float


def _directional_det_derivative(phase, x, y, direction, side: str) -> float:
    h = EPS ** (1.0 / 3)
    d = np.asarray(direction, float)
    if side == "y":
        lo = det_mixed_hessian(phase, x, y - h * d)
        hi = det_mixed_hessian(phase, x, y + h * d)
    else:
        lo = det_mixed_hessian(phase, x - h * d, y)
        hi = det_mixed_hessian(phase, x + h * d, y)
    return float((hi - lo) / (2 * h))


def check_fold_conditions(phase: PhaseFunction, x, y, tol: float = 1e-6,
                          margin_threshold: float = MARGIN_THRESHOLD) -> FoldReport:
    """Evaluate the two fold conditions at a point on (or near) the fold
    variety.  Points with |det| > tol are reported not applicable."""
    x = np.asarray(x, float).reshape(phase.dim)
    y = np.asarray(y, float).reshape(phase.dim)
    det = float(det_mixed_hessian(phase, x, y))
    if abs(det) > tol:
        return FoldReport((tuple(x), tuple(y)), det, False, None, None, None,
                          None, None, 0.0)
    b, a, _ = kernel_cokernel(phase, x, y)
    dy = _directional_det_derivative(phase, x, y, b, "y")
    dx = _directional_det_derivative(phase, x, y, a, "x")
    return FoldReport(
        point=(tuple(x), tuple(y)),
        det_value=det,
        applicable=True,
        left_fold_ok=abs(dy) > margin_threshold,
        right_fold_ok=abs(dx) > margin_threshold,
        curvature_ok=None,
        witness_b=b,
        witness_a=a,
        margin=min(abs(dy), abs(dx)),
    )


def _compose_y(y_rest: np.ndarray, y_sol: float, coord: int, d: int) -> np.ndarray:
    y = np.empty(d)
    y[:coord] = y_rest[:coord]
    y[coord] = y_sol
    y[coord + 1:] = y_rest[coord:]
    return y


def propose_brackets(phase: PhaseFunction, x, y_rest, coord: int,
                     lo: float, hi: float, scan: int = 32) -> list[tuple[float, float]]:
    """Scan ``scan`` equispaced values of the solved coordinate and return the
    sign-change brackets of det phi_xy."""
    x = np.asarray(x, float)
    ts = np.linspace(lo, hi, scan)
    ys = np.stack([_compose_y(np.asarray(y_rest, float), t, coord, phase.dim) for t in ts])
    dets = det_mixed_hessian(phase, x, ys)
    out = []
    for i in range(scan - 1):
        if dets[i] * dets[i + 1] < 0:
            out.append((ts[i], ts[i + 1]))
        elif dets[i] == 0.0 and 0 < i and dets[i - 1] * dets[i + 1] < 0:
            # isolated exact zero at a scan node; plateaus of zeros are a
            # degenerate direction and propose nothing
            out.append((ts[i - 1], ts[i + 1]))
    return out


def solve_fold_surface(phase: PhaseFunction, x, y_prime, bracket,
                       coordinate: int | None = None, rtol: float = 1e-12) -> float:
    """Solve det phi_xy = 0 for the fold coordinate given a sign-change
    bracket; bisection followed by a Newton polish."""
    coord = phase.fold_coordinate if coordinate is None else coordinate
    if coord is None:
        raise PreconditionError(f"phase {phase.name} exposes no fold coordinate")
    x = np.asarray(x, float).reshape(phase.dim)
    y_rest = np.asarray(y_prime, float).reshape(phase.dim - 1) if phase.dim > 1 \
        else np.zeros(0)
    lo, hi = float(bracket[0]), float(bracket[1])

    def det_at(t):
        return float(det_mixed_hessian(phase, x, _compose_y(y_rest, t, coord, phase.dim)))

    flo, fhi = det_at(lo), det_at(hi)
    scale = max(abs(flo), abs(fhi), 1e-300)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise NoRootError(f"no sign change of det over bracket ({lo}, {hi})")
    # ambiguity guard: a fold root is simple, so a fine scan must show exactly
    # one sign change
    ts = np.linspace(lo, hi, 32)
    vals = np.array([det_at(t) for t in ts])
    changes = int(np.sum(np.signbit(vals[:-1]) != np.signbit(vals[1:])))
    if changes > 1:
        raise AmbiguityError(f"{changes} roots inside bracket ({lo}, {hi})")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fm = det_at(mid)
        if fm == 0.0:
            lo = hi = mid
            break
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    h = 1e-7 * max(1.0, abs(t))
    for _ in range(4):
        f0 = det_at(t)
        if abs(f0) <= rtol * scale:
            break
        df = (det_at(t + h) - det_at(t - h)) / (2 * h)
        if df == 0.0:
            break
        t = t - f0 / df
    return float(t)


@dataclass
class CurvatureReport:
    status: str            # "definite" | "semi_definite" | "indefinite" | "not_applicable"
    sign: int              # sign of the (nonzero) eigenvalues, 0 if mixed
    margin: float          # min |eigenvalue|; for semi_definite the min nonzero one
    samples: int
    zero_directions: int = 0

    @property
    def ok(self) -> bool:
        return self.status in ("definite", "not_applicable")


def check_curvature_condition(phase: PhaseFunction, x, samples: int = 9,
                              fold_tol: float = 1e-8) -> CurvatureReport:
    """Definiteness of the second fundamental form of the fiber surface over
    x, sampled at ``samples`` points of the fold surface.

    In one dimension the fiber "surface" is a point and the condition is
    vacuous.  If the fold variety misses the domain box the condition is not
    applicable.
    """
    d = phase.dim
    x = np.asarray(x, float).reshape(d)
    if d == 1:
        return CurvatureReport("not_applicable", 0, float("inf"), 0)
    coord = phase.fold_coordinate
    ybox = phase.domain[1]
    rest_idx = [k for k in range(d) if k != coord] if coord is not None else None
    if coord is None:
        coord, rest_idx = _detect_fold_coordinate(phase, x, ybox)
        if coord is None:
            return CurvatureReport("not_applicable", 0, 0.0, 0)

    # sample grid over the unsolved y coordinates, kept inside the box
    per_axis = max(2, int(round(samples ** (1.0 / (d - 1)))))
    axes = [np.linspace(ybox.lo[k] + 0.2 * (ybox.hi[k] - ybox.lo[k]),
                        ybox.hi[k] - 0.2 * (ybox.hi[k] - ybox.lo[k]), per_axis)
            for k in rest_idx]
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)

    eigs = []
    a_prev = None
    n_found = 0
    lo, hi = ybox.lo[coord], ybox.hi[coord]
    for y_rest in mesh:
        brs = propose_brackets(phase, x, y_rest, coord, lo, hi)
        if not brs:
            continue
        if len(brs) > 1:
            raise AmbiguityError("several fold sheets over one fiber point")
        g0 = solve_fold_surface(phase, x, y_rest, brs[0], coordinate=coord)
        y0 = _compose_y(y_rest, g0, coord, d)
        if abs(float(det_mixed_hessian(phase, x, y0))) > max(fold_tol, 1e-9):
            continue
        _, a, _ = kernel_cokernel(phase, x, y0)
        if a_prev is not None and float(a @ a_prev) < 0:
            a = -a
        a_prev = a
        n_found += 1

        def height(z):
            yz = _compose_y(z, _g_of(phase, x, z, coord, lo, hi, g0), coord, d)
            gx, _ = phase.gradients(x[None, :], yz[None, :])
            return float(gx[0] @ a)

        h = 1e-3
        m = d - 1
        hess = np.zeros((m, m))
        f0 = height(y_rest)
        for i in range(m):
            ei = np.zeros(m)
            ei[i] = h
            hess[i, i] = (height(y_rest + ei) + height(y_rest - ei) - 2 * f0) / h**2
            for j in range(i + 1, m):
                ej = np.zeros(m)
                ej[j] = h
                val = (height(y_rest + ei + ej) - height(y_rest + ei - ej)
                       - height(y_rest - ei + ej) + height(y_rest - ei - ej)) / (4 * h * h)
                hess[i, j] = hess[j, i] = val
        eigs.append(np.linalg.eigvalsh(hess))

    if n_found == 0:
        return CurvatureReport("not_applicable", 0, 0.0, 0)
    eigs = np.array(eigs)
    zero_tol = 1e-5 * max(1.0, float(np.max(np.abs(eigs))))
    nz = np.abs(eigs) > zero_tol
    n_zero_per_sample = np.sum(~nz, axis=1)
    if not np.any(nz):
        return CurvatureReport("indefinite", 0, 0.0, n_found, int(eigs.shape[1]))
    if np.all(eigs[nz] > 0):
        sign = +1
    elif np.all(eigs[nz] < 0):
        sign = -1
    else:
        return CurvatureReport("indefinite", 0, float(np.min(np.abs(eigs))), n_found)
    margin = float(np.min(np.abs(eigs[nz])))
    if np.all(n_zero_per_sample == 0):
        return CurvatureReport("definite", sign, margin, n_found)
    # ruled fibers: a fixed number of flat directions at every sample
    return CurvatureReport("semi_definite", sign, margin, n_found,
                           int(np.max(n_zero_per_sample)))


def _detect_fold_coordinate(phase: PhaseFunction, x, ybox: Box):
    """Pick the y-coordinate along which det changes sign transversally on the
    most probe fibers (exactly one bracket per fiber)."""
    d = phase.dim
    best, best_rest, best_hits = None, None, 0
    for cand in range(d - 1, -1, -1):
        rest = [k for k in range(d) if k != cand]
        axes = [np.linspace(ybox.lo[k] + 0.3 * (ybox.hi[k] - ybox.lo[k]),
                            ybox.hi[k] - 0.3 * (ybox.hi[k] - ybox.lo[k]), 3)
                for k in rest]
        probes = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1) \
            if rest else np.zeros((1, 0))
        hits = 0
        bad = False
        for yr in probes:
            brs = propose_brackets(phase, x, yr, cand, ybox.lo[cand], ybox.hi[cand])
            if len(brs) == 1:
                hits += 1
            elif len(brs) > 1:
                bad = True
                break
        if not bad and hits > best_hits:
            best, best_rest, best_hits = cand, rest, hits
    return best, best_rest


def _g_of(phase, x, y_rest, coord, lo, hi, near):
    """Fold solve used inside curvature stencils; brackets near a known root."""
    w = 0.05 * (hi - lo)
    try:
        return solve_fold_surface(phase, x, y_rest, (near - w, near + w), coordinate=coord)
    except NoRootError:
        brs = propose_brackets(phase, x, y_rest, coord, lo, hi)
        if not brs:
            raise
        return solve_fold_surface(phase, x, y_rest, brs[0], coordinate=coord)


class TransformedPhase(PhaseFunction):
    """base((x0 + A_L nu(x)), (y0 + A_R y)) - base(x0, y0 + A_R y), where
    nu(x) = (x' + x_d B x', x_d).  This realizes the normal-form change of
    variables; the final subtraction kills every pure-y derivative on the
    slice x = 0."""

    def __init__(self, base: PhaseFunction, A_L, x0, A_R, y0, B=None,
                 subtract=True, domain=None, name=None):
        d = base.dim
        self.base_phase = base
        self.A_L = np.asarray(A_L, float)
        self.A_R = np.asarray(A_R, float)
        self.x0 = np.asarray(x0, float)
        self.y0 = np.asarray(y0, float)
        self.B = None if B is None else np.asarray(B, float).reshape(d - 1, d - 1)
        self.subtract = subtract
        if domain is None:
            half = 0.45 * float(np.min(base.domain[0].sides)) / 2
            domain = (Box.cube(np.zeros(d), half), Box.cube(np.zeros(d), half))
        super().__init__(name or f"{base.name}@normal", d, domain,
                         base_point=(np.zeros(d), np.zeros(d)), recenter=False)

    # -- maps ---------------------------------------------------------------
    def map_x(self, x):
        x = np.asarray(x, float)
        if self.B is not None and self.dim > 1:
            xp = x[..., :-1] + x[..., -1:] * (x[..., :-1] @ self.B.T)
            x = np.concatenate([xp, x[..., -1:]], axis=-1)
        return self.x0 + x @ self.A_L.T

    def map_y(self, y):
        return self.y0 + np.asarray(y, float) @ self.A_R.T

    def inverse_map_x(self, xm):
        xm = np.asarray(xm, float)
        u = (xm - self.x0) @ np.linalg.inv(self.A_L).T
        if self.B is None or self.dim == 1:
            return u
        d = self.dim
        out = np.empty_like(u)
        out[..., -1] = u[..., -1]
        flat = u.reshape(-1, d)
        res = np.empty_like(flat)
        eye = np.eye(d - 1)
        for i, row in enumerate(flat):
            res[i, :-1] = np.linalg.solve(eye + row[-1] * self.B, row[:-1])
            res[i, -1] = row[-1]
        return res.reshape(u.shape)

    def inverse_map_y(self, ym):
        return (np.asarray(ym, float) - self.y0) @ np.linalg.inv(self.A_R).T

    def _nu_jacobian(self, x):
        d = self.dim
        J = np.eye(d)
        if self.B is not None and d > 1:
            J[:d - 1, :d - 1] += x[-1] * self.B
            J[:d - 1, d - 1] = self.B @ x[:-1]
        return J

    # -- evaluation ---------------------------------------------------------
    def _value(self, x, y):
        xm = self.map_x(x)
        ym = self.map_y(y)
        v = self.base_phase.value(xm, ym)
        if self.subtract:
            v = v - self.base_phase.value(np.broadcast_to(self.x0, np.shape(xm)), ym)
        return v

    def _gradients(self, x, y):
        xm = self.map_x(x)
        ym = self.map_y(y)
        gx, gy = self.base_phase.gradients(xm, ym)
        # d(map_x)/dx = A_L . Dnu(x)
        x = np.asarray(x, float)
        batch = np.broadcast_shapes(x.shape[:-1], np.shape(y)[:-1])
        d = self.dim
        xb = np.broadcast_to(x, batch + (d,)).reshape(-1, d)
        gxb = np.broadcast_to(gx, batch + (d,)).reshape(-1, d)
        out = np.empty_like(gxb)
        for i in range(xb.shape[0]):
            out[i] = (self.A_L @ self._nu_jacobian(xb[i])).T @ gxb[i]
        gxo = out.reshape(batch + (d,))
        gyo = gy @ self.A_R
        if self.subtract:
            _, gys = self.base_phase.gradients(np.broadcast_to(self.x0, np.shape(xm)), ym)
            gyo = gyo - gys @ self.A_R
        return gxo, gyo

    def _mixed_hessian(self, x, y):
        xm = self.map_x(x)
        ym = self.map_y(y)
        m = self.base_phase.mixed_hessian(xm, ym)
        x = np.asarray(x, float)
        batch = np.broadcast_shapes(x.shape[:-1], np.shape(y)[:-1])
        d = self.dim
        xb = np.broadcast_to(x, batch + (d,)).reshape(-1, d)
        mb = np.broadcast_to(m, batch + (d, d)).reshape(-1, d, d)
        out = np.empty_like(mb)
        for i in range(xb.shape[0]):
            out[i] = (self.A_L @ self._nu_jacobian(xb[i])).T @ mb[i] @ self.A_R
        return out.reshape(batch + (d, d))

    def _jet(self, x, y, order):
        d = self.dim
        xm = self.map_x(x[None, :])[0]
        ym = self.map_y(y[None, :])[0]
        bj = self.base_phase.jet(xm, ym, order)
        # combined-Jacobian blocks
        JL = self.A_L @ self._nu_jacobian(x)
        J = np.zeros((2 * d, 2 * d))
        J[:d, :d] = JL
        J[d:, d:] = self.A_R
        # second derivative of the x-map (only the B shear contributes)
        D2 = np.zeros((2 * d, 2 * d, 2 * d))
        if self.B is not None and d > 1:
            d2nu = np.zeros((d, d, d))
            for m in range(d - 1):
                for i in range(d - 1):
                    d2nu[m, i, d - 1] += self.B[m, i]
                    d2nu[m, d - 1, i] += self.B[m, i]
            D2[:d, :d, :d] = np.einsum("km,mij->kij", self.A_L, d2nu)
        jets = [np.asarray(bj[0])]
        if order >= 1:
            jets.append(J.T @ bj[1])
        if order >= 2:
            h = J.T @ bj[2] @ J
            if self.B is not None:
                h = h + np.einsum("k,kij->ij", bj[1], D2)
            jets.append(h)
        if order >= 3:
            t = np.einsum("abc,ai,bj,ck->ijk", bj[3], J, J, J)
            if self.B is not None:
                # f_kl (D2M[k,ij] J[l,m] + index permutations); D3M vanishes
                term = np.einsum("kl,kij,lm->ijm", bj[2], D2, J)
                t = t + term + np.transpose(term, (0, 2, 1)) + np.transpose(term, (2, 0, 1))
            jets.append(t)
        if self.subtract:
            x0m = self.x0
            sj = self.base_phase.jet(x0m, ym, order)
            R = self.A_R
            jets[0] = jets[0] - sj[0]
            if order >= 1:
                corr = np.zeros(2 * d)
                corr[d:] = R.T @ sj[1][d:]
                jets[1] = jets[1] - corr
            if order >= 2:
                corr = np.zeros((2 * d, 2 * d))
                corr[d:, d:] = R.T @ sj[2][d:, d:] @ R
                jets[2] = jets[2] - corr
            if order >= 3:
                corr = np.zeros((2 * d,) * 3)
                corr[d:, d:, d:] = np.einsum("abc,ai,bj,ck->ijk", sj[3][d:, d:, d:], R, R, R)
                jets[3] = jets[3] - corr
        return jets


def _rotation_to_last(v: np.ndarray) -> np.ndarray:
    """Orthogonal matrix with determinant +1 whose last column is v."""
    d = v.size
    cols = [v]
    for e in np.eye(d):
        w = e.copy()
        for c in cols:
            w = w - (w @ c) * c
        n = np.linalg.norm(w)
        if n > 1e-8:
            cols.append(w / n)
        if len(cols) == d:
            break
    rot = np.column_stack(cols[1:] + [v])
    if np.linalg.det(rot) < 0 and d > 1:
        rot[:, 0] = -rot[:, 0]
    return rot


@dataclass
class NormalForm:
    base_point: tuple
    rho_L: np.ndarray
    rho_R: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    B: np.ndarray | None
    phase: TransformedPhase
    residuals: dict = field(default_factory=dict)

    ZERO_KEYS = ("phi_x_yd", "phi_xd_y", "phi_xd_yd_yp", "phi_xd_yd_xp",
                 "phi_xp_yp_xd", "pure_y_jet")
    NONZERO_KEYS = ("det_xp_yp", "phi_xd_yd_yd", "phi_xd_xd_yd")

    @property
    def ok(self) -> bool:
        zeros = all(self.residuals[k] <= ZERO_RESIDUAL_TOL for k in self.ZERO_KEYS)
        nonzeros = all(self.residuals[k] >= MARGIN_THRESHOLD for k in self.NONZERO_KEYS)
        return zeros and nonzeros


def _normal_form_residuals(phase: TransformedPhase) -> dict:
    d = phase.dim
    O = np.zeros(d)
    j = phase.jet(O, O, 3)
    xd, yd = d - 1, 2 * d - 1
    xs = list(range(d))
    ys = list(range(d, 2 * d))
    xp = xs[:-1]
    yp = ys[:-1]
    res = {
        "phi_x_yd": max(abs(j[2][i, yd]) for i in xs),
        "phi_xd_y": max(abs(j[2][xd, k]) for k in ys),
        "phi_xd_yd_yd": abs(j[3][xd, yd, yd]),
        "phi_xd_xd_yd": abs(j[3][xd, xd, yd]),
        "phi_xd_yd_yp": max((abs(j[3][xd, yd, k]) for k in yp), default=0.0),
        "phi_xd_yd_xp": max((abs(j[3][xd, yd, i]) for i in xp), default=0.0),
        "phi_xp_yp_xd": max((abs(j[3][i, k, xd]) for i in xp for k in yp), default=0.0),
        "det_xp_yp": abs(np.linalg.det(j[2][np.ix_(xp, yp)])) if d > 1 else 1.0,
    }
    pure = abs(float(j[0]))
    pure = max(pure, max(abs(j[1][k]) for k in ys))
    pure = max(pure, max(abs(j[2][k, l]) for k in ys for l in ys))
    pure = max(pure, max(abs(j[3][k, l, m]) for k in ys for l in ys for m in ys))
    res["pure_y_jet"] = pure
    return res


def normalize_phase_at_point(phase: PhaseFunction, point, fold_tol: float = 1e-6,
                             denom_tol: float = 1e-6) -> NormalForm:
    """Rotations aligning kernel/cokernel with e_d, the two shears, the
    quadratic x-shear and the pure-y subtraction, with all residuals of the
    resulting phase evaluated at the origin."""
    x0 = np.asarray(point[0], float).reshape(phase.dim)
    y0 = np.asarray(point[1], float).reshape(phase.dim)
    d = phase.dim

    rep = check_fold_conditions(phase, x0, y0, tol=fold_tol)
    if not rep.applicable:
        raise PreconditionError(
            f"base point is not on the fold variety (det = {rep.det_value:.3e})")
    if not (rep.left_fold_ok and rep.right_fold_ok):
        raise PreconditionError(
            f"fold conditions fail at base point: left={rep.left_fold_ok}, "
            f"right={rep.right_fold_ok}")

    rho_L = _rotation_to_last(rep.witness_a)
    rho_R = _rotation_to_last(rep.witness_b)

    stage1 = TransformedPhase(phase, rho_L, x0, rho_R, y0, B=None, subtract=False)
    j3 = stage1.jet(np.zeros(d), np.zeros(d), 3)[3]
    xd, yd = d - 1, 2 * d - 1
    den_a = j3[xd, yd, xd]
    den_b = j3[xd, yd, yd]
    if min(abs(den_a), abs(den_b)) < denom_tol:
        raise FoldDegeneracyError(
            f"shear denominators too small: x={den_a:.3e}, y={den_b:.3e}")
    # sign fixed by requiring the post-shear residuals to vanish:
    # (phi o sigma)_{x_d y_d x_i} = phi_{x_d y_d x_i} - alpha_i phi_{x_d y_d x_d}
    alpha = np.array([j3[xd, yd, i] / den_a for i in range(d - 1)])
    beta = np.array([j3[xd, yd, d + k] / den_b for k in range(d - 1)])

    S_L = np.eye(d)
    S_R = np.eye(d)
    if d > 1:
        S_L[d - 1, :d - 1] = -alpha
        S_R[d - 1, :d - 1] = -beta

    A_L = rho_L @ S_L
    A_R = rho_R @ S_R
    B = None
    if d > 1:
        stage2 = TransformedPhase(phase, A_L, x0, A_R, y0, B=None, subtract=False)
        k3 = stage2.jet(np.zeros(d), np.zeros(d), 3)[3]
        m_xpyp = stage2.jet(np.zeros(d), np.zeros(d), 2)[2][np.ix_(range(d - 1), range(d, 2 * d - 1))]
        rhs = np.array([[k3[d + jj, ii, xd] for ii in range(d - 1)] for jj in range(d - 1)])
        # solve phi_{y'x'} B = -phi_{y'x'x_d}
        B = -np.linalg.solve(m_xpyp.T, rhs)

    final = TransformedPhase(phase, A_L, x0, A_R, y0, B=B, subtract=True)
    res = _normal_form_residuals(final)
    return NormalForm(base_point=(tuple(x0), tuple(y0)), rho_L=rho_L, rho_R=rho_R,
                      alpha=alpha, beta=beta, B=B, phase=final, residuals=res)
