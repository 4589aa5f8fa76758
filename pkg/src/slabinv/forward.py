"""Finite-difference solver for the slab Schrodinger boundary value problems.

Seven-point Laplacian with Dirichlet elimination on the truncated cylinder
(``truncated`` mode, homogeneous data on the lateral staircase) or with
periodic lateral identification (``periodic`` mode, the oracle configuration
whose plate problems separate into lateral Fourier modes).  Frequencies k are
vetted by a numerical admissibility check: the smallest singular value of the
assembled operator must clear a grid-aware threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

try:
    import pyamg
except ImportError:  # pragma: no cover - optional accelerator
    pyamg = None

from .boundary import BoundaryField, from_plate_values
from .fields import GridField
from .geometry import (
    BoundaryPatch,
    Grid3,
    Plate,
    SlabGeometry,
    interior_mask,
)

logger = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 25_000

TRUNCATED = "truncated"
PERIODIC = "periodic"


class SolveError(RuntimeError):
    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = residual_history or []


class AdmissibilityError(RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class AdmissibilityReport:
    k: float
    min_singular: float
    admissible: bool
    threshold: float


class HelmholtzOperator:
    """Assembled matrix for (-Lap_h - k^2 + q) on the active node set."""

    def __init__(self, grid: Grid3, geom: SlabGeometry, k: float,
                 q=None, boundary_mode: str = TRUNCATED,
                 direct_limit: int = DIRECT_SOLVE_LIMIT):
        if boundary_mode not in (TRUNCATED, PERIODIC):
            raise ValueError(f"unknown boundary mode {boundary_mode!r}")
        if grid.periodic:
            raise ValueError("slab operators live on node grids")
        if k < 0:
            raise ValueError("frequency k must be >= 0")
        self.grid = grid
        self.geom = geom
        self.k = float(k)
        self.q = q
        self.boundary_mode = boundary_mode
        self.direct_limit = direct_limit
        self._lu_cache = None
        self._ilu_cache = None
        self._adm_cache: AdmissibilityReport | None = None
        self._build()

    # -- assembly ------------------------------------------------------------

    def _build(self):
        grid = self.grid
        sx, sy, sz = grid.node_shape
        if self.boundary_mode == TRUNCATED:
            active = interior_mask(grid, self.geom)
        else:
            active = np.zeros(grid.node_shape, dtype=bool)
            active[: grid.nx, : grid.ny, 1: grid.nz] = True
        idx = np.full(grid.node_shape, -1, dtype=np.int64)
        n = int(np.count_nonzero(active))
        idx[active] = np.arange(n)
        self.active = active
        self.index = idx
        self.n_active = n

        h2 = grid.h ** 2
        qv = np.zeros(grid.node_shape)
        if self.q is not None:
            qv = self.q.field.values.real
        diag = 6.0 / h2 - self.k ** 2 + qv[active]
        rows = [np.arange(n)]
        cols = [np.arange(n)]
        data = [diag]
        for axis in range(3):
            for step in (-1, 1):
                nbr = self._shift_index(idx, axis, step)
                here = active & (nbr >= 0)
                rows.append(idx[here])
                cols.append(nbr[here])
                data.append(np.full(int(np.count_nonzero(here)), -1.0 / h2))
        mat = scipy.sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        self.matrix = mat.tocsr()

    def _shift_index(self, idx: np.ndarray, axis: int, step: int) -> np.ndarray:
        """Unknown index of each node's neighbour at +step along axis, -1 if none."""
        grid = self.grid
        out = np.full_like(idx, -1)
        if self.boundary_mode == PERIODIC and axis in (0, 1):
            nuniq = (grid.nx, grid.ny)[axis]
            sl = [slice(None)] * 3
            sl[axis] = slice(0, nuniq)
            sub = idx[tuple(sl)]
            out[tuple(sl)] = np.roll(sub, -step, axis=axis)
            return out
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        if step == 1:
            dst[axis] = slice(0, -1)
            src[axis] = slice(1, None)
        else:
            dst[axis] = slice(1, None)
            src[axis] = slice(0, -1)
        out[tuple(dst)] = idx[tuple(src)]
        return out

    # -- linear algebra -------------------------------------------------------

    def _lu(self):
        if self._lu_cache is None:
            self._lu_cache = scipy.sparse.linalg.splu(
                self.matrix.tocsc(), permc_spec="MMD_AT_PLUS_A"
            )
        return self._lu_cache

    def _separable(self) -> bool:
        """Periodic mode with zero potential separates into lateral Fourier modes."""
        return self.boundary_mode == PERIODIC and (
            self.q is None or float(np.max(np.abs(self.q.field.values))) == 0.0
        )

    def _solve_separable(self, rhs: np.ndarray) -> np.ndarray:
        """FFT over the periodic lateral axes, Thomas sweeps in the vertical."""
        grid = self.grid
        nx, ny, nz = grid.nx, grid.ny, grid.nz
        h2 = grid.h ** 2
        r3 = rhs.reshape(nx, ny, nz - 1)
        rhat = scipy.fft.fft2(r3, axes=(0, 1))
        mx = np.arange(nx)[:, None, None]
        my = np.arange(ny)[None, :, None]
        lam = (4.0 / h2) * (np.sin(np.pi * mx / nx) ** 2 + np.sin(np.pi * my / ny) ** 2)
        diag = np.broadcast_to(2.0 / h2 - self.k ** 2 + lam, (nx, ny, nz - 1)).copy()
        off = -1.0 / h2
        # vectorized Thomas algorithm across all lateral modes
        cp = np.zeros((nx, ny, nz - 2), dtype=np.complex128)
        dp = np.zeros((nx, ny, nz - 1), dtype=np.complex128)
        denom = diag[:, :, 0].astype(np.complex128)
        dp[:, :, 0] = rhat[:, :, 0] / denom
        for j in range(1, nz - 1):
            cp[:, :, j - 1] = off / denom
            denom = diag[:, :, j] - off * cp[:, :, j - 1]
            dp[:, :, j] = (rhat[:, :, j] - off * dp[:, :, j - 1]) / denom
        uhat = np.zeros_like(dp)
        uhat[:, :, nz - 2] = dp[:, :, nz - 2]
        for j in range(nz - 3, -1, -1):
            uhat[:, :, j] = dp[:, :, j] - cp[:, :, j] * uhat[:, :, j + 1]
        u = scipy.fft.ifft2(uhat, axes=(0, 1))
        if not np.iscomplexobj(rhs):
            u = u.real
        return u.reshape(-1)

    def _amg(self):
        if self._ilu_cache is None:
            self._ilu_cache = pyamg.smoothed_aggregation_solver(
                self.matrix.tocsr(), max_coarse=500
            )
        return self._ilu_cache

    def _solve_real(self, rhs: np.ndarray) -> np.ndarray:
        if self.n_active <= self.direct_limit or pyamg is None:
            return self._lu().solve(rhs)
        history: list[float] = []
        x = self._amg().solve(rhs, tol=1e-12, accel="cg", maxiter=400,
                              residuals=history)
        scale = np.linalg.norm(rhs)
        if scale > 0 and np.linalg.norm(self.matrix @ x - rhs) > 1e-11 * scale:
            x, info = scipy.sparse.linalg.gmres(
                self.matrix, rhs, x0=x, rtol=1e-13, atol=0.0,
                M=self._amg().aspreconditioner(), maxiter=400,
            )
            if info != 0:
                raise SolveError("iterative solve stagnated",
                                 residual_history=[float(r) for r in history])
        return x

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A u = rhs on the active set; enforces relative residual 1e-10."""
        if self._separable():
            u = self._solve_separable(np.asarray(rhs, dtype=np.complex128))
        elif np.iscomplexobj(rhs):
            u = self._solve_real(rhs.real.copy()) + 1j * self._solve_real(rhs.imag.copy())
        else:
            u = self._solve_real(rhs.copy())
        scale = np.linalg.norm(rhs)
        if scale > 0:
            res = np.linalg.norm(self.matrix @ u - rhs) / scale
            if res > 1e-10:
                raise SolveError(f"solver residual {res:.3e} exceeds 1e-10",
                                 residual_history=[res])
        return u

    def apply_pde(self, field: GridField) -> np.ndarray:
        """(-Lap_h - k^2 + q) u at the active nodes (zeros elsewhere).

        Uses the 7-point stencil on the full node array, so prescribed
        boundary values of `field` participate exactly as in the solve.
        """
        u = field.values
        grid = self.grid
        h2 = grid.h ** 2
        acc = 6.0 * u.copy()
        for axis in range(3):
            if self.boundary_mode == PERIODIC and axis in (0, 1):
                nuniq = (grid.nx, grid.ny)[axis]
                sl = [slice(None)] * 3
                sl[axis] = slice(0, nuniq)
                sub = u[tuple(sl)]
                for step in (-1, 1):
                    shifted = np.roll(sub, step, axis=axis)
                    acc[tuple(sl)] -= shifted
            else:
                for step in (-1, 1):
                    dst = [slice(None)] * 3
                    src = [slice(None)] * 3
                    if step == 1:
                        dst[axis] = slice(0, -1)
                        src[axis] = slice(1, None)
                    else:
                        dst[axis] = slice(1, None)
                        src[axis] = slice(0, -1)
                    acc[tuple(dst)] -= u[tuple(src)]
        qv = self.q.field.values.real if self.q is not None else 0.0
        out = acc / h2 + (qv - self.k ** 2) * u
        return np.where(self.active, out, 0.0)

    def admissibility(self, threshold: float | None = None) -> AdmissibilityReport:
        if self._adm_cache is None or (
            threshold is not None and threshold != self._adm_cache.threshold
        ):
            self._adm_cache = check_admissible(self, threshold)
        return self._adm_cache


def _min_singular(op: HelmholtzOperator, seed: int = 0, max_iter: int = 500,
                  rel_tol: float = 1e-10) -> float:
    """Smallest singular value by inverse power iteration (symmetric matrix).

    For the real symmetric operator the singular values are the eigenvalue
    magnitudes, so the dominant eigenvalue of A^-1 gives 1/min_singular.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    x = rng.standard_normal(op.n_active)
    x /= np.linalg.norm(x)
    if op._separable():
        inverse = lambda v: op._solve_separable(v.astype(np.complex128)).real
    else:
        inverse = op._solve_real
    est_prev = None
    for it in range(max_iter):
        y = inverse(x)
        ny = np.linalg.norm(y)
        if ny == 0:
            raise AdmissibilityError("inverse iteration collapsed", last_iterate=x)
        est = abs(float(x @ y))  # Rayleigh quotient of A^-1
        x = y / ny
        if est_prev is not None and abs(est - est_prev) <= rel_tol * abs(est):
            return 1.0 / est
        est_prev = est
    raise AdmissibilityError(
        f"inverse power iteration did not converge in {max_iter} steps",
        last_iterate=x,
    )


_LAMBDA1_CACHE: dict = {}


def reference_eigenvalue(grid: Grid3, geom: SlabGeometry, boundary_mode: str) -> float:
    """Smallest eigenvalue of the discrete Dirichlet Laplacian (q=0, k=0)."""
    key = (grid, geom, boundary_mode)
    if key not in _LAMBDA1_CACHE:
        op0 = HelmholtzOperator(grid, geom, 0.0, None, boundary_mode)
        _LAMBDA1_CACHE[key] = _min_singular(op0)
    return _LAMBDA1_CACHE[key]


def default_threshold(grid: Grid3, geom: SlabGeometry, boundary_mode: str) -> float:
    return 1e-6 * reference_eigenvalue(grid, geom, boundary_mode)


def check_admissible(op: HelmholtzOperator, threshold: float | None = None,
                     seed: int = 0) -> AdmissibilityReport:
    """Estimate min_singular to ~3 significant digits and compare to threshold."""
    if threshold is None:
        threshold = default_threshold(op.grid, op.geom, op.boundary_mode)
    ms = _min_singular(op, seed=seed)
    return AdmissibilityReport(op.k, ms, bool(ms > threshold), threshold)


def _require_admissible(op: HelmholtzOperator):
    rep = op.admissibility()
    if not rep.admissible:
        raise AdmissibilityError(
            f"frequency k={op.k} is not admissible: min_singular="
            f"{rep.min_singular:.3e} <= threshold {rep.threshold:.3e}"
        )


def _top_plate_rhs(op: HelmholtzOperator, fplate: np.ndarray) -> np.ndarray:
    """Dirichlet elimination: top-plate data couples to the adjacent layer."""
    grid = op.grid
    sz = grid.node_shape[2]
    rhs = np.zeros(op.n_active, dtype=np.complex128)
    layer = op.active[:, :, sz - 2]
    ids = op.index[:, :, sz - 2][layer]
    rhs[ids] = fplate[layer] / grid.h ** 2
    return rhs


def solve_dirichlet(op: HelmholtzOperator, f: BoundaryField) -> GridField:
    """Solve with data f on the top plate, zero on the bottom plate and laterally."""
    _require_admissible(op)
    grid = op.grid
    fplate = f.plate_values(grid)
    if op.boundary_mode == TRUNCATED:
        r = grid.lateral_radius()[:, :, 0]
        bad = np.abs(fplate[r >= op.geom.R_lat])
        if bad.size and bad.max() > 0:
            raise SolveError("Dirichlet data must vanish outside the truncated plate")
    rhs = _top_plate_rhs(op, fplate)
    u = op.solve_interior(rhs)
    out = np.zeros(grid.node_shape, dtype=np.complex128)
    out[op.active] = u
    sz = grid.node_shape[2]
    if op.boundary_mode == TRUNCATED:
        r = grid.lateral_radius()[:, :, 0]
        out[:, :, sz - 1] = np.where(r < op.geom.R_lat, fplate, 0.0)
    else:
        out[:, :, sz - 1] = fplate
        out[grid.nx, :, :] = out[0, :, :]
        out[:, grid.ny, :] = out[:, 0, :]
    return GridField(grid, out)


def solve_source(op: HelmholtzOperator, w: GridField) -> GridField:
    """Solve with interior source w and homogeneous Dirichlet data everywhere.

    The realized well-posedness constant ||v|| / ||w|| (discrete L^2 over the
    truncated domain) is reported through the module logger.
    """
    _require_admissible(op)
    if w.grid != op.grid:
        raise SolveError("source field lives on a different grid")
    rhs = w.values[op.active].astype(np.complex128)
    u = op.solve_interior(rhs)
    out = np.zeros(op.grid.node_shape, dtype=np.complex128)
    out[op.active] = u
    if op.boundary_mode == PERIODIC:
        out[op.grid.nx, :, :] = out[0, :, :]
        out[:, op.grid.ny, :] = out[:, 0, :]
    field = GridField(op.grid, out)
    w_norm = l2_omega(w, op.geom)
    if w_norm > 0:
        logger.info("source solve: ||v|| <= C ||w|| with C = %.6g",
                    l2_omega(field, op.geom) / w_norm)
    return field


def neumann_trace(u: GridField, patch: BoundaryPatch,
                  apply_mask: bool = True) -> BoundaryField:
    """Outward normal derivative on a plate patch by the one-sided 3-point stencil.

    The outward normal is +e3 on the top plate and -e3 on the bottom plate;
    the stencil marches two layers into the slab, keeping second order.
    """
    grid = u.grid
    sz = grid.node_shape[2]
    if sz < 3:
        raise SolveError("need at least two interior layers for the trace stencil")
    h = grid.h
    if patch.plate is Plate.TOP:
        tr = (3 * u.values[:, :, sz - 1] - 4 * u.values[:, :, sz - 2]
              + u.values[:, :, sz - 3]) / (2 * h)
    else:
        tr = (3 * u.values[:, :, 0] - 4 * u.values[:, :, 1] + u.values[:, :, 2]) / (2 * h)
    return from_plate_values(grid, patch, tr, apply_mask=apply_mask)


def omega_weights(grid: Grid3, geom: SlabGeometry) -> np.ndarray:
    """Quadrature weights for L^2 over the truncated domain (plates halved)."""
    r = grid.lateral_radius()
    w = np.where(r < geom.R_lat, 1.0, 0.0) * np.ones(grid.node_shape)
    w[:, :, 0] *= 0.5
    w[:, :, -1] *= 0.5
    return w * grid.h ** 3


def l2_omega(field: GridField, geom: SlabGeometry) -> float:
    w = omega_weights(field.grid, geom)
    return float(np.sqrt(np.sum(w * np.abs(field.values) ** 2)))


def runge_approximate(u_target: GridField, op: HelmholtzOperator, reg: float,
                      basis) -> tuple[BoundaryField, float]:
    """Least-squares boundary data reproducing a local solution in L^2.

    Minimizes ||S(f) - u_target||^2_{L^2(Omega)} + reg * ||f||^2_{H^{3/2}}
    over data f spanned by `basis` (solve-per-column), returning the minimizer
    and the achieved L^2 residual.
    """
    if reg < 0:
        raise ValueError("regularization weight must be >= 0")
    grid = op.grid
    w = omega_weights(grid, geom=op.geom)
    sols = []
    for bf in basis.functions:
        sols.append(solve_dirichlet(op, bf).values)
    m = len(sols)
    gram = np.empty((m, m), dtype=np.complex128)
    rhs = np.empty(m, dtype=np.complex128)
    for i in range(m):
        wi = w * np.conj(sols[i])
        rhs[i] = np.sum(wi * u_target.values)
        for j in range(i, m):
            gram[i, j] = np.sum(wi * sols[j])
            gram[j, i] = np.conj(gram[i, j])
    system = gram + reg * basis.gram_h32
    try:
        coef = scipy.linalg.solve(system, rhs, assume_a="her")
    except scipy.linalg.LinAlgError as exc:
        raise SolveError(f"normal-equation solve failed: {exc}") from exc
    approx = np.tensordot(coef, np.array(sols), axes=(0, 0))
    residual = float(np.sqrt(np.sum(w * np.abs(approx - u_target.values) ** 2)))
    fvals = np.tensordot(coef, np.array([bf.values for bf in basis.functions]),
                         axes=(0, 0))
    f = BoundaryField(basis.patch, basis.square, fvals)
    return f, residual
