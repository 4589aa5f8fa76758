"""Partial Dirichlet-to-Neumann maps and the norms used to compare them.

The measurement operator maps top-plate Dirichlet data (coefficients in a
sine basis on the data patch) to normal-derivative samples on a plate
measurement patch.  Differences of such operators are measured in the
operator norm from (data, triple norm) to H^{-3/2} on the measurement patch,
where

* the triple norm of data f is the L^2 norm over the truncated domain of the
  free (q = 0) solution with that data, and
* the H^{-3/2} norm is the dual of a spectrally weighted H^{3/2} norm built
  from the bounding-square sine spectrum of the patch.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

from .boundary import (
    BoundaryError,
    BoundaryField,
    SquareGrid2,
    bounding_square,
    mode_field,
    sine_coefficients,
    sine_frequencies,
)
from .forward import (
    HelmholtzOperator,
    SolveError,
    l2_omega,
    neumann_trace,
    omega_weights,
    solve_dirichlet,
)
from .geometry import BoundaryPatch, Grid3

logger = logging.getLogger(__name__)


class NormDegeneracyError(RuntimeError):
    """Raised when a Gram matrix is numerically singular."""


class BoundaryBasis:
    """Ordered sine modes on a patch bounding square, masked to the patch.

    gram_h32 is the H^{3/2} Gram matrix of the (masked) modes; gram_triple
    (one free solve per mode, cached here) is attached on demand because it
    depends on the frequency k and the domain.
    """

    def __init__(self, patch: BoundaryPatch, square: SquareGrid2,
                 functions: list[BoundaryField], n_modes: int):
        self.patch = patch
        self.square = square
        self.functions = functions
        self.n_modes = n_modes
        self._coef = np.stack([sine_coefficients(f).ravel() for f in functions])
        w32 = (1.0 + sine_frequencies(square).ravel()) ** 1.5
        self.gram_h32 = np.real(np.conj(self._coef) * w32 @ self._coef.T)
        self.gram_triple: np.ndarray | None = None
        self._triple_key = None
        cond = np.linalg.cond(self.gram_h32)
        logger.info("boundary basis %dx%d modes: H^{3/2} Gram condition %.3e",
                    n_modes, n_modes, cond)

    def __len__(self) -> int:
        return len(self.functions)

    @classmethod
    def raw(cls, patch: BoundaryPatch, square: SquareGrid2,
            functions: list[BoundaryField]) -> "BoundaryBasis":
        """Basis carrying only functions (no spectral Grams); for DN assembly
        with oracle bases such as periodic exponentials."""
        basis = cls.__new__(cls)
        basis.patch = patch
        basis.square = square
        basis.functions = functions
        basis.n_modes = 0
        basis._coef = None
        basis.gram_h32 = None
        basis.gram_triple = None
        basis._triple_key = None
        return basis

    @property
    def weighted_coef(self) -> np.ndarray:
        return self._coef

    def attach_triple_gram(self, op0: HelmholtzOperator) -> np.ndarray:
        """Gram matrix of the free solutions in L^2 over the truncated domain.

        op0 must carry q = 0; the result is cached per (grid, k, mode).
        """
        if op0.q is not None and np.max(np.abs(op0.q.field.values)) > 0:
            raise ValueError("triple Gram requires the zero potential")
        key = (op0.grid, op0.k, op0.boundary_mode)
        if self._triple_key == key and self.gram_triple is not None:
            return self.gram_triple
        w = omega_weights(op0.grid, op0.geom)
        sols = [solve_dirichlet(op0, f).values for f in self.functions]
        m = len(sols)
        gram = np.empty((m, m), dtype=np.complex128)
        for i in range(m):
            wi = w * np.conj(sols[i])
            for j in range(i, m):
                gram[i, j] = np.sum(wi * sols[j])
                gram[j, i] = np.conj(gram[i, j])
        self.gram_triple = np.real(gram)
        self._triple_key = key
        cond = np.linalg.cond(self.gram_triple)
        logger.info("triple-norm Gram condition %.3e at k=%g", cond, op0.k)
        return self.gram_triple


def build_boundary_basis(grid: Grid3, patch: BoundaryPatch, n_modes: int,
                         apply_mask: bool = True) -> BoundaryBasis:
    square = bounding_square(grid, patch)
    if n_modes > square.ns - 1:
        raise BoundaryError(
            f"{n_modes} modes per axis exceed the {square.ns}-cell bounding square"
        )
    functions = [
        mode_field(patch, square, m1, m2, apply_mask=apply_mask)
        for m1 in range(1, n_modes + 1)
        for m2 in range(1, n_modes + 1)
    ]
    return BoundaryBasis(patch, square, functions, n_modes)


# -- norms --------------------------------------------------------------------


def norm_h32(g: BoundaryField) -> float:
    """Spectral H^{3/2} norm from the bounding-square sine spectrum."""
    coef = sine_coefficients(g)
    w = (1.0 + sine_frequencies(g.square)) ** 1.5
    return float(np.sqrt(np.sum(w * np.abs(coef) ** 2)))


def _pairings(r: BoundaryField, basis: BoundaryBasis) -> np.ndarray:
    """h^2 <b_i, r> for each test function b_i."""
    if r.square != basis.square:
        raise BoundaryError("field and test basis live on different squares")
    h2 = r.square.h ** 2
    stack = np.stack([f.values.ravel() for f in basis.functions])
    return h2 * (np.conj(stack) @ r.values.ravel())


def norm_hm32(r: BoundaryField, test_basis: BoundaryBasis) -> float:
    """Dual norm sup |<r, g>| / ||g||_{H^{3/2}} over the span of the test basis."""
    p = _pairings(r, test_basis)
    try:
        cho = scipy.linalg.cho_factor(test_basis.gram_h32)
    except scipy.linalg.LinAlgError as exc:
        raise NormDegeneracyError(f"singular H^{{3/2}} Gram matrix: {exc}") from exc
    val = np.real(np.vdot(p, scipy.linalg.cho_solve(cho, p)))
    return float(np.sqrt(max(val, 0.0)))


def hm32_maximizer(r: BoundaryField, test_basis: BoundaryBasis) -> BoundaryField:
    """The test function attaining the dual norm (inverse-Gram image of r)."""
    p = _pairings(r, test_basis)
    cho = scipy.linalg.cho_factor(test_basis.gram_h32)
    c = scipy.linalg.cho_solve(cho, p)
    vals = np.tensordot(c, np.array([f.values for f in test_basis.functions]),
                        axes=(0, 0))
    return BoundaryField(test_basis.patch, test_basis.square, vals)


def triple_norm(f: BoundaryField, op0: HelmholtzOperator) -> float:
    """L^2 norm over the truncated domain of the free solution with data f."""
    if op0.q is not None and np.max(np.abs(op0.q.field.values)) > 0:
        raise ValueError("triple norm is defined through the zero potential")
    v = solve_dirichlet(op0, f)
    return l2_omega(v, op0.geom)


# -- the measurement operator ---------------------------------------------------


class DnOperator:
    """Matrix of a partial DN map over a Dirichlet basis.

    Column j holds the (patch-masked) normal-derivative samples on the target
    bounding square of the solution with data basis.functions[j]; rows run
    over the flattened square nodes.
    """

    def __init__(self, matrix: np.ndarray, source_basis: BoundaryBasis,
                 target_patch: BoundaryPatch, target_square: SquareGrid2,
                 k: float, q_label: str = ""):
        self.matrix = matrix
        self.source_basis = source_basis
        self.target_patch = target_patch
        self.target_square = target_square
        self.k = k
        self.q_label = q_label

    def column_field(self, j: int) -> BoundaryField:
        vals = self.matrix[:, j].reshape(self.target_square.node_shape)
        return BoundaryField(self.target_patch, self.target_square, vals)


def assemble_dn(op: HelmholtzOperator, basis: BoundaryBasis,
                target: BoundaryPatch, q_label: str = "") -> DnOperator:
    """One forward solve per basis column; deterministic given equal inputs."""
    tsq = bounding_square(op.grid, target)
    cols = []
    for j, f in enumerate(basis.functions):
        try:
            u = solve_dirichlet(op, f)
        except SolveError as exc:
            raise SolveError(f"DN column {j} failed: {exc}",
                             residual_history=exc.residual_history) from exc
        tr = neumann_trace(u, target)
        cols.append(tr.values.ravel())
    matrix = np.stack(cols, axis=1)
    return DnOperator(matrix, basis, target, tsq, op.k, q_label)


def apply_dn(dn: DnOperator, coef: np.ndarray) -> BoundaryField:
    vals = (dn.matrix @ coef).reshape(dn.target_square.node_shape)
    return BoundaryField(dn.target_patch, dn.target_square, vals)


# -- the operator norm ----------------------------------------------------------


def _star_pencil(matrix: np.ndarray, src_basis: BoundaryBasis,
                 tgt_basis: BoundaryBasis) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian pencil (M, G) whose top eigenvalue is the squared star norm."""
    if src_basis.gram_triple is None:
        raise NormDegeneracyError(
            "source basis carries no triple-norm Gram; call attach_triple_gram first"
        )
    h2 = tgt_basis.square.h ** 2
    stack = np.stack([f.values.ravel() for f in tgt_basis.functions])
    pair = h2 * (np.conj(stack) @ matrix)          # (m_t, n_src)
    try:
        cho = scipy.linalg.cho_factor(tgt_basis.gram_h32)
    except scipy.linalg.LinAlgError as exc:
        raise NormDegeneracyError(f"singular H^{{3/2}} Gram matrix: {exc}") from exc
    m_mat = np.conj(pair).T @ scipy.linalg.cho_solve(cho, pair)
    g = src_basis.gram_triple
    lam_min = float(np.min(scipy.linalg.eigvalsh(g)))
    if lam_min <= 1e-14 * float(np.max(np.abs(g))):
        raise NormDegeneracyError(
            f"triple-norm Gram is numerically singular (min eigenvalue {lam_min:.3e})"
        )
    return m_mat, g


def op_norm_star(matrix_diff: np.ndarray, src_basis: BoundaryBasis,
                 tgt_basis: BoundaryBasis) -> float:
    """Largest generalized singular value of a DN-matrix difference.

    Solved as the extreme eigenvalue of the dense Hermitian pencil; exact to
    machine precision at these basis sizes, which the homogeneity/triangle
    checks downstream rely on.
    """
    m_mat, g = _star_pencil(matrix_diff, src_basis, tgt_basis)
    vals = scipy.linalg.eigh(m_mat, g, eigvals_only=True)
    return float(np.sqrt(max(float(vals[-1]), 0.0)))


def op_norm_star_power(matrix_diff: np.ndarray, src_basis: BoundaryBasis,
                       tgt_basis: BoundaryBasis, seed: int = 0,
                       max_iter: int = 500, rel_tol: float = 1e-6) -> float:
    """Power-iteration evaluation of the star norm (cross-check oracle)."""
    m_mat, g = _star_pencil(matrix_diff, src_basis, tgt_basis)
    n = m_mat.shape[0]
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 1], np.uint64)))
    c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    cho_g = scipy.linalg.cho_factor(g)
    lam_prev = None
    for _ in range(max_iter):
        z = scipy.linalg.cho_solve(cho_g, m_mat @ c)
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0
        c = z / nz
        num = np.real(np.vdot(c, m_mat @ c))
        den = np.real(np.vdot(c, g @ c))
        lam = num / den
        if lam_prev is not None and abs(lam - lam_prev) <= rel_tol * max(abs(lam), 1e-300):
            break
        lam_prev = lam
    return float(np.sqrt(max(lam, 0.0)))


# -- matrix file format ----------------------------------------------------------
#
# ASCII header "rows cols" then little-endian complex doubles, row-major.


def write_matrix(path: str, matrix: np.ndarray) -> None:
    mat = np.ascontiguousarray(matrix, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n".encode("ascii"))
        fh.write(mat.tobytes())


def read_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        rows, cols = int(header[0]), int(header[1])
        raw = np.frombuffer(fh.read(16 * rows * cols), dtype="<c16")
        if raw.size != rows * cols:
            raise ValueError(f"{path}: truncated matrix data")
    return raw.reshape(rows, cols).copy()
