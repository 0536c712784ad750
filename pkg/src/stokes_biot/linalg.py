"""Block assembly, Dirichlet elimination and the direct sparse solver.

Matrices are ``scipy.sparse`` CSR/CSC objects; factorization is SuperLU with
a COLAMD fill-reducing ordering and partial pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .spaces import BlockLayout, DofSet

RESIDUAL_TOL = 1e-10
PIVOT_TOL = 1e-14


class SolverError(RuntimeError):
    """Linear or nonlinear solve failure.

    ``pivot`` holds the offending column index for singular factorizations;
    ``residual`` the last residual norm where applicable.
    """

    def __init__(self, message: str, pivot: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.pivot = pivot
        self.residual = residual


@dataclass
class BlockSystem:
    """Sparse blocks keyed by (test field, trial field) plus a right-hand side."""

    layout: BlockLayout
    blocks: dict = field(default_factory=dict)
    rhs: np.ndarray | None = None
    constraints: DofSet | None = None

    def __post_init__(self):
        if self.rhs is None:
            self.rhs = np.zeros(self.layout.total)

    def add(self, test: str, trial: str, matrix, scale: float = 1.0) -> None:
        m = sp.csr_matrix(matrix) * scale
        key = (test, trial)
        if key in self.blocks:
            self.blocks[key] = self.blocks[key] + m
        else:
            self.blocks[key] = m

    def transpose(self) -> "BlockSystem":
        return BlockSystem(self.layout, {(j, i): b.T.tocsr() for (i, j), b in self.blocks.items()}, self.rhs.copy())


def monolithic(system: BlockSystem) -> sp.csr_matrix:
    """Place the blocks at their layout offsets; missing blocks are zero."""
    lay = system.layout
    grid = [[None] * len(lay.fields) for _ in lay.fields]
    for (test, trial), block in system.blocks.items():
        if test not in lay.fields or trial not in lay.fields:
            raise ValueError(f"block ({test}, {trial}) is not in the layout")
        shape = (lay.size(test), lay.size(trial))
        if block.shape != shape:
            raise ValueError(f"block ({test}, {trial}) has shape {block.shape}, expected {shape}")
        grid[lay.fields.index(test)][lay.fields.index(trial)] = block
    for k, f in enumerate(lay.fields):
        if grid[k][k] is None:
            grid[k][k] = sp.csr_matrix((lay.size(f), lay.size(f)))
    return sp.bmat(grid, format="csr")


def _eliminate(A: sp.spmatrix, dofs: DofSet):
    """Return the eliminated matrix and the constrained-column slice."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    idx = dofs.indices
    if len(idx) and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError("constrained DOF outside the system")
    keep = np.ones(n)
    keep[idx] = 0.0
    K = sp.diags(keep) @ A @ sp.diags(keep)
    diag = np.zeros(n)
    diag[idx] = 1.0
    K = (K + sp.diags(diag)).tocsr()
    K.eliminate_zeros()
    cols = A[:, idx].tocsr()
    return K, cols


def apply_dirichlet(system: BlockSystem | tuple, dofs: DofSet):
    """Symmetric elimination of the constrained DOFs.

    Accepts a :class:`BlockSystem` (returns a monolithic ``(matrix, rhs)``
    pair) or an explicit ``(matrix, rhs)`` tuple.
    """
    if isinstance(system, BlockSystem):
        A, b = monolithic(system), system.rhs
    else:
        A, b = system
    if len(dofs) == 0:
        return sp.csr_matrix(A), np.array(b, dtype=float)
    K, cols = _eliminate(A, dofs)
    rhs = np.array(b, dtype=float) - cols @ dofs.values
    rhs[dofs.indices] = dofs.values
    return K, rhs


def equilibrate(A: sp.csc_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Row then column max-norm scalings ``r``, ``c`` so that ``diag(r) A diag(c)``
    has unit max entries in every nonzero row and column."""
    absA = abs(A)
    rmax = absA.max(axis=1).toarray().ravel()
    r = np.where(rmax > 0, 1.0 / np.where(rmax > 0, rmax, 1.0), 1.0)
    cmax = (sp.diags(r) @ absA).max(axis=0).toarray().ravel()
    c = np.where(cmax > 0, 1.0 / np.where(cmax > 0, cmax, 1.0), 1.0)
    return r, c


class Factorization:
    """Sparse LU of the equilibrated matrix with residual verification and
    iterative refinement against the original matrix."""

    def __init__(self, matrix: sp.spmatrix):
        A = sp.csc_matrix(matrix)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.matrix = A
        n = A.shape[0]
        if n == 0:
            self._lu = None
            return
        self.row_scale, self.col_scale = equilibrate(A)
        scaled = sp.csc_matrix(sp.diags(self.row_scale) @ A @ sp.diags(self.col_scale))
        try:
            self._lu = spla.splu(scaled, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as exc:
            pivot = _zero_column(A)
            if pivot is None:
                pivot = _weakest_pivot(scaled)
            raise SolverError(f"factorization failed: {exc} (zero pivot at column {pivot})", pivot=pivot) from None
        self._check_pivots()

    def _check_pivots(self) -> None:
        U = self._lu.U.tocsr()
        d = np.abs(U.diagonal())
        row_max = np.abs(U).max(axis=1).toarray().ravel()
        row_max = np.where(row_max > 0, row_max, 1.0)
        small = d <= PIVOT_TOL * row_max
        if small.any():
            k = int(np.flatnonzero(small)[0])
            col = int(self._lu.perm_c[k]) if hasattr(self._lu, "perm_c") else k
            raise SolverError(f"zero pivot at column {col} (|u_kk|={d[k]:.2e})", pivot=col)

    def _apply_inverse(self, b: np.ndarray) -> np.ndarray:
        return self.col_scale * self._lu.solve(self.row_scale * b)

    def solve(self, rhs: np.ndarray, rtol: float = RESIDUAL_TOL, max_refine: int = 3) -> np.ndarray:
        b = np.asarray(rhs, dtype=float)
        if self._lu is None:
            return np.zeros(0)
        x = self._apply_inverse(b)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        res = b - self.matrix @ x
        rel = np.linalg.norm(res) / bnorm
        for _ in range(max_refine):
            if rel <= rtol:
                break
            x = x + self._apply_inverse(res)
            res = b - self.matrix @ x
            rel = np.linalg.norm(res) / bnorm
        if not np.isfinite(rel) or rel > rtol:
            raise SolverError(f"relative residual {rel:.3e} exceeds {rtol:.0e}", residual=float(rel))
        self.last_residual = float(rel)
        return x


def _weakest_pivot(scaled: sp.csc_matrix) -> int | None:
    """Column of the smallest relative pivot of a slightly shifted copy of an exactly singular matrix."""
    n = scaled.shape[0]
    try:
        lu = spla.splu(sp.csc_matrix(scaled + PIVOT_TOL * sp.identity(n)), permc_spec="COLAMD")
    except RuntimeError:
        return None
    U = lu.U.tocsr()
    row_max = np.abs(U).max(axis=1).toarray().ravel()
    k = int(np.argmin(np.abs(U.diagonal()) / np.where(row_max > 0, row_max, 1.0)))
    return int(lu.perm_c[k])


def _zero_column(A: sp.csc_matrix) -> int | None:
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
    empty = np.flatnonzero(norms == 0)
    return int(empty[0]) if len(empty) else None


def solve_direct(matrix: sp.spmatrix, rhs: np.ndarray, rtol: float = RESIDUAL_TOL) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU; raise :class:`SolverError` on failure."""
    return Factorization(matrix).solve(rhs, rtol=rtol)


class EliminatedOperator:
    """A fixed matrix with a fixed constrained DOF pattern, factorized once.

    Only the prescribed values and the right-hand side change between solves.
    """

    def __init__(self, matrix: sp.spmatrix, constrained: np.ndarray):
        self.matrix = sp.csr_matrix(matrix)
        self.indices = np.asarray(constrained, dtype=np.int64)
        self.eliminated, self._cols = _eliminate(self.matrix, DofSet(self.indices, np.zeros(len(self.indices))))
        self.factorization = Factorization(self.eliminated)

    def solve(self, rhs: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
        b = np.array(rhs, dtype=float)
        if len(self.indices):
            vals = np.zeros(len(self.indices)) if values is None else np.asarray(values, dtype=float)
            b -= self._cols @ vals
            b[self.indices] = vals
        return self.factorization.solve(b)


def write_matrix_market(matrix: sp.spmatrix, path) -> None:
    """Dump a matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix))
