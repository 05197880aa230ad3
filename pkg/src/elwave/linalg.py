"""Sparse SPD solver handles and a dense test oracle.

Assembled operators are scipy CSR matrices.  `prepare_spd` factors a matrix
once so that the time stepper can reuse the factorization across thousands of
right-hand sides; `solve` applies it with iterative refinement until the
normwise backward error is at machine level.  `dense_oracle_solve` is a deliberately
plain Gaussian elimination used only by tests as an independent route.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["SolverHandle", "prepare_spd", "solve", "dense_oracle_solve", "ConvergenceFailure"]

#: normwise backward error accepted by `solve`
RESIDUAL_TOL = 1.0e-12

#: refinement passes attempted before giving up
MAX_REFINE = 4


class ConvergenceFailure(RuntimeError):
    """Raised when a prepared solve cannot reach the residual tolerance."""


@dataclass
class SolverHandle:
    """Prepared factorization of a symmetric positive definite matrix."""

    matrix: sp.csr_matrix
    method: str
    _lu: spla.SuperLU
    norm1: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _is_exactly_symmetric(a: sp.csr_matrix) -> bool:
    d = (a - a.T).tocsr()
    d.eliminate_zeros()
    return d.nnz == 0


def prepare_spd(a: sp.csr_matrix, *, check_symmetry: bool = True) -> SolverHandle:
    """Factor a sparse SPD matrix for repeated solves.

    The factorization is a sparse direct LU (SuperLU); for the well-scaled
    mass and stiffness systems used here it is deterministic and its solves
    land at machine-precision residuals after refinement.

    Raises
    ------
    ValueError
        If the matrix is not square or not exactly symmetric.  Entries must
        satisfy a[i, j] == a[j, i] bitwise, which symmetric assembly provides.
    """
    a = sp.csr_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if check_symmetry and not _is_exactly_symmetric(a):
        raise ValueError("matrix is not exactly symmetric")
    lu = spla.splu(a.tocsc())
    norm1 = float(np.max(np.abs(a).sum(axis=0))) if a.nnz else 0.0
    return SolverHandle(matrix=a, method="sparse-lu", _lu=lu, norm1=norm1)


def solve(handle: SolverHandle, b: np.ndarray) -> np.ndarray:
    """Solve A x = b with the prepared handle.

    Applies iterative refinement until the normwise backward error
    ||A x - b|| / (||A|| ||x|| + ||b||) is at most 1e-12, i.e. until x solves
    a system within machine-level perturbation of the given one.

    Raises
    ------
    ConvergenceFailure
        If the tolerance cannot be reached; the message carries the achieved
        backward error.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (handle.n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({handle.n},)")
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros_like(b)
    x = handle._lu.solve(b)
    r = b - handle.matrix @ x

    def backward_error(x, r):
        return np.linalg.norm(r) / (handle.norm1 * np.linalg.norm(x) + norm_b)

    for _ in range(MAX_REFINE):
        rel = backward_error(x, r)
        if rel <= RESIDUAL_TOL:
            return x
        x = x + handle._lu.solve(r)
        r = b - handle.matrix @ x
    rel = backward_error(x, r)
    if rel <= RESIDUAL_TOL:
        return x
    raise ConvergenceFailure(f"backward error {rel:.3e} above {RESIDUAL_TOL:.1e} after refinement")


def dense_oracle_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting, written out longhand.

    Test oracle only: independent of the sparse path, limited to n <= 200.

    Raises
    ------
    ValueError
        For systems larger than the guard or mismatched shapes.
    np.linalg.LinAlgError
        If a pivot vanishes (singular matrix).
    """
    a = np.array(a, dtype=np.float64, copy=True)
    b = np.array(b, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"bad shapes {a.shape}, {b.shape}")
    if n > 200:
        raise ValueError(f"dense oracle is capped at n=200, got {n}")

    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0.0:
            raise np.linalg.LinAlgError("singular matrix in dense oracle")
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        inv_piv = 1.0 / a[k, k]
        for i in range(k + 1, n):
            f = a[i, k] * inv_piv
            if f != 0.0:
                a[i, k:] -= f * a[k, k:]
                b[i] -= f * b[k]

    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - a[i, i + 1 :] @ x[i + 1 :]) / a[i, i]
    return x
