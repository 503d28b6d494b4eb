"""Numerical kernels: sparse LU, banded Cholesky, restarted GMRES, dense diagnostics.

Sparse factorizations are computed on a reverse Cuthill-McKee reordering of
the matrix. Factorization objects are immutable once built, so a single
instance can serve concurrent ``solve`` calls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import InvalidArgumentError, ResourceLimitError, SingularFactorizationError

LOGGER = logging.getLogger(__name__)

Matvec = Callable[[np.ndarray], np.ndarray]
GMRESCallback = Callable[[int, np.ndarray, np.ndarray], bool]
GMRESStatus = Literal["converged", "max_iter", "stagnated", "breakdown"]


def _rcm_permutation(matrix: sp.spmatrix) -> np.ndarray:
    pattern = sp.csr_matrix(matrix, copy=True)
    pattern.data = np.ones_like(pattern.data, dtype=np.float64)
    pattern = pattern + pattern.T
    return np.asarray(reverse_cuthill_mckee(sp.csr_matrix(pattern), symmetric_mode=True))


class SparseLU:
    """Threshold-pivoted sparse LU of a square (complex) matrix."""

    def __init__(
        self,
        matrix: sp.spmatrix,
        *,
        pivot_threshold: float = 0.1,
        subdomain: Optional[int] = None,
    ) -> None:
        matrix = sp.csc_matrix(matrix)
        rows, cols = matrix.shape
        if rows != cols:
            raise InvalidArgumentError(f"LU needs a square matrix, got {rows}x{cols}")
        self.shape = matrix.shape
        self.dtype = np.result_type(matrix.dtype, np.float64)
        self._perm = _rcm_permutation(matrix)
        permuted = sp.csc_matrix(matrix[self._perm][:, self._perm])
        try:
            self._lu = spla.splu(
                permuted,
                permc_spec="NATURAL",
                diag_pivot_thresh=pivot_threshold,
            )
        except RuntimeError as exc:
            raise SingularFactorizationError(f"sparse LU failed ({exc})", subdomain) from exc
        if not np.all(np.isfinite(self._lu.U.data)):
            raise SingularFactorizationError("sparse LU produced non-finite factors", subdomain)
        LOGGER.debug(
            "LU n=%d nnz(A)=%d nnz(L+U)=%d",
            rows,
            matrix.nnz,
            self._lu.L.nnz + self._lu.U.nnz,
        )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs)
        if rhs.shape[0] != self.shape[0]:
            raise InvalidArgumentError(
                f"right-hand side has {rhs.shape[0]} rows, matrix has {self.shape[0]}"
            )
        dtype = np.result_type(self.dtype, rhs.dtype)
        out = np.empty(rhs.shape, dtype=dtype)
        out[self._perm] = self._lu.solve(np.asarray(rhs[self._perm], dtype=dtype))
        return out


def sparse_lu_factor(
    matrix: sp.spmatrix,
    *,
    pivot_threshold: float = 0.1,
    subdomain: Optional[int] = None,
) -> SparseLU:
    return SparseLU(matrix, pivot_threshold=pivot_threshold, subdomain=subdomain)


def lu_solve(factorization: SparseLU, rhs: np.ndarray) -> np.ndarray:
    return factorization.solve(rhs)


class CholeskyFactor:
    """Banded Cholesky of a real SPD matrix after RCM reordering."""

    def __init__(self, matrix: sp.spmatrix | np.ndarray) -> None:
        matrix = sp.csr_matrix(matrix)
        n = matrix.shape[0]
        if matrix.shape != (n, n):
            raise InvalidArgumentError(f"Cholesky needs a square matrix, got {matrix.shape}")
        if np.iscomplexobj(matrix.data):
            raise InvalidArgumentError("Cholesky expects a real symmetric matrix")
        self.n = n
        self._perm = _rcm_permutation(matrix)
        permuted = sp.coo_matrix(matrix[self._perm][:, self._perm])
        upper = permuted.row <= permuted.col
        rows, cols, vals = permuted.row[upper], permuted.col[upper], permuted.data[upper]
        self.bandwidth = int((cols - rows).max()) if vals.size else 0
        banded = np.zeros((self.bandwidth + 1, n))
        np.add.at(banded, (self.bandwidth + rows - cols, cols), vals)
        try:
            self._factor = sla.cholesky_banded(banded, lower=False)
        except np.linalg.LinAlgError as exc:
            raise SingularFactorizationError(f"matrix is not positive definite ({exc})") from exc
        LOGGER.debug("Cholesky n=%d bandwidth=%d", n, self.bandwidth)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs)
        if rhs.shape[0] != self.n:
            raise InvalidArgumentError(f"right-hand side has {rhs.shape[0]} rows, matrix has {self.n}")
        permuted = rhs[self._perm]
        if np.iscomplexobj(permuted):
            solved = self._solve_real(permuted.real) + 1j * self._solve_real(permuted.imag)
        else:
            solved = self._solve_real(permuted)
        out = np.empty_like(solved)
        out[self._perm] = solved
        return out

    def _solve_real(self, rhs: np.ndarray) -> np.ndarray:
        return sla.cho_solve_banded((self._factor, False), np.ascontiguousarray(rhs, dtype=np.float64))


def spd_cholesky(matrix: sp.spmatrix | np.ndarray) -> CholeskyFactor:
    return CholeskyFactor(matrix)


def cholesky_solve(factorization: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    return factorization.solve(rhs)


@dataclass
class GMRESResult:
    x: np.ndarray
    residual_norms: list[float] = field(default_factory=list)
    iterations: int = 0
    status: GMRESStatus = "max_iter"

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _givens(a: complex, b: complex) -> tuple[float, complex]:
    abs_a = abs(a)
    if b == 0:
        return 1.0, 0.0
    if abs_a == 0:
        return 0.0, np.conj(b) / abs(b)
    r = np.hypot(abs_a, abs(b))
    return abs_a / r, (a / abs_a) * np.conj(b) / r


def gmres(
    matvec: Matvec,
    rhs: np.ndarray,
    *,
    restart: int = 20,
    tol: float = 1e-10,
    max_iter: int = 1000,
    x0: Optional[np.ndarray] = None,
    callback: Optional[GMRESCallback] = None,
    callback_every: Literal["iteration", "restart"] = "iteration",
) -> GMRESResult:
    """Restarted GMRES with modified Gram-Schmidt Arnoldi and Givens rotations.

    ``tol`` is relative to ``||rhs||``. ``callback(iteration, x, residual)``
    may return True to stop early; the iterate handed to it is then returned
    as converged. Residual norms are Euclidean.
    """
    if restart < 1:
        raise InvalidArgumentError(f"restart must be >= 1, got {restart}")
    b = np.asarray(rhs, dtype=np.complex128)
    n = b.size
    x = np.zeros(n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return GMRESResult(x=np.zeros(n, dtype=np.complex128), residual_norms=[0.0], status="converged")

    residual = b - matvec(x)
    beta = float(np.linalg.norm(residual))
    result = GMRESResult(x=x, residual_norms=[beta])
    eps = np.finfo(np.float64).eps

    while True:
        if beta <= tol * b_norm:
            result.status = "converged"
            break
        if result.iterations >= max_iter:
            result.status = "max_iter"
            break

        m = min(restart, max_iter - result.iterations)
        basis = np.zeros((m + 1, n), dtype=np.complex128)
        hess = np.zeros((m + 1, m), dtype=np.complex128)
        cosines = np.zeros(m)
        sines = np.zeros(m, dtype=np.complex128)
        g = np.zeros(m + 1, dtype=np.complex128)
        g[0] = beta
        basis[0] = residual / beta
        cycle_start = beta
        steps = 0
        stop_requested = False
        breakdown = False

        for k in range(m):
            w = matvec(basis[k])
            for i in range(k + 1):
                hess[i, k] = np.vdot(basis[i], w)
                w = w - hess[i, k] * basis[i]
            h_next = float(np.linalg.norm(w))
            for i in range(k):
                top = cosines[i] * hess[i, k] + sines[i] * hess[i + 1, k]
                hess[i + 1, k] = -np.conj(sines[i]) * hess[i, k] + cosines[i] * hess[i + 1, k]
                hess[i, k] = top
            cosines[k], sines[k] = _givens(hess[k, k], h_next)
            hess[k, k] = cosines[k] * hess[k, k] + sines[k] * h_next
            g[k + 1] = -np.conj(sines[k]) * g[k]
            g[k] = cosines[k] * g[k]
            steps = k + 1
            result.iterations += 1
            result.residual_norms.append(float(abs(g[k + 1])))

            breakdown = h_next <= 10 * eps * max(abs(hess[k, k]), 1.0)
            if not breakdown:
                basis[k + 1] = w / h_next

            if callback is not None and callback_every == "iteration":
                x_k = x + basis[:steps].T @ sla.solve_triangular(hess[:steps, :steps], g[:steps])
                res_k = _arnoldi_residual(basis, cosines, sines, g, steps, breakdown)
                if callback(result.iterations, x_k, res_k):
                    result.x = x_k
                    result.status = "converged"
                    stop_requested = True
                    break
            if breakdown or abs(g[k + 1]) <= tol * b_norm or result.iterations >= max_iter:
                break

        if stop_requested:
            return result

        y = sla.solve_triangular(hess[:steps, :steps], g[:steps])
        x = x + basis[:steps].T @ y
        result.x = x
        residual = b - matvec(x)
        beta = float(np.linalg.norm(residual))

        if callback is not None and callback_every == "restart":
            if callback(result.iterations, x, residual):
                result.status = "converged"
                return result

        if breakdown:
            result.status = "converged" if beta <= max(tol, 1e3 * eps) * b_norm else "breakdown"
            if result.status == "breakdown":
                LOGGER.warning("GMRES numerical breakdown at iteration %d (residual %.3e)", result.iterations, beta)
            break
        if steps == restart and beta >= cycle_start * (1.0 - 1e-12) and beta > tol * b_norm:
            LOGGER.warning("GMRES stagnated over a full cycle at iteration %d", result.iterations)
            result.status = "stagnated"
            break

    result.x = x
    return result


def _arnoldi_residual(
    basis: np.ndarray,
    cosines: np.ndarray,
    sines: np.ndarray,
    g: np.ndarray,
    steps: int,
    breakdown: bool,
) -> np.ndarray:
    """Residual vector of the current Krylov iterate, from the rotated least-squares data."""
    if breakdown:
        return np.zeros(basis.shape[1], dtype=np.complex128)
    z = np.zeros(steps + 1, dtype=np.complex128)
    z[steps] = g[steps]
    for i in range(steps - 1, -1, -1):
        zi, zn = z[i], z[i + 1]
        z[i] = cosines[i] * zi - sines[i] * zn
        z[i + 1] = np.conj(sines[i]) * zi + cosines[i] * zn
    return basis[: steps + 1].T @ z


def _check_dense_dim(matrix: np.ndarray, max_dim: int) -> None:
    if max(matrix.shape) > max_dim:
        raise ResourceLimitError("dense matrix dimension", max(matrix.shape), max_dim)


def dense_min_singular_value(matrix: np.ndarray, *, max_dim: int = 2000) -> float:
    matrix = np.asarray(matrix)
    _check_dense_dim(matrix, max_dim)
    return float(sla.svdvals(matrix).min())


def dense_sym_generalized_eigs(
    a: np.ndarray,
    b: np.ndarray,
    *,
    max_dim: int = 2000,
) -> tuple[float, float]:
    """Extreme eigenvalues of the symmetric pencil ``a x = lambda b x`` with ``b`` SPD."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dense_dim(a, max_dim)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"pencil shapes differ: {a.shape} vs {b.shape}")
    try:
        values = sla.eigh(0.5 * (a + a.T), 0.5 * (b + b.T), eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise SingularFactorizationError(f"generalized eigensolve failed ({exc})") from exc
    return float(values.min()), float(values.max())
