"""Sparse matrix utilities and SPD factorization.

All heavy linear algebra in the package flows through this module: triplet
assembly, Kronecker/block-diagonal composition, and a sparse Cholesky-style
factorization with a fill-reducing ordering, used for likelihood evaluation,
sampling and prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SparseError(Exception):
    """Base class for errors raised by this module."""


class IndexOutOfBounds(SparseError):
    def __init__(self, row, col, shape):
        self.row, self.col, self.shape = row, col, shape
        super().__init__(f"triplet index ({row}, {col}) out of bounds for shape {shape}")


class DimensionMismatch(SparseError):
    pass


class NotPositiveDefinite(SparseError):
    """Raised when a factorization meets a non-positive pivot."""

    def __init__(self, pivot_index, pivot_value=None):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(f"matrix is not positive definite (pivot {pivot_index})")


def assemble(triplets, nrows, ncols):
    """Build a CSC matrix from (row, col, value) triplets.

    Duplicate entries are summed. Raises IndexOutOfBounds for indices outside
    the requested shape.
    """
    triplets = list(triplets)
    if not triplets:
        return sp.csc_matrix((nrows, ncols))
    rows = np.asarray([t[0] for t in triplets], dtype=np.int64)
    cols = np.asarray([t[1] for t in triplets], dtype=np.int64)
    vals = np.asarray([t[2] for t in triplets], dtype=np.float64)
    bad = (rows < 0) | (rows >= nrows) | (cols < 0) | (cols >= ncols)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise IndexOutOfBounds(int(rows[i]), int(cols[i]), (nrows, ncols))
    m = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsc()
    m.sum_duplicates()
    return m


def kron(a, b):
    """Kronecker product returning CSC."""
    return sp.kron(sp.csc_matrix(a), sp.csc_matrix(b), format="csc")


def block_diag(blocks):
    """Block-diagonal composition returning CSC."""
    return sp.block_diag([sp.csc_matrix(b) for b in blocks], format="csc")


@dataclass(frozen=True)
class SpdFactor:
    """Sparse Cholesky-style factorization of an SPD matrix.

    Satisfies Q = P^T (L L^T) P where P is the permutation matrix defined by
    ``perm`` (``P[i, perm[i]] = 1``), i.e. ``Q[perm][:, perm] = L @ L.T``.
    """

    n: int
    perm: np.ndarray
    lower: sp.csc_matrix
    logdet: float
    _lu: object  # SuperLU object used for fast solves

    def solve(self, b):
        """Solve Q x = b for vector or matrix right-hand sides."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has leading dimension {b.shape[0]}, expected {self.n}")
        return self._lu.solve(b)

    def solve_lower(self, b):
        """Solve L y = b[perm]; useful for whitening / sampling."""
        from scipy.sparse.linalg import spsolve_triangular

        b = np.asarray(b, dtype=np.float64)
        return spsolve_triangular(self.lower.tocsr(), b[self.perm], lower=True)

    def solve_lower_t(self, y):
        """Return x with x[perm] = L^{-T} y, so that Q x = P^T L^{-T} y chain works.

        Used to draw N(0, Q^{-1}) samples as x where L^T x[perm] = z.
        """
        from scipy.sparse.linalg import spsolve_triangular

        y = np.asarray(y, dtype=np.float64)
        w = spsolve_triangular(self.lower.T.tocsr(), y, lower=False)
        x = np.empty(w.shape)
        x[self.perm] = w
        return x


def spd_factorize(q):
    """Factorize a symmetric positive definite sparse matrix.

    Uses SuperLU in symmetric mode with a fill-reducing ordering; the result
    carries the permuted lower Cholesky factor and the log-determinant.
    Raises NotPositiveDefinite when a non-positive pivot appears.
    """
    q = sp.csc_matrix(q)
    if q.shape[0] != q.shape[1]:
        raise DimensionMismatch(f"matrix is {q.shape}, expected square")
    n = q.shape[0]
    if n == 0:
        raise DimensionMismatch("empty matrix")
    try:
        lu = splu(
            q,
            diag_pivot_thresh=0.0,
            permc_spec="MMD_AT_PLUS_A",
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:  # singular matrix
        raise NotPositiveDefinite(-1) from exc
    du = lu.U.diagonal()
    bad = du <= 0.0
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NotPositiveDefinite(i, float(du[i]))
    # In symmetric mode perm_r == perm_c and U = D L^T, so chol = L sqrt(D).
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NotPositiveDefinite(-1)
    lower = (lu.L @ sp.diags(np.sqrt(du))).tocsc()
    logdet = float(np.sum(np.log(du)))
    perm = np.argsort(lu.perm_c)
    return SpdFactor(n=n, perm=perm, lower=lower, logdet=logdet, _lu=lu)


def solve(factor, b):
    """Solve Q x = b given an SpdFactor of Q."""
    return factor.solve(b)


def max_norm(a):
    """Max absolute entry of a sparse or dense matrix."""
    if sp.issparse(a):
        return 0.0 if a.nnz == 0 else float(np.max(np.abs(a.data)))
    return float(np.max(np.abs(a)))
