"""Sparse column-major matrix kernels and spectral estimation.

The data matrix stores examples as columns in CSC-like flat arrays
(indptr/indices/data), which matches every access pattern of the solvers:
per-column dot products, column partitions and local Gram operators.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateEntry,
    IndexOutOfRange,
    NonFinite,
)


class ColMatrix:
    """Immutable sparse matrix with d rows and n columns, stored by column.

    Row indices within each column are strictly increasing and explicit
    zeros are never stored.  `col_norms` caches the Euclidean norm of each
    column.  All arrays are marked read-only so instances can be shared
    freely across concurrent workers.
    """

    __slots__ = ("d", "n", "indptr", "indices", "data", "col_norms")

    def __init__(self, d, n, indptr, indices, data, col_norms=None):
        self.d = int(d)
        self.n = int(n)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if col_norms is None:
            sq = np.bincount(
                _col_ids(self.indptr, self.n), weights=self.data**2, minlength=self.n
            )
            col_norms = np.sqrt(sq)
        self.col_norms = np.ascontiguousarray(col_norms, dtype=np.float64)
        for arr in (self.indptr, self.indices, self.data, self.col_norms):
            arr.setflags(write=False)

    def column(self, i):
        """Column i as a dense d-vector."""
        if not 0 <= i < self.n:
            raise IndexOutOfRange(f"column {i} not in [0, {self.n})")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        out = np.zeros(self.d, dtype=np.float64)
        out[self.indices[lo:hi]] = self.data[lo:hi]
        return out

    def column_sparse(self, i):
        """Column i as (row_indices, values) read-only views."""
        if not 0 <= i < self.n:
            raise IndexOutOfRange(f"column {i} not in [0, {self.n})")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def nnz(self):
        return int(self.indptr[-1])

    def dense(self):
        out = np.zeros((self.d, self.n))
        for i in range(self.n):
            idx, vals = self.column_sparse(i)
            out[idx, i] = vals
        return out

    def __repr__(self):
        return f"ColMatrix(d={self.d}, n={self.n}, nnz={self.nnz()})"


def _col_ids(indptr, n):
    return np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))


def from_triplets(entries, d, n) -> ColMatrix:
    """Build a ColMatrix from (row, col, value) triplets.

    Duplicate (row, col) pairs are rejected; explicit zeros are dropped.
    """
    if not entries:
        return ColMatrix(d, n, np.zeros(n + 1, dtype=np.int64), [], [])
    rows = np.asarray([e[0] for e in entries], dtype=np.int64)
    cols = np.asarray([e[1] for e in entries], dtype=np.int64)
    vals = np.asarray([e[2] for e in entries], dtype=np.float64)
    if rows.min() < 0 or rows.max() >= d:
        raise IndexOutOfRange(f"row index outside [0, {d})")
    if cols.min() < 0 or cols.max() >= n:
        raise IndexOutOfRange(f"col index outside [0, {n})")
    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    same = (np.diff(cols) == 0) & (np.diff(rows) == 0)
    if same.any():
        j = int(np.flatnonzero(same)[0])
        raise DuplicateEntry(f"duplicate entry at (row={rows[j]}, col={cols[j]})")
    keep = vals != 0.0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    counts = np.bincount(cols, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return ColMatrix(d, n, indptr, rows, vals)


def normalize_columns(m: ColMatrix):
    """Divide each nonzero column by its norm; return (matrix, scales).

    Zero columns are left unchanged and get scale 1.0.  The result satisfies
    max(col_norms) <= 1 + 1e-12.
    """
    scales = np.where(m.col_norms > 0.0, m.col_norms, 1.0)
    per_entry = np.repeat(scales, np.diff(m.indptr))
    data = m.data / per_entry
    norms = np.where(m.col_norms > 0.0, 1.0, 0.0)
    return ColMatrix(m.d, m.n, m.indptr, m.indices, data, norms), scales


def mat_vec(m: ColMatrix, x: np.ndarray) -> np.ndarray:
    """Compute A @ x as the sparse accumulation sum_i x_i A_i."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.n,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({m.n},)")
    weights = m.data * np.repeat(x, np.diff(m.indptr))
    return np.bincount(m.indices, weights=weights, minlength=m.d).astype(np.float64)


def mat_t_vec(m: ColMatrix, w: np.ndarray) -> np.ndarray:
    """Compute A.T @ w, i.e. the per-column dot products A_i . w."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (m.d,):
        raise DimensionMismatch(f"w has shape {w.shape}, expected ({m.d},)")
    prod = m.data * w[m.indices]
    return np.bincount(_col_ids(m.indptr, m.n), weights=prod, minlength=m.n)


def col_dot(m: ColMatrix, i: int, w: np.ndarray) -> float:
    """Sparse dot product of column i with a dense length-d vector."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (m.d,):
        raise DimensionMismatch(f"w has shape {w.shape}, expected ({m.d},)")
    idx, vals = m.column_sparse(i)
    return float(vals @ w[idx])


def subset_mat_vec(m: ColMatrix, cols: np.ndarray, x_local: np.ndarray) -> np.ndarray:
    """Compute sum over j of x_local[j] * A_{cols[j]} (a masked mat_vec)."""
    out = np.zeros(m.d)
    for j, c in enumerate(cols):
        xv = x_local[j]
        if xv != 0.0:
            lo, hi = m.indptr[c], m.indptr[c + 1]
            out[m.indices[lo:hi]] += xv * m.data[lo:hi]
    return out


def power_max_eig(
    op: Callable[[np.ndarray], np.ndarray],
    size: int,
    iters: int = 200,
    tol: float = 1e-10,
    seed: int = 0,
) -> float:
    """Estimate the maximum eigenvalue of a symmetric PSD linear map.

    Plain power iteration from a seeded random unit vector; returns the
    final Rayleigh quotient.  Raises NonFinite if the map produces NaN/Inf.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = op(v)
        if not np.all(np.isfinite(u)):
            raise NonFinite("linear map produced non-finite values")
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        lam_new = float(v @ u)
        v = u / nu
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            return lam_new
        lam = lam_new
    return lam


def gram_op(m: ColMatrix) -> Callable[[np.ndarray], np.ndarray]:
    """The n x n Gram map v -> A.T (A v)."""
    return lambda v: mat_t_vec(m, mat_vec(m, v))


def require_finite(vec: np.ndarray, what: str = "vector") -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise NonFinite(f"{what} contains NaN/Inf")
    return vec
