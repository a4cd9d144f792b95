"""Per-worker subproblem construction and approximate solvers.

Each worker minimizes, over its own coordinates,

    G_k(z) = psi_k(z) + f(Ay)/K + w.T A(z - y^[k])
             + (Lf * theta * sigma' / 2) * ||A(z - z_start^[k])||^2

with single-coordinate exact minimization: randomized (SDCA) for the
production path, cyclic-to-stationarity as the high-accuracy oracle.
The non-separable part of G_k is exactly quadratic along each coordinate,
so the coordinate step is a closed form (soft-threshold or box clip).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, OracleNotConverged, ZeroCurvature
from .linalg import ColMatrix
from .problems import CoordMin

INF = float("inf")

KIND_CODES = {"soft_threshold": 0, "box_linear": 1}


@dataclass(frozen=True)
class LocalCols:
    """A worker's columns repacked with local contiguous ids."""

    cols: np.ndarray  # global column ids, sorted
    indptr: np.ndarray
    rows: np.ndarray
    vals: np.ndarray
    norms_sq: np.ndarray
    col_ids: np.ndarray  # local col id per stored entry, for fast A^T w
    d: int

    @property
    def n_k(self):
        return len(self.cols)


def pack_local_cols(m: ColMatrix, block) -> LocalCols:
    block = np.sort(np.asarray(block, dtype=np.int64))
    indptr = np.zeros(len(block) + 1, dtype=np.int64)
    rows_parts = []
    vals_parts = []
    for j, col in enumerate(block):
        lo, hi = m.indptr[col], m.indptr[col + 1]
        indptr[j + 1] = indptr[j] + (hi - lo)
        rows_parts.append(m.indices[lo:hi])
        vals_parts.append(m.data[lo:hi])
    rows = np.concatenate(rows_parts) if rows_parts else np.zeros(0, np.int64)
    vals = np.concatenate(vals_parts) if vals_parts else np.zeros(0, np.float64)
    col_ids = np.repeat(np.arange(len(block), dtype=np.int64), np.diff(indptr))
    return LocalCols(
        cols=block,
        indptr=indptr,
        rows=rows.astype(np.int64),
        vals=vals.astype(np.float64),
        norms_sq=(m.col_norms[block] ** 2).astype(np.float64),
        col_ids=col_ids,
        d=m.d,
    )


@dataclass(frozen=True)
class LocalG:
    """The block's separable terms, with labels re-indexed locally."""

    kind: str
    kind_code: int
    lam: float
    labels: np.ndarray  # local slice (dummy zeros for soft_threshold)
    box_ub: float


def localize_coord_min(cm: CoordMin, block) -> LocalG:
    block = np.sort(np.asarray(block, dtype=np.int64))
    if cm.kind == "soft_threshold":
        labels = np.zeros(len(block), dtype=np.float64)
    elif cm.kind == "box_linear":
        labels = np.asarray(cm.labels, dtype=np.float64)[block]
    else:
        raise ValueError(f"unknown coordinate-minimizer kind {cm.kind!r}")
    return LocalG(
        kind=cm.kind,
        kind_code=KIND_CODES[cm.kind],
        lam=float(cm.lam),
        labels=labels,
        box_ub=float(cm.box_ub),
    )


def local_g_value(g: LocalG, z: np.ndarray) -> float:
    """psi_k(z) = sum of the block's separable terms; +inf outside dom."""
    if g.kind == "soft_threshold":
        return g.lam * float(np.abs(z).sum())
    margins = g.labels * z
    slack = 1e-9 * g.box_ub
    if np.any(margins < -slack) or np.any(margins > g.box_ub + slack):
        return INF
    return -float(margins.sum())


def local_mat_vec(lc: LocalCols, x: np.ndarray) -> np.ndarray:
    """A restricted to the block, applied to local coefficients x."""
    prods = lc.vals * x[lc.col_ids]
    return np.bincount(lc.rows, weights=prods, minlength=lc.d)


def local_mat_t_vec(lc: LocalCols, w: np.ndarray) -> np.ndarray:
    """A_i^T w for every local column i."""
    prods = lc.vals * w[lc.rows]
    return np.bincount(lc.col_ids, weights=prods, minlength=lc.n_k)


@dataclass(frozen=True)
class SubproblemView:
    """Everything a worker needs for one round: no global vectors."""

    w_t: np.ndarray
    y_block: np.ndarray
    z_block_start: np.ndarray
    theta_t: float
    sigma_prime: float
    smoothness_Lf: float
    local_cols: LocalCols
    local_g: LocalG
    f_at_Ayt_over_K: float

    @property
    def kappa(self) -> float:
        """Quadratic coefficient Lf * theta * sigma'."""
        return self.smoothness_Lf * self.theta_t * self.sigma_prime


@dataclass(frozen=True)
class LocalSolveResult:
    z_block_new: np.ndarray
    delta_image: np.ndarray  # A(z_new - z_start), maintained incrementally
    inner_iters_used: int
    final_Gk: float


def subproblem_value(view: SubproblemView, z_block) -> float:
    """Evaluate G_k at a candidate block vector."""
    z = np.asarray(z_block, dtype=np.float64)
    nk = view.local_cols.n_k
    if z.shape != (nk,):
        raise DimensionMismatch(f"candidate shape {z.shape}, block size {nk}")
    psi = local_g_value(view.local_g, z)
    if psi == INF:
        return INF
    atw = local_mat_t_vec(view.local_cols, view.w_t)
    lin = float(atw @ (z - view.y_block))
    dimg = local_mat_vec(view.local_cols, z - view.z_block_start)
    quad = 0.5 * view.kappa * float(dimg @ dimg)
    return psi + view.f_at_Ayt_over_K + lin + quad


def coord_exact_min(view: SubproblemView, u: np.ndarray, z_cur: np.ndarray,
                    i: int) -> float:
    """Exact minimizer of G_k along local coordinate i, holding others fixed.

    u is the running image A(z_cur - z_start). Pure: returns the new z_i
    without mutating state (the kernels do the in-place variant).
    """
    lc = view.local_cols
    nsq = lc.norms_sq[i]
    lo, hi = lc.indptr[i], lc.indptr[i + 1]
    aiw = float(lc.vals[lo:hi] @ view.w_t[lc.rows[lo:hi]])
    aidu = float(lc.vals[lo:hi] @ u[lc.rows[lo:hi]])
    grad = aiw + view.kappa * aidu
    h = view.kappa * nsq
    g = view.local_g
    zi = float(z_cur[i])
    if h <= 0.0:
        # Flat direction: only legal if the coordinate is already stationary.
        if g.kind == "soft_threshold":
            stat = abs(grad) <= g.lam + 1e-12 and zi == 0.0
        else:
            yi = g.labels[i]
            drv = grad - yi  # derivative of the linear coordinate objective
            mrg = yi * zi
            stat = (
                (abs(drv) <= 1e-12)
                or (mrg <= 1e-15 and yi * drv >= 0.0)
                or (mrg >= g.box_ub - 1e-15 and yi * drv <= 0.0)
            )
        if stat:
            return zi
        raise ZeroCurvature(f"h=0 at non-stationary coordinate {i}")
    if g.kind == "soft_threshold":
        v = zi - grad / h
        thr = g.lam / h
        return float(np.sign(v) * max(abs(v) - thr, 0.0))
    yi = g.labels[i]
    new = zi + (yi - grad) / h
    return float(yi * min(max(yi * new, 0.0), g.box_ub))


def sdca_solve(view: SubproblemView, H: int, rng: np.random.Generator,
               record_trace: bool = False) -> LocalSolveResult:
    """H uniformly random exact coordinate steps from z_start.

    Deterministic for a fixed rng state (picks are pre-drawn). With
    record_trace=True the result carries a .trace attribute listing G_k
    after every step (test sizes only; runs the slow python path).
    """
    if view.theta_t <= 0.0 or view.kappa <= 0.0:
        raise ZeroCurvature(
            f"refusing to solve with theta={view.theta_t}, kappa={view.kappa}"
        )
    lc = view.local_cols
    z = view.z_block_start.astype(np.float64).copy()
    u = np.zeros(lc.d, dtype=np.float64)
    if H < 0:
        raise ValueError("H must be >= 0")
    picks = rng.integers(0, lc.n_k, size=H).astype(np.int64)
    trace = None
    if record_trace:
        trace = []
        for t in range(H):
            i = int(picks[t])
            if lc.norms_sq[i] <= 0.0:
                trace.append(subproblem_value(view, z))
                continue
            new = coord_exact_min(view, u, z, i)
            delta = new - z[i]
            if delta != 0.0:
                lo, hi = lc.indptr[i], lc.indptr[i + 1]
                u[lc.rows[lo:hi]] += delta * lc.vals[lo:hi]
                z[i] = new
            trace.append(subproblem_value(view, z))
    else:
        atw = local_mat_t_vec(lc, view.w_t)
        _kernels.sdca_kernel(
            lc.indptr, lc.rows, lc.vals, lc.norms_sq, z, u, atw,
            view.kappa, picks, view.local_g.kind_code, view.local_g.lam,
            view.local_g.labels, view.local_g.box_ub,
        )
    result = LocalSolveResult(
        z_block_new=z,
        delta_image=u,
        inner_iters_used=H,
        final_Gk=subproblem_value(view, z),
    )
    if record_trace:
        object.__setattr__(result, "trace", trace)  # frozen dataclass escape
    return result


def exact_solve(view: SubproblemView, tol: float = 1e-14,
                max_sweeps: int = 200000) -> LocalSolveResult:
    """Cyclic coordinate descent to stationarity; the test-mode oracle."""
    if view.theta_t <= 0.0 or view.kappa <= 0.0:
        raise ZeroCurvature(
            f"refusing to solve with theta={view.theta_t}, kappa={view.kappa}"
        )
    lc = view.local_cols
    z = view.z_block_start.astype(np.float64).copy()
    u = np.zeros(lc.d, dtype=np.float64)
    atw = local_mat_t_vec(lc, view.w_t)
    sweeps, last = _kernels.cyclic_kernel(
        lc.indptr, lc.rows, lc.vals, lc.norms_sq, z, u, atw, view.kappa,
        view.local_g.kind_code, view.local_g.lam, view.local_g.labels,
        view.local_g.box_ub, tol, max_sweeps,
    )
    if last > tol:
        raise OracleNotConverged(
            f"cyclic oracle stalled at step size {last:g} after {sweeps} sweeps"
        )
    return LocalSolveResult(
        z_block_new=z,
        delta_image=u,
        inner_iters_used=sweeps * lc.n_k,
        final_Gk=subproblem_value(view, z),
    )


def measure_eps(view: SubproblemView, result: LocalSolveResult,
                oracle: Optional[LocalSolveResult] = None) -> float:
    """Realized suboptimality G_k(result) - min G_k (test instrumentation)."""
    if oracle is None:
        oracle = exact_solve(view)
    return result.final_Gk - oracle.final_Gk
