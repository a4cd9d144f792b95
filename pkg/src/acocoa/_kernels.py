"""Numba inner loops for coordinate updates.

All kernels operate on a packed column-sparse block (indptr/rows/vals over
local column ids) and mutate z and the running image vector in place.
kind codes: 0 = soft-threshold (L1), 1 = box-clipped linear term.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def _coord_update(indptr, rows, vals, norms_sq, z, u, atw, kappa,
                  i, kind, lam, labels, box_ub):
    """Exactly minimize the block objective along local coordinate i.

    u is the running image A(z - z_start); atw[i] = A_i^T w. Returns the
    absolute step taken.
    """
    nsq = norms_sq[i]
    if nsq <= 0.0:
        return 0.0
    h = kappa * nsq
    lo = indptr[i]
    hi = indptr[i + 1]
    aidu = 0.0
    for p in range(lo, hi):
        aidu += vals[p] * u[rows[p]]
    grad = atw[i] + kappa * aidu
    zi = z[i]
    if kind == 0:
        v = zi - grad / h
        thr = lam / h
        if v > thr:
            new = v - thr
        elif v < -thr:
            new = v + thr
        else:
            new = 0.0
    else:
        yi = labels[i]
        new = zi + (yi - grad) / h
        m = yi * new
        if m < 0.0:
            m = 0.0
        elif m > box_ub:
            m = box_ub
        new = yi * m
    delta = new - zi
    if delta != 0.0:
        z[i] = new
        for p in range(lo, hi):
            u[rows[p]] += delta * vals[p]
    return abs(delta)


@njit(cache=True)
def sdca_kernel(indptr, rows, vals, norms_sq, z, u, atw, kappa,
                picks, kind, lam, labels, box_ub):
    """Apply pre-drawn random coordinate picks; z and u updated in place."""
    for t in range(picks.shape[0]):
        _coord_update(indptr, rows, vals, norms_sq, z, u, atw, kappa,
                      picks[t], kind, lam, labels, box_ub)


@njit(cache=True)
def cyclic_kernel(indptr, rows, vals, norms_sq, z, u, atw, kappa,
                  kind, lam, labels, box_ub, tol, max_sweeps):
    """Cyclic sweeps until the largest coordinate step is <= tol.

    Returns (sweeps_done, last_max_step).
    """
    nk = z.shape[0]
    maxd = 0.0
    for sweep in range(max_sweeps):
        maxd = 0.0
        for i in range(nk):
            d = _coord_update(indptr, rows, vals, norms_sq, z, u, atw,
                              kappa, i, kind, lam, labels, box_ub)
            if d > maxd:
                maxd = d
        if maxd <= tol:
            return sweep + 1, maxd
    return max_sweeps, maxd


@njit(cache=True)
def lasso_cd_kernel(indptr, rows, vals, norms_sq, z, r, lam, tol, max_sweeps):
    """Full-problem coordinate descent for 0.5||Az-b||^2 + lam*||z||_1.

    r = Az - b is maintained in place. Returns (sweeps_done, last_max_step).
    """
    n = z.shape[0]
    maxd = 0.0
    for sweep in range(max_sweeps):
        maxd = 0.0
        for i in range(n):
            nsq = norms_sq[i]
            if nsq <= 0.0:
                continue
            lo = indptr[i]
            hi = indptr[i + 1]
            g = 0.0
            for p in range(lo, hi):
                g += vals[p] * r[rows[p]]
            v = z[i] - g / nsq
            thr = lam / nsq
            if v > thr:
                new = v - thr
            elif v < -thr:
                new = v + thr
            else:
                new = 0.0
            delta = new - z[i]
            if delta != 0.0:
                z[i] = new
                for p in range(lo, hi):
                    r[rows[p]] += delta * vals[p]
            ad = abs(delta)
            if ad > maxd:
                maxd = ad
        if maxd <= tol:
            return sweep + 1, maxd
    return max_sweeps, maxd


@njit(cache=True)
def svm_cd_kernel(indptr, rows, vals, norms_sq, alpha, v, labels, lam_reg,
                  box_ub, tol, max_sweeps):
    """Coordinate descent for ||A a||^2/(2 lam) - y.a on the per-coordinate box.

    v = A alpha is maintained in place. Returns (sweeps_done, last_max_step).
    """
    n = alpha.shape[0]
    maxd = 0.0
    for sweep in range(max_sweeps):
        maxd = 0.0
        for i in range(n):
            nsq = norms_sq[i]
            if nsq <= 0.0:
                continue
            lo = indptr[i]
            hi = indptr[i + 1]
            g = 0.0
            for p in range(lo, hi):
                g += vals[p] * v[rows[p]]
            yi = labels[i]
            # minimize g/lam*(a - a_i) + nsq/(2 lam)(a - a_i)^2 - yi*a on box
            new = alpha[i] + (yi - g / lam_reg) * lam_reg / nsq
            m = yi * new
            if m < 0.0:
                m = 0.0
            elif m > box_ub:
                m = box_ub
            new = yi * m
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                for p in range(lo, hi):
                    v[rows[p]] += delta * vals[p]
            ad = abs(delta)
            if ad > maxd:
                maxd = ad
        if maxd <= tol:
            return sweep + 1, maxd
    return max_sweeps, maxd
