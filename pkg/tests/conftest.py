"""Shared helpers: small instance builders and dense oracles."""

import numpy as np
import pytest

from acocoa.linalg import ColMatrix, from_triplets
from acocoa.local_solver import (
    SubproblemView,
    localize_coord_min,
    pack_local_cols,
)
from acocoa.problems import HingeSvmDualInstance, LassoInstance


def random_colmatrix(rng, d, n, density=0.5) -> ColMatrix:
    entries = []
    for j in range(n):
        nnz = max(1, int(round(density * d)))
        rows = rng.choice(d, size=nnz, replace=False)
        for r in rows:
            v = rng.standard_normal()
            if v != 0.0:
                entries.append((int(r), j, float(v)))
    return from_triplets(entries, d, n)


def dense_matrix(entries, d, n):
    A = np.zeros((d, n))
    for r, c, v in entries:
        A[r, c] = v
    return A


def make_lasso_view(m, block, b, lam, w, y_block, z_block, theta, sigma_prime,
                    f_over_K=0.0):
    inst = LassoInstance(b=b, lambda1=lam, n=m.n)
    pair = inst.pair()
    return SubproblemView(
        w_t=np.asarray(w, dtype=np.float64),
        y_block=np.asarray(y_block, dtype=np.float64),
        z_block_start=np.asarray(z_block, dtype=np.float64),
        theta_t=theta,
        sigma_prime=sigma_prime,
        smoothness_Lf=pair.smoothness,
        local_cols=pack_local_cols(m, block),
        local_g=localize_coord_min(pair.coord_min, block),
        f_at_Ayt_over_K=f_over_K,
    )


def make_svm_view(m, block, labels, lam_reg, w, y_block, z_block, theta,
                  sigma_prime, f_over_K=0.0):
    inst = HingeSvmDualInstance(labels=labels, lambda_reg=lam_reg)
    pair = inst.pair()
    return SubproblemView(
        w_t=np.asarray(w, dtype=np.float64),
        y_block=np.asarray(y_block, dtype=np.float64),
        z_block_start=np.asarray(z_block, dtype=np.float64),
        theta_t=theta,
        sigma_prime=sigma_prime,
        smoothness_Lf=pair.smoothness,
        local_cols=pack_local_cols(m, block),
        local_g=localize_coord_min(pair.coord_min, block),
        f_at_Ayt_over_K=f_over_K,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
