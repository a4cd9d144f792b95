"""Column partitioning across workers, masking, aggregation parameters.

Columns are split disjointly over K workers. The aggregation parameter
gamma in [1/K, 1] and the subproblem scaling sigma' must satisfy
||A alpha||^2 <= (sigma'/gamma) sum_k ||A alpha^[k]||^2 for all alpha;
sigma' = gamma*K is always safe, and a power-iteration estimator of the
minimal value is available for tighter subproblems.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List

import numpy as np

from . import linalg
from .errors import (
    IndexOutOfRange,
    InvalidGamma,
    InvalidK,
    NonFinite,
    SingularBlock,
)
from .linalg import ColMatrix


@dataclass(frozen=True)
class Partition:
    """Disjoint split of columns [0, n) into K sorted blocks."""

    K: int
    blocks: tuple  # tuple of int64 arrays, sorted within each block
    assign: np.ndarray  # column -> worker id
    sizes: tuple

    @property
    def n(self):
        return len(self.assign)

    def to_sidecar(self, path):
        with open(path, "w") as fh:
            json.dump([blk.tolist() for blk in self.blocks], fh)

    @staticmethod
    def from_sidecar(path) -> "Partition":
        with open(path) as fh:
            raw = json.load(fh)
        return _build([np.asarray(b, dtype=np.int64) for b in raw])


def _build(blocks: List[np.ndarray]) -> Partition:
    K = len(blocks)
    n = sum(len(b) for b in blocks)
    assign = np.full(n, -1, dtype=np.int64)
    for k, blk in enumerate(blocks):
        if np.any(blk < 0) or np.any(blk >= n):
            raise IndexOutOfRange("block column id out of [0, n)")
        if np.any(assign[blk] != -1):
            raise InvalidK("blocks overlap")
        assign[blk] = k
    if np.any(assign == -1):
        raise InvalidK("blocks do not cover [0, n)")
    return Partition(
        K=K,
        blocks=tuple(np.sort(b).astype(np.int64) for b in blocks),
        assign=assign,
        sizes=tuple(len(b) for b in blocks),
    )


def partition_balanced(n: int, K: int, seed: int = 0) -> Partition:
    """Shuffle columns and cut into K near-equal contiguous chunks.

    Shuffling decorrelates blocks on sorted datasets; the seed makes the
    split reproducible. Block sizes differ by at most one.
    """
    if not (1 <= K <= n):
        raise InvalidK(f"need 1 <= K <= n, got K={K}, n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cuts = np.linspace(0, n, K + 1).round().astype(int)
    return _build([perm[cuts[k]:cuts[k + 1]] for k in range(K)])


def mask(alpha, part: Partition, k: int) -> np.ndarray:
    """Zero out every entry outside block k."""
    if not (0 <= k < part.K):
        raise IndexOutOfRange(f"worker {k} out of range for K={part.K}")
    alpha = np.asarray(alpha, dtype=np.float64)
    out = np.zeros_like(alpha)
    out[part.blocks[k]] = alpha[part.blocks[k]]
    return out


@dataclass(frozen=True)
class AggregationParams:
    """gamma in [1/K, 1] and sigma_prime >= gamma (safe upper end gamma*K)."""

    gamma: float
    sigma_prime: float

    def validate(self, K: int):
        if not (1.0 / K - 1e-12 <= self.gamma <= 1.0 + 1e-12):
            raise InvalidGamma(
                f"gamma={self.gamma} outside [1/{K}, 1]"
            )
        if self.sigma_prime < self.gamma * (1 - 1e-12):
            raise InvalidGamma(
                f"sigma_prime={self.sigma_prime} below gamma={self.gamma}"
            )
        return self


def safe_sigma_prime(gamma: float, K: int) -> float:
    """The always-valid choice sigma' = gamma*K."""
    if not (1.0 / K - 1e-12 <= gamma <= 1.0 + 1e-12):
        raise InvalidGamma(f"gamma={gamma} outside [1/{K}, 1]")
    return gamma * K


def _block_isqrt(gram: np.ndarray) -> np.ndarray:
    """Pseudo-inverse square root of a PSD Gram block via eigh."""
    vals, vecs = np.linalg.eigh(gram)
    top = max(vals[-1], 0.0)
    pos = vals > max(1e-12 * top, 1e-300)
    if not np.any(pos):
        return None
    inv = np.zeros_like(vals)
    inv[pos] = 1.0 / np.sqrt(vals[pos])
    return (vecs * inv) @ vecs.T


def estimate_sigma_prime_min(
    m: ColMatrix, part: Partition, gamma: float, iters: int = 300, seed: int = 0
) -> float:
    """gamma times the largest ratio ||A alpha||^2 / sum_k ||A alpha^[k]||^2.

    The ratio is maximized by power iteration on C = B^{-1/2} A^T A B^{-1/2}
    where B is the block-diagonal part of A^T A. Directions where B is
    singular contribute 0/0 and are projected out (the numerator vanishes
    there too, so the restriction is exact).

    Raises SingularBlock when every block Gram is identically zero.
    """
    if not (1.0 / part.K - 1e-12 <= gamma <= 1.0 + 1e-12):
        raise InvalidGamma(f"gamma={gamma} outside [1/{part.K}, 1]")
    n = m.n
    dense_blocks = []
    any_pos = False
    for blk in part.blocks:
        cols = np.stack([m.column(int(i)) for i in blk], axis=1) if len(blk) else np.zeros((m.d, 0))
        isq = _block_isqrt(cols.T @ cols) if len(blk) else None
        if isq is not None:
            any_pos = True
        dense_blocks.append((blk, isq))
    if not any_pos:
        raise SingularBlock("all block Gram matrices are zero")

    def half(v):
        # B^{-1/2} v, blockwise
        out = np.zeros(n)
        for blk, isq in dense_blocks:
            if isq is not None:
                out[blk] = isq @ v[blk]
        return out

    def op(v):
        u = linalg.mat_vec(m, half(v))
        return half(linalg.mat_t_vec(m, u))

    lam = linalg.power_max_eig(op, n, iters=iters, seed=seed)
    if not np.isfinite(lam):
        raise NonFinite("power iteration diverged")
    return gamma * lam


def spectral_quantities(m: ColMatrix, part: Partition, iters: int = 300, seed: int = 0):
    """Spectral size measures of A and its blocks.

    Returns a dict with sigma_tilde_sq = lambda_max(A^T A), per-block
    sigma_k_sq, and the weighted sum sigma_sq = sum_k n_k * sigma_k_sq.
    For unit-norm columns each is bounded by its column count.
    """
    sig_tilde = linalg.power_max_eig(linalg.gram_op(m), m.n, iters=iters, seed=seed)
    sig_k = []
    for blk in part.blocks:
        if len(blk) == 0:
            sig_k.append(0.0)
            continue
        cols = np.stack([m.column(int(i)) for i in blk], axis=1)
        gram = cols.T @ cols
        sig_k.append(
            linalg.power_max_eig(lambda v: gram @ v, len(blk), iters=iters, seed=seed)
        )
    sigma_sq = float(sum(nk * s for nk, s in zip(part.sizes, sig_k)))
    for v in [sig_tilde] + sig_k:
        if not np.isfinite(v):
            raise NonFinite("power iteration diverged")
    return {
        "sigma_tilde_sq": float(sig_tilde),
        "sigma_k_sq": [float(s) for s in sig_k],
        "sigma_sq": sigma_sq,
    }
