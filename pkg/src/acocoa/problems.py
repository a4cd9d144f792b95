"""Primal/dual objective pairs, concrete instances and gap certification.

The primal problem minimizes f(A alpha) + sum_i g_i(alpha_i) over alpha;
its dual minimizes f*(w) + sum_i g_i*(-A_i.T w) over w, linked through the
map w(alpha) = grad f(A alpha).  Two instances ship: Lasso and the
hinge-loss SVM dual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg
from .errors import DimensionMismatch, GapUnsupported
from .linalg import ColMatrix

INF = float("inf")


@dataclass(frozen=True)
class CoordMin:
    """Descriptor of the closed-form single-coordinate minimizer of g_i.

    kind "soft_threshold": g_i(a) = lam * |a|.
    kind "box_linear":     g_i(a) = -labels[i] * a on labels[i]*a in
    [0, box_ub], +inf outside.
    """

    kind: str
    lam: float = 0.0
    labels: Optional[np.ndarray] = None
    box_ub: float = 0.0


@dataclass(frozen=True)
class ObjectivePair:
    """A problem instance: smooth term f, separable terms g_i, conjugates.

    smoothness is the Lipschitz constant of grad f; conj_lipschitz is the
    common Lipschitz constant of the g_i* (None when the conjugate is an
    indicator and supports_gap is False).
    """

    name: str
    f_value: Callable[[np.ndarray], float]
    f_grad: Callable[[np.ndarray], np.ndarray]
    smoothness: float
    g_value: Callable[[int, float], float]
    g_conj_value: Callable[[int, float], float]
    conj_lipschitz: Optional[float]
    f_conj_value: Callable[[np.ndarray], float]
    coord_min: CoordMin
    supports_gap: bool
    n: int


@dataclass(frozen=True)
class LassoInstance:
    """min over alpha of 0.5*||A alpha - b||^2 + lambda1*||alpha||_1."""

    b: np.ndarray
    lambda1: float
    n: int

    def pair(self) -> ObjectivePair:
        b = np.asarray(self.b, dtype=np.float64)
        lam = float(self.lambda1)
        if lam <= 0:
            raise ValueError("lambda1 must be > 0")
        # Conjugate slack absorbs rounding when testing |s| <= lambda1.
        tol = 1e-12 * max(lam, 1.0)

        def g_conj(i, s):
            return 0.0 if abs(s) <= lam + tol else INF

        return ObjectivePair(
            name="lasso",
            f_value=lambda u: 0.5 * float(np.dot(u - b, u - b)),
            f_grad=lambda u: u - b,
            smoothness=1.0,
            g_value=lambda i, a: lam * abs(a),
            g_conj_value=g_conj,
            conj_lipschitz=None,
            f_conj_value=lambda w: 0.5 * float(w @ w) + float(b @ w),
            coord_min=CoordMin(kind="soft_threshold", lam=lam),
            supports_gap=False,
            n=self.n,
        )


@dataclass(frozen=True)
class HingeSvmDualInstance:
    """Dual of (1/n) sum_i max(0, 1 - y_i A_i.T w) + (lambda_reg/2)||w||^2.

    The primal variables live in the box y_i*alpha_i in [0, 1/n] with
    g_i(alpha) = -y_i*alpha there; f(u) = ||u||^2 / (2*lambda_reg).
    """

    labels: np.ndarray
    lambda_reg: float

    @property
    def n(self):
        return len(self.labels)

    def pair(self) -> ObjectivePair:
        y = np.asarray(self.labels, dtype=np.float64)
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +/-1")
        lam = float(self.lambda_reg)
        if lam <= 0:
            raise ValueError("lambda_reg must be > 0")
        n = len(y)
        ub = 1.0 / n
        slack = 1e-9 * ub  # convex combinations may leave the box by rounding

        def g_value(i, a):
            m = y[i] * a
            if -slack <= m <= ub + slack:
                return -m
            return INF

        def g_conj(i, s):
            return ub * max(0.0, 1.0 + y[i] * s)

        return ObjectivePair(
            name="svm_dual",
            f_value=lambda u: float(u @ u) / (2.0 * lam),
            f_grad=lambda u: u / lam,
            smoothness=1.0 / lam,
            g_value=g_value,
            g_conj_value=g_conj,
            conj_lipschitz=ub,
            f_conj_value=lambda w: 0.5 * lam * float(w @ w),
            coord_min=CoordMin(kind="box_linear", labels=y, box_ub=ub),
            supports_gap=True,
            n=n,
        )


def _check_alpha(p: ObjectivePair, m: ColMatrix, alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (m.n,) or p.n != m.n:
        raise DimensionMismatch(
            f"alpha shape {alpha.shape}, matrix n={m.n}, objective n={p.n}"
        )
    return alpha


def g_sum(p: ObjectivePair, alpha: np.ndarray) -> float:
    total = 0.0
    for i, a in enumerate(alpha):
        gi = p.g_value(i, float(a))
        if gi == INF:
            return INF
        total += gi
    return total


def primal_value(p: ObjectivePair, m: ColMatrix, alpha) -> float:
    """f(A alpha) + sum_i g_i(alpha_i); +inf outside dom(g)."""
    alpha = _check_alpha(p, m, alpha)
    gs = g_sum(p, alpha)
    if gs == INF:
        return INF
    return p.f_value(linalg.mat_vec(m, alpha)) + gs


def dual_map(p: ObjectivePair, m: ColMatrix, alpha) -> np.ndarray:
    """w(alpha) = grad f(A alpha)."""
    alpha = _check_alpha(p, m, alpha)
    return p.f_grad(linalg.mat_vec(m, alpha))


def dual_value(p: ObjectivePair, m: ColMatrix, w) -> float:
    """f*(w) + sum_i g_i*(-A_i.T w)."""
    if not p.supports_gap:
        raise GapUnsupported(f"{p.name} has no finite conjugate objective")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (m.d,):
        raise DimensionMismatch(f"w shape {w.shape}, expected ({m.d},)")
    margins = -linalg.mat_t_vec(m, w)
    total = p.f_conj_value(w)
    for i in range(m.n):
        total += p.g_conj_value(i, float(margins[i]))
    return total


def duality_gap(p: ObjectivePair, m: ColMatrix, alpha) -> float:
    """O_A(alpha) + O_B(w(alpha)); nonnegative up to rounding."""
    if not p.supports_gap:
        raise GapUnsupported(f"{p.name} has no finite conjugate objective")
    return primal_value(p, m, alpha) + dual_value(p, m, dual_map(p, m, alpha))


def suboptimality(p: ObjectivePair, m: ColMatrix, alpha, ref_opt: float) -> float:
    """Primal value minus a reference optimum (may be ~ -1e-9 if ref is loose)."""
    return primal_value(p, m, alpha) - ref_opt
