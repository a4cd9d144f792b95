"""Outer loops: the accelerated solver, its non-accelerated baseline,
the momentum sequence, inner-accuracy schedules, and the audits that
check the convergence guarantees on real runs.

Per outer round both algorithms exchange exactly one d-vector reduce
(sum of local images A y^[k]) and one d-vector broadcast (w_t, the
gradient of the smooth term at the reduced point). The scalar f(Ay)/K
rides along with the broadcast as a closure argument; byte accounting
tracks the vector payloads, which dominate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import linalg
from .cluster import Cluster, CommStats, WorkerHandle, spawn_cluster
from .errors import (
    HistoryMissing,
    InvalidSpec,
    NonFinite,
    ReferenceMissing,
)
from .linalg import ColMatrix
from .local_solver import (
    LocalSolveResult,
    SubproblemView,
    exact_solve,
    local_mat_vec,
    measure_eps,
    sdca_solve,
)
from .partition import AggregationParams, Partition, mask
from .problems import ObjectivePair, duality_gap, primal_value


@dataclass(frozen=True)
class ThetaSequence:
    """Momentum schedule: theta_0 = 1, theta_{t+1} the positive root of
    theta^2 + gamma*theta_t^2*theta - theta_t^2 = 0."""

    gamma: float
    current: float = 1.0
    t: int = 0


def theta_next(seq: ThetaSequence) -> ThetaSequence:
    """Advance one step.

    The closed form (sqrt(g^2 th^4 + 4 th^2) - g th^2)/2 loses precision
    once theta is small (difference of nearly equal numbers), so the
    rationalized equivalent 2 th^2 / (sqrt(g^2 th^4 + 4 th^2) + g th^2)
    is used instead.
    """
    g = seq.gamma
    th = seq.current
    if th <= 0.0:
        raise InvalidSpec(f"theta must stay positive, got {th}")
    root = math.sqrt(g * g * th ** 4 + 4.0 * th * th)
    new = 2.0 * th * th / (root + g * th * th)
    return ThetaSequence(gamma=g, current=new, t=seq.t + 1)


@dataclass(frozen=True)
class EpsSchedule:
    """Inner accuracy targets eps_t = a_t * theta_t.

    kind "constant_a": a_t = r. kind "polynomial_a": a_t = r / t^p with
    p > 2 (t counted from 1).
    """

    kind: str
    r: float
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant_a", "polynomial_a"):
            raise InvalidSpec(f"unknown schedule kind {self.kind!r}")
        if self.r <= 0:
            raise InvalidSpec("schedule level r must be > 0")
        if self.kind == "polynomial_a" and self.p <= 2:
            raise InvalidSpec("polynomial schedule needs p > 2")

    def a(self, t: int) -> float:
        if self.kind == "constant_a":
            return self.r
        return self.r / float(max(t, 1)) ** self.p

    def eps_target(self, t: int, theta_t: float) -> float:
        return self.a(t) * theta_t


@dataclass
class BudgetCalibration:
    """Round-0 table mapping inner budget H to measured subproblem error.

    The working model is that at round t the realized error at budget H
    scales like theta_t * eps_hat(H): the subproblem's quadratic term
    carries a factor theta_t, so both the objective scale and the gap
    shrink proportionally. budget_for inverts the table with a 0.5 safety
    factor and log-log extrapolation past the measured range.
    """

    h_grid: np.ndarray
    eps_hat: np.ndarray  # monotone nonincreasing, floored at eps_floor
    eps_floor: float = 1e-15
    safety: float = 0.5
    max_budget: int = 10_000_000

    def budget_for(self, eps_target: float, theta_t: float) -> int:
        need = self.safety * eps_target / max(theta_t, 1e-300)
        hs = self.h_grid.astype(np.float64)
        es = np.maximum(self.eps_hat, self.eps_floor)
        if es[0] <= need:
            return int(hs[0])
        idx = np.nonzero(es <= need)[0]
        if len(idx):
            j = int(idx[0])
            # log-linear interpolation between the bracketing grid points
            l0, l1 = math.log(es[j - 1]), math.log(es[j])
            h0, h1 = math.log(hs[j - 1]), math.log(hs[j])
            frac = (math.log(need) - l0) / (l1 - l0)
            # the exp/log round trip can overshoot a grid point by one ulp;
            # shave a relative epsilon so exact hits stay on the grid
            h = math.exp(h0 + frac * (h1 - h0)) * (1.0 - 1e-12)
            return min(int(math.ceil(h)), self.max_budget)
        # extrapolate with the slope of the last decaying segment
        j = len(es) - 1
        i = j - 1
        while i > 0 and es[i] <= es[j] * (1 + 1e-12):
            i -= 1
        if es[i] <= es[j]:
            return self.max_budget
        slope = (math.log(hs[j]) - math.log(hs[i])) / (
            math.log(es[i]) - math.log(es[j])
        )
        extra = slope * (math.log(es[j]) - math.log(need))
        h = math.exp(math.log(hs[j]) + extra) * (1.0 - 1e-12)
        return min(int(math.ceil(h)), self.max_budget)


def _make_view(h: WorkerHandle, pair: ObjectivePair, theta_t, sigma_prime,
               f_over_K) -> SubproblemView:
    return SubproblemView(
        w_t=h.w_t,
        y_block=h.y,
        z_block_start=h.z,
        theta_t=theta_t,
        sigma_prime=sigma_prime,
        smoothness_Lf=pair.smoothness,
        local_cols=h.local_cols,
        local_g=h.local_g,
        f_at_Ayt_over_K=f_over_K,
    )


def acc_step(cluster: Cluster, pair: ObjectivePair, params: AggregationParams,
             theta: ThetaSequence,
             solve: Callable[[WorkerHandle, SubproblemView], LocalSolveResult],
             measure: bool = False):
    """One accelerated round; returns (new theta, f(Ay), measured eps or nan).

    Order per round: local y-update, one reduce of A y^[k], gradient at the
    coordinator, one broadcast of w_t, parallel local solves, local
    alpha/z updates, momentum advance.
    """
    g = params.gamma
    th = theta.current
    gt = g * th

    def phase_a(h: WorkerHandle):
        h.y = (1.0 - gt) * h.alpha + gt * h.z
        return local_mat_vec(h.local_cols, h.y)

    contribs = cluster.run_round(phase_a)
    Ay = cluster.all_reduce_sum(contribs)
    f_Ay = pair.f_value(Ay)
    if not np.isfinite(f_Ay):
        raise NonFinite("smooth term evaluated non-finite at the reduce point")
    w = pair.f_grad(Ay)
    cluster.broadcast(w)
    f_over_K = f_Ay / cluster.K

    def phase_b(h: WorkerHandle):
        view = _make_view(h, pair, th, params.sigma_prime, f_over_K)
        res = solve(h, view)
        eps = measure_eps(view, res) if measure else float("nan")
        z_new = res.z_block_new
        h.alpha = h.y + gt * (z_new - h.z)
        h.z = z_new
        return eps

    eps_vals = cluster.run_round(phase_b)
    cluster.end_round()
    eps_real = max(eps_vals) if measure else float("nan")
    return theta_next(theta), f_Ay, eps_real


def cocoa_plus_step(cluster: Cluster, pair: ObjectivePair,
                    params: AggregationParams,
                    solve: Callable[[WorkerHandle, SubproblemView], LocalSolveResult],
                    measure: bool = False):
    """One baseline round: same pattern with the momentum frozen out.

    The subproblem is built at y = z = alpha with quadratic coefficient
    Lf*sigma'/2 (theta pinned to 1) and the update is
    alpha^[k] += gamma*(z_new - alpha^[k]).
    """
    g = params.gamma

    def phase_a(h: WorkerHandle):
        h.y = h.alpha.copy()
        h.z = h.alpha.copy()
        return local_mat_vec(h.local_cols, h.y)

    contribs = cluster.run_round(phase_a)
    Ay = cluster.all_reduce_sum(contribs)
    f_Ay = pair.f_value(Ay)
    if not np.isfinite(f_Ay):
        raise NonFinite("smooth term evaluated non-finite at the reduce point")
    w = pair.f_grad(Ay)
    cluster.broadcast(w)
    f_over_K = f_Ay / cluster.K

    def phase_b(h: WorkerHandle):
        view = _make_view(h, pair, 1.0, params.sigma_prime, f_over_K)
        res = solve(h, view)
        eps = measure_eps(view, res) if measure else float("nan")
        h.alpha = h.alpha + g * (res.z_block_new - h.alpha)
        h.z = h.alpha.copy()
        return eps

    eps_vals = cluster.run_round(phase_b)
    cluster.end_round()
    eps_real = max(eps_vals) if measure else float("nan")
    return f_Ay, eps_real


METRIC_COLUMNS = [
    "t", "theta", "primal", "suboptimality", "duality_gap",
    "eps_target", "eps_realized", "inner_H",
    "reduces", "broadcasts", "bytes_up", "bytes_down",
]


@dataclass
class RunResult:
    metrics: List[dict]
    stats: CommStats
    alpha0: np.ndarray
    alpha_final: np.ndarray
    round_thetas: List[float]  # theta_t used in round t, t = 0..T-1
    gamma: float
    sigma_prime: float
    history: Optional[dict] = None  # alphas/zs per t when retained


def calibrate_budget(m: ColMatrix, part: Partition, pair: ObjectivePair,
                     params: AggregationParams, h_grid=None,
                     seed: int = 1234) -> BudgetCalibration:
    """Measure round-0 subproblem error at several budgets H.

    Builds the workers exactly as a run would, forms the first-round
    subproblem (theta = 1, start at zero), and records the worst-case
    gap to the cyclic-descent oracle for each H in the grid.
    """
    with spawn_cluster(part.K, part, m, pair, "in_process", seed) as cluster:
        n_k = max(part.sizes)
        if h_grid is None:
            base = np.geomspace(max(n_k // 4, 1), 64 * n_k, 12)
            h_grid = np.unique(base.round().astype(int))
        h_grid = np.asarray(sorted(int(h) for h in h_grid), dtype=np.int64)

        def phase_a(h):
            h.y = h.alpha.copy()
            return local_mat_vec(h.local_cols, h.y)

        contribs = cluster.run_round(phase_a)
        Ay = cluster.all_reduce_sum(contribs)
        w = pair.f_grad(Ay)
        cluster.broadcast(w)
        f_over_K = pair.f_value(Ay) / cluster.K

        worst = np.zeros(len(h_grid))
        for h in cluster.workers:
            view = _make_view(h, pair, 1.0, params.sigma_prime, f_over_K)
            oracle = exact_solve(view)
            for j, H in enumerate(h_grid):
                rng = np.random.default_rng((seed, h.id, int(H)))
                res = sdca_solve(view, int(H), rng)
                worst[j] = max(worst[j], res.final_Gk - oracle.final_Gk)
    eps_hat = np.minimum.accumulate(np.maximum(worst, 0.0))
    return BudgetCalibration(h_grid=h_grid, eps_hat=eps_hat)


def run(m: ColMatrix, part: Partition, pair: ObjectivePair,
        params: AggregationParams, T: int, algorithm: str = "acc",
        solve_mode: str = "sdca", H: int = 200,
        eps_schedule: Optional[EpsSchedule] = None,
        calibration: Optional[BudgetCalibration] = None,
        transport: str = "in_process", seed: int = 0,
        ref_opt: Optional[float] = None, audit_history: bool = False,
        eps_measure_every: int = 0) -> RunResult:
    """Drive T outer rounds and log one metrics row per round plus t=0.

    solve_mode "exact" runs the cyclic oracle to stationarity (eps = 0
    up to 1e-14 steps); "sdca" uses H random coordinate steps, where H
    comes from the eps_schedule + calibration pair when given.
    Deterministic for fixed seeds on both transports.
    """
    if algorithm not in ("acc", "cocoa_plus"):
        raise InvalidSpec(f"unknown algorithm {algorithm!r}")
    if solve_mode not in ("exact", "sdca"):
        raise InvalidSpec(f"unknown solve_mode {solve_mode!r}")
    if eps_schedule is not None and calibration is None:
        raise InvalidSpec("an eps schedule needs a budget calibration")
    params.validate(part.K)
    cluster = spawn_cluster(part.K, part, m, pair, transport, seed)
    try:
        theta = ThetaSequence(gamma=params.gamma)
        metrics: List[dict] = []
        round_thetas: List[float] = []
        history = {"alphas": [], "zs": []} if audit_history else None
        alpha0 = cluster.gather_alpha()
        want_gap = pair.supports_gap

        def log_row(t, theta_val, eps_target, eps_real, h_used):
            alpha = cluster.gather_alpha()
            primal = primal_value(pair, m, alpha)
            if not np.isfinite(primal):
                raise NonFinite(f"objective non-finite at round {t}")
            row = {
                "t": t,
                "theta": theta_val,
                "primal": primal,
                "suboptimality": (primal - ref_opt) if ref_opt is not None
                                 else float("nan"),
                "duality_gap": duality_gap(pair, m, alpha) if want_gap
                               else float("nan"),
                "eps_target": eps_target,
                "eps_realized": eps_real,
                "inner_H": h_used,
                "reduces": cluster.stats.reduces,
                "broadcasts": cluster.stats.broadcasts,
                "bytes_up": cluster.stats.bytes_up,
                "bytes_down": cluster.stats.bytes_down,
            }
            metrics.append(row)
            if history is not None:
                history["alphas"].append(alpha)
                history["zs"].append(cluster.gather_z())

        log_row(0, theta.current, float("nan"), float("nan"), 0)

        for t in range(T):
            theta_val = theta.current if algorithm == "acc" else 1.0
            eps_target = float("nan")
            h_used = 0
            if solve_mode == "exact":
                def solve(h, view):
                    return exact_solve(view)
            else:
                if eps_schedule is not None:
                    eps_target = eps_schedule.eps_target(t, theta_val)
                    h_used = calibration.budget_for(eps_target, theta_val)
                else:
                    h_used = H

                def solve(h, view, _H=h_used):
                    return sdca_solve(view, _H, h.rng)

            measure = (solve_mode == "sdca" and eps_measure_every > 0
                       and t % eps_measure_every == 0)
            if algorithm == "acc":
                round_thetas.append(theta.current)
                theta, _, eps_real = acc_step(
                    cluster, pair, params, theta, solve, measure)
            else:
                round_thetas.append(1.0)
                _, eps_real = cocoa_plus_step(
                    cluster, pair, params, solve, measure)
            log_row(t + 1, theta.current if algorithm == "acc" else 1.0,
                    eps_target, eps_real, h_used)

        return RunResult(
            metrics=metrics,
            stats=cluster.stats,
            alpha0=alpha0,
            alpha_final=cluster.gather_alpha(),
            round_thetas=round_thetas,
            gamma=params.gamma,
            sigma_prime=params.sigma_prime,
            history=history,
        )
    finally:
        cluster.close()


def convex_comb_audit(result: RunResult) -> dict:
    """Rebuild every alpha_t as a convex combination of z_0..z_t.

    The coefficients follow the recursion rho^l <- (1 - gamma*theta_t)*rho^l
    with the new weight gamma*theta_t on z_{t+1}. Requires a run recorded
    with audit_history=True.
    """
    if result.history is None:
        raise HistoryMissing("run was not recorded with audit_history=True")
    alphas = result.history["alphas"]
    zs = result.history["zs"]
    g = result.gamma
    rho = np.array([1.0])
    max_sum_err = 0.0
    max_recon_err = 0.0
    min_coeff = 1.0
    for t, alpha in enumerate(alphas):
        if t > 0:
            gt = g * result.round_thetas[t - 1]
            rho = np.append((1.0 - gt) * rho, gt)
        min_coeff = min(min_coeff, float(rho.min()))
        max_sum_err = max(max_sum_err, abs(float(rho.sum()) - 1.0))
        recon = np.zeros_like(alpha)
        for l, coeff in enumerate(rho):
            recon += coeff * zs[l]
        max_recon_err = max(max_recon_err,
                            float(np.linalg.norm(alpha - recon)))
    return {
        "min_coeff": min_coeff,
        "max_sum_err": max_sum_err,
        "max_recon_err": max_recon_err,
        "ok": (min_coeff >= -1e-15 and max_sum_err <= 1e-12
               and max_recon_err <= 1e-8),
    }


@dataclass
class BoundCertificate:
    C: float
    R: float
    lhs: np.ndarray  # measured suboptimality per round
    rhs: np.ndarray  # guaranteed envelope per round
    ok: bool
    worst_margin: float  # max(lhs - rhs); negative when comfortably inside


def exact_bound_audit(result: RunResult, m: ColMatrix, part: Partition,
                         pair: ObjectivePair, alpha_star,
                         ref_opt: float) -> BoundCertificate:
    """Check the exact-solve convergence envelope round by round.

    With exact local solves the guarantee is deterministic:
        subopt_t <= 4 / (t*g - g + 2)^2 * ((1-g)*subopt_0
                    + (g*Lf*sigma'/2) * C)
    where C = sum_k ||A(alpha*^[k] - alpha_0^[k])||^2. R (the largest
    image distance between the reference and the per-round oracle points)
    is reported for context only.
    """
    if alpha_star is None or ref_opt is None:
        raise ReferenceMissing("need a reference optimum for the audit")
    alpha_star = np.asarray(alpha_star, dtype=np.float64)
    g = result.gamma
    Lf = pair.smoothness
    sp = result.sigma_prime
    C = 0.0
    for k in range(part.K):
        diff = mask(alpha_star - result.alpha0, part, k)
        img = linalg.mat_vec(m, diff)
        C += float(img @ img)
    lhs = np.array([row["primal"] - ref_opt for row in result.metrics])
    ts = np.array([row["t"] for row in result.metrics], dtype=np.float64)
    delta0 = lhs[0]
    rhs = np.empty_like(lhs)
    rhs[0] = max(delta0, 0.0)  # t=0 row restates the starting gap
    denom = (ts[1:] * g - g + 2.0) ** 2
    rhs[1:] = 4.0 / denom * ((1.0 - g) * delta0 + 0.5 * g * Lf * sp * C)
    R = 0.0
    if result.history is not None:
        for z in result.history["zs"][1:]:
            for k in range(part.K):
                diff = mask(alpha_star - z, part, k)
                R = max(R, float(np.linalg.norm(linalg.mat_vec(m, diff))))
        if pair.conj_lipschitz is not None:
            # worst-case cap: each coordinate moves at most 2L, n_k of them
            cap = max(2.0 * pair.conj_lipschitz * nk for nk in part.sizes)
            col_max = float(m.col_norms.max()) if m.n else 0.0
            R = min(R, cap * col_max)
    margin = float((lhs - rhs).max())
    return BoundCertificate(
        C=C, R=R, lhs=lhs, rhs=rhs,
        ok=bool(np.all(lhs <= rhs + 1e-8)),
        worst_margin=margin,
    )


def iteration_count_check(result: RunResult, m: ColMatrix,
                               part: Partition, pair: ObjectivePair,
                               alpha_star, ref_opt: float,
                               epsilon: float) -> dict:
    """gamma=1 exact case: iterations to reach epsilon match the formula.

    T_formula = sqrt((2 * Lf * sigma' / epsilon) * C); the first measured
    t at suboptimality <= epsilon must be <= ceil(T_formula) + 1.
    """
    if result.gamma != 1.0:
        raise InvalidSpec("the iteration-count formula is the gamma=1 case")
    if alpha_star is None or ref_opt is None:
        raise ReferenceMissing("need a reference optimum")
    alpha_star = np.asarray(alpha_star, dtype=np.float64)
    C = 0.0
    for k in range(part.K):
        diff = mask(alpha_star - result.alpha0, part, k)
        img = linalg.mat_vec(m, diff)
        C += float(img @ img)
    T_formula = math.sqrt(2.0 * pair.smoothness * result.sigma_prime * C
                          / epsilon)
    first_t = None
    for row in result.metrics:
        if row["primal"] - ref_opt <= epsilon:
            first_t = row["t"]
            break
    ok = first_t is not None and first_t <= math.ceil(T_formula) + 1
    return {"first_t": first_t, "T_formula": T_formula, "ok": ok}
