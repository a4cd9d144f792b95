"""Benchmark harness: data loading, synthetic instances, the reference
oracle, metrics CSV io, rate fitting, and the experiment driver.

Metrics CSV schema (fixed column order, one row per outer round plus t=0):

    t, theta, primal, suboptimality, duality_gap, eps_target,
    eps_realized, inner_H, reduces, broadcasts, bytes_up, bytes_down

Floats are printed with 17 significant digits so parsing a written file
reproduces the in-memory values exactly. Wall-clock time is printed in
the run summary only; it never enters the CSV, which keeps output files
byte-stable across runs with equal seeds.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import _kernels, linalg
from .errors import (
    EmptyFile,
    InsufficientData,
    InvalidSpec,
    OracleNotConverged,
    ParseError,
)
from .linalg import ColMatrix, from_triplets, normalize_columns
from .orchestrator import (
    METRIC_COLUMNS,
    BudgetCalibration,
    EpsSchedule,
    RunResult,
    calibrate_budget,
    run,
)
from .partition import (
    AggregationParams,
    Partition,
    estimate_sigma_prime_min,
    partition_balanced,
    safe_sigma_prime,
)
from .problems import (
    HingeSvmDualInstance,
    LassoInstance,
    ObjectivePair,
    duality_gap,
    primal_value,
)

OUTPUT_DIR_ENV = "ACOCOA_OUT"


# ---------------------------------------------------------------------------
# LIBSVM text format

def load_libsvm(path) -> Tuple[ColMatrix, np.ndarray]:
    """Read `label idx:val ...` lines; examples become columns.

    Feature indices are 1-based in the file and map to 0-based rows.
    Columns are normalized to unit norm. Labels are mapped to +/-1 by
    thresholding at 0 (with a warning if anything other than +/-1 is seen).
    """
    entries = []
    labels = []
    d_max = 0
    raw_label_warn = False
    with open(path) as fh:
        lineno = 0
        for line in fh:
            lineno += 1
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            tokens = body.split()
            col = len(labels)
            try:
                lab = float(tokens[0])
            except ValueError:
                raise ParseError(f"bad label {tokens[0]!r}",
                                 line=lineno, token=1) from None
            if lab not in (1.0, -1.0):
                raw_label_warn = True
            labels.append(1.0 if lab > 0 else -1.0)
            seen = set()
            for tno, tok in enumerate(tokens[1:], start=2):
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(f"missing ':' in {tok!r}",
                                     line=lineno, token=tno)
                try:
                    row = int(idx)
                    x = float(val)
                except ValueError:
                    raise ParseError(f"bad pair {tok!r}",
                                     line=lineno, token=tno) from None
                if row < 1:
                    raise ParseError(f"index {row} is not 1-based",
                                     line=lineno, token=tno)
                if row in seen:
                    raise ParseError(f"duplicate feature {row}",
                                     line=lineno, token=tno)
                seen.add(row)
                d_max = max(d_max, row)
                if x != 0.0:
                    entries.append((row - 1, col, x))
    if not labels:
        raise EmptyFile(f"no data lines in {path}")
    if raw_label_warn:
        warnings.warn("labels outside {+1,-1} thresholded at 0", stacklevel=2)
    m = from_triplets(entries, max(d_max, 1), len(labels))
    m, _ = normalize_columns(m)
    return m, np.asarray(labels)


def save_libsvm(path, m: ColMatrix, labels):
    """Canonical writer: sorted 1-based indices, 17-digit values."""
    labels = np.asarray(labels)
    with open(path, "w") as fh:
        for j in range(m.n):
            lo, hi = m.indptr[j], m.indptr[j + 1]
            parts = [f"{int(labels[j]):+d}" if float(labels[j]).is_integer()
                     else f"{labels[j]:.17g}"]
            for p in range(lo, hi):
                parts.append(f"{m.indices[p] + 1}:{m.data[p]:.17g}")
            fh.write(" ".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Synthetic instances

@dataclass(frozen=True)
class SynthSpec:
    n: int
    d: int
    density: float
    noise: float
    seed: int


def synth_problem(spec: SynthSpec, kind: str):
    """Seeded sparse Gaussian columns, unit-normalized.

    lasso: returns (matrix, b, planted) with b = A planted + noise and a
    planted support of max(1, n//10) coordinates.
    svm_dual: returns (matrix, labels, w_planted) with labels from the
    sign of a planted linear scorer; noise flips that fraction of labels.
    """
    if spec.n < 1 or spec.d < 1:
        raise InvalidSpec(f"need n,d >= 1, got n={spec.n}, d={spec.d}")
    if not (0.0 < spec.density <= 1.0):
        raise InvalidSpec(f"density must be in (0,1], got {spec.density}")
    if spec.noise < 0:
        raise InvalidSpec("noise must be >= 0")
    rng = np.random.default_rng(spec.seed)
    entries = []
    nnz_per_col = max(1, int(round(spec.density * spec.d)))
    for j in range(spec.n):
        rows = rng.choice(spec.d, size=nnz_per_col, replace=False)
        vals = rng.standard_normal(nnz_per_col)
        for r, v in zip(rows, vals):
            if v != 0.0:
                entries.append((int(r), j, float(v)))
    m = from_triplets(entries, spec.d, spec.n)
    m, _ = normalize_columns(m)
    if kind == "lasso":
        s = max(1, spec.n // 10)
        support = rng.choice(spec.n, size=s, replace=False)
        planted = np.zeros(spec.n)
        planted[support] = rng.standard_normal(s)
        b = linalg.mat_vec(m, planted)
        if spec.noise > 0:
            b = b + spec.noise * rng.standard_normal(spec.d)
        return m, b, planted
    if kind == "svm_dual":
        w = rng.standard_normal(spec.d)
        scores = linalg.mat_t_vec(m, w)
        labels = np.where(scores >= 0, 1.0, -1.0)
        if spec.noise > 0:
            flip = rng.random(spec.n) < spec.noise
            labels[flip] *= -1.0
        return m, labels, w
    raise InvalidSpec(f"unknown problem kind {kind!r}")


# ---------------------------------------------------------------------------
# Reference oracle (single machine, independent of the distributed path)

def _lasso_stationarity(m: ColMatrix, z, r, lam) -> float:
    """Largest one-sided first-order violation across coordinates."""
    g = linalg.mat_t_vec(m, r)
    viol = 0.0
    for i in range(m.n):
        if m.col_norms[i] == 0.0:
            continue
        if z[i] > 0.0:
            viol = max(viol, abs(g[i] + lam))
        elif z[i] < 0.0:
            viol = max(viol, abs(g[i] - lam))
        else:
            viol = max(viol, max(abs(g[i]) - lam, 0.0))
    return viol


def reference_solution(problem, m: ColMatrix, tol: float = 1e-12,
                       max_sweeps: int = 2_000_000):
    """High-accuracy optimum of the full problem by cyclic coordinate descent.

    Lasso converges on the one-sided stationarity measure; the SVM dual
    self-certifies via the duality gap (<= max(tol, 1e-10)). Returns
    (alpha_star, opt_value). Raises OracleNotConverged at the sweep cap.
    """
    pair = problem.pair()
    chunk = 200
    if isinstance(problem, LassoInstance):
        b = np.asarray(problem.b, dtype=np.float64)
        z = np.zeros(m.n)
        r = -b.copy()  # r tracks A z - b
        norms_sq = (m.col_norms ** 2).astype(np.float64)
        done = 0
        while done < max_sweeps:
            _kernels.lasso_cd_kernel(m.indptr, m.indices, m.data, norms_sq,
                                     z, r, problem.lambda1, 0.0, chunk)
            done += chunk
            r = linalg.mat_vec(m, z) - b  # refresh to cancel drift
            if _lasso_stationarity(m, z, r, problem.lambda1) <= tol:
                return z, primal_value(pair, m, z)
        raise OracleNotConverged(
            f"lasso oracle: stationarity {_lasso_stationarity(m, z, r, problem.lambda1):g}"
            f" > {tol:g} after {done} sweeps"
        )
    if isinstance(problem, HingeSvmDualInstance):
        y = np.asarray(problem.labels, dtype=np.float64)
        alpha = np.zeros(m.n)
        v = np.zeros(m.d)  # tracks A alpha
        norms_sq = (m.col_norms ** 2).astype(np.float64)
        gap_tol = max(tol, 1e-10)
        done = 0
        while done < max_sweeps:
            _kernels.svm_cd_kernel(m.indptr, m.indices, m.data, norms_sq,
                                   alpha, v, y, problem.lambda_reg,
                                   1.0 / m.n, 0.0, chunk)
            done += chunk
            v = linalg.mat_vec(m, alpha)
            if duality_gap(pair, m, alpha) <= gap_tol:
                return alpha, primal_value(pair, m, alpha)
        raise OracleNotConverged(
            f"svm oracle: gap {duality_gap(pair, m, alpha):g} > {gap_tol:g}"
            f" after {done} sweeps"
        )
    raise InvalidSpec(f"no reference oracle for {type(problem).__name__}")


# ---------------------------------------------------------------------------
# Metrics CSV

def write_metrics_csv(path, rows: List[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            out = []
            for col in METRIC_COLUMNS:
                v = row[col]
                if isinstance(v, float):
                    out.append(f"{v:.17g}")
                else:
                    out.append(str(v))
            writer.writerow(out)


_INT_COLUMNS = {"t", "inner_H", "reduces", "broadcasts",
                "bytes_up", "bytes_down"}


def read_metrics_csv(path) -> List[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path} has no header")
        if header != METRIC_COLUMNS:
            raise ParseError(f"unexpected header {header}", line=1)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(METRIC_COLUMNS):
                raise ParseError(f"{len(rec)} fields", line=lineno)
            row = {}
            for col, val in zip(METRIC_COLUMNS, rec):
                row[col] = int(val) if col in _INT_COLUMNS else float(val)
            rows.append(row)
    return rows


def fit_rate(rows: List[dict], column: str, window: Tuple[float, float]):
    """Least-squares slope of log(column) vs log(t) over t in the window.

    Rows with t < 1 or value <= 1e-12 (noise floor) are dropped; fewer
    than 8 usable rows raises InsufficientData. Returns (slope, rms_resid).
    """
    lo, hi = window
    ts, vs = [], []
    for row in rows:
        t = row["t"]
        v = row[column]
        if t >= max(lo, 1) and t <= hi and np.isfinite(v) and v > 1e-12:
            ts.append(math.log(float(t)))
            vs.append(math.log(float(v)))
    if len(ts) < 8:
        raise InsufficientData(
            f"{len(ts)} usable rows in window [{lo},{hi}], need >= 8"
        )
    x = np.asarray(ts)
    yv = np.asarray(vs)
    design = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(design, yv, rcond=None)
    resid = yv - design @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


# ---------------------------------------------------------------------------
# Run configuration

@dataclass
class RunConfig:
    """Flat experiment description; serializable as key=value lines."""

    problem: str = "lasso"               # lasso | svm_dual
    libsvm_path: str = ""                # exactly one data source:
    n: int = 0                           # synthetic when libsvm_path empty
    d: int = 0
    density: float = 1.0
    noise: float = 0.0
    data_seed: int = 0
    K: int = 4
    gamma: str = "1"                     # "1/k" | explicit number
    sigma_prime: str = "safe"            # safe | estimate | explicit number
    algorithm: str = "both"              # acc | baseline | both
    T: int = 100
    solve_mode: str = "sdca"             # sdca | exact
    H: int = 200
    eps_kind: str = "none"               # none | constant_a | polynomial_a
    eps_r: float = 0.0
    eps_p: float = 0.0
    lambda1: float = 0.1
    lambda_reg: float = 0.01
    seed: int = 0
    transport: str = "in_process"
    output_dir: str = "."
    tag: str = "run"
    reference: bool = True               # compute alpha* for suboptimality
    eps_measure_every: int = 0
    audit_history: bool = False

    def resolve_gamma(self) -> float:
        if self.gamma.strip().lower() == "1/k":
            return 1.0 / self.K
        return float(self.gamma)


_CONFIG_TYPES = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}


def save_config(path, cfg: RunConfig):
    with open(path, "w") as fh:
        for name in RunConfig.__dataclass_fields__:
            fh.write(f"{name} = {getattr(cfg, name)}\n")


def parse_config(path) -> RunConfig:
    """Read `key = value` lines; '#' starts a comment; unknown keys error."""
    cfg = RunConfig()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, sep, val = body.partition("=")
            if not sep:
                raise ParseError("expected key = value", line=lineno)
            key = key.strip()
            val = val.strip()
            if key not in RunConfig.__dataclass_fields__:
                raise ParseError(f"unknown key {key!r}", line=lineno)
            current = getattr(cfg, key)
            try:
                if isinstance(current, bool):
                    setattr(cfg, key, val.lower() in ("1", "true", "yes"))
                elif isinstance(current, int):
                    setattr(cfg, key, int(val))
                elif isinstance(current, float):
                    setattr(cfg, key, float(val))
                else:
                    setattr(cfg, key, val)
            except ValueError:
                raise ParseError(f"bad value {val!r} for {key}",
                                 line=lineno) from None
    return cfg


def build_problem(cfg: RunConfig):
    """Materialize (matrix, instance, pair) from the config's data source."""
    if cfg.libsvm_path and cfg.n:
        raise InvalidSpec("choose one data source: libsvm_path or n/d")
    if cfg.libsvm_path:
        m, labels = load_libsvm(cfg.libsvm_path)
        target = labels
    else:
        if not (cfg.n and cfg.d):
            raise InvalidSpec("synthetic data needs n and d")
        spec = SynthSpec(cfg.n, cfg.d, cfg.density, cfg.noise, cfg.data_seed)
        m, target, _ = synth_problem(spec, cfg.problem)
    if cfg.problem == "lasso":
        if cfg.libsvm_path:
            # regression target from labels when a file is used for lasso
            target = np.asarray(target, dtype=np.float64)
        inst = LassoInstance(b=target, lambda1=cfg.lambda1, n=m.n)
    elif cfg.problem == "svm_dual":
        inst = HingeSvmDualInstance(labels=target, lambda_reg=cfg.lambda_reg)
    else:
        raise InvalidSpec(f"unknown problem {cfg.problem!r}")
    return m, inst, inst.pair()


def resolve_params(cfg: RunConfig, m: ColMatrix, part: Partition) -> AggregationParams:
    gamma = cfg.resolve_gamma()
    choice = cfg.sigma_prime.strip().lower()
    if choice == "safe":
        sp = safe_sigma_prime(gamma, cfg.K)
    elif choice == "estimate":
        est = estimate_sigma_prime_min(m, part, gamma, seed=cfg.seed)
        # under-estimates void the convergence guarantee: inflate 5%,
        # then clamp into the provable [gamma, gamma*K] bracket
        sp = min(max(est * 1.05, gamma), gamma * cfg.K)
    else:
        sp = float(cfg.sigma_prime)
    return AggregationParams(gamma=gamma, sigma_prime=sp).validate(cfg.K)


def run_experiment(cfg: RunConfig, quiet: bool = False):
    """Execute the configured runs; write one CSV per algorithm.

    Returns {algorithm: (csv_path, RunResult)}. A partition sidecar is
    written next to the CSVs so runs are exactly replayable.
    """
    import time

    out_dir = os.environ.get(OUTPUT_DIR_ENV, cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    m, inst, pair = build_problem(cfg)
    part = partition_balanced(m.n, cfg.K, seed=cfg.seed)
    params = resolve_params(cfg, m, part)
    part.to_sidecar(os.path.join(out_dir, f"{cfg.tag}_partition.json"))

    ref_opt = None
    if cfg.reference:
        _, ref_opt = reference_solution(inst, m)

    schedule = None
    calibration = None
    if cfg.eps_kind != "none":
        schedule = EpsSchedule(kind=cfg.eps_kind, r=cfg.eps_r, p=cfg.eps_p)
        calibration = calibrate_budget(m, part, pair, params, seed=cfg.seed)

    algos = ["acc", "cocoa_plus"] if cfg.algorithm == "both" else [
        {"acc": "acc", "baseline": "cocoa_plus"}.get(cfg.algorithm,
                                                     cfg.algorithm)]
    results = {}
    for algo in algos:
        t0 = time.perf_counter()
        res = run(
            m, part, pair, params, cfg.T, algorithm=algo,
            solve_mode=cfg.solve_mode, H=cfg.H, eps_schedule=schedule,
            calibration=calibration, transport=cfg.transport, seed=cfg.seed,
            ref_opt=ref_opt, audit_history=cfg.audit_history,
            eps_measure_every=cfg.eps_measure_every,
        )
        wall = time.perf_counter() - t0
        path = os.path.join(out_dir, f"{cfg.tag}_{algo}.csv")
        write_metrics_csv(path, res.metrics)
        results[algo] = (path, res)
        if not quiet:
            last = res.metrics[-1]
            bits = [f"{algo}: T={cfg.T}", f"wall={wall:.2f}s"]
            if ref_opt is not None:
                bits.append(f"final subopt={last['suboptimality']:.3e}")
            if pair.supports_gap:
                bits.append(f"final gap={last['duality_gap']:.3e}")
            bits.append(
                f"bytes={res.stats.bytes_up + res.stats.bytes_down}")
            try:
                col = ("suboptimality" if ref_opt is not None
                       else "duality_gap")
                slope, _ = fit_rate(res.metrics, col,
                                    (max(cfg.T // 4, 1), cfg.T))
                bits.append(f"tail slope={slope:.2f}")
            except InsufficientData:
                pass
            print("  ".join(bits))
    return results
