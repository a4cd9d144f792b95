"""Distributed primal-dual optimization on a simulated K-worker cluster.

An accelerated communication-efficient outer loop (one d-vector reduce and
one d-vector broadcast per round) over per-worker subproblems solved by
randomized exact coordinate steps, plus the non-accelerated baseline, two
problem instances (Lasso, hinge-SVM dual), and a benchmark harness that
verifies the convergence-rate and communication claims at desk scale.
"""

from . import errors
from .bench import (
    RunConfig,
    SynthSpec,
    fit_rate,
    load_libsvm,
    read_metrics_csv,
    reference_solution,
    run_experiment,
    save_libsvm,
    synth_problem,
    write_metrics_csv,
)
from .cluster import Cluster, CommStats, WorkerHandle, spawn_cluster
from .linalg import ColMatrix, from_triplets, mat_t_vec, mat_vec, normalize_columns
from .local_solver import (
    LocalSolveResult,
    SubproblemView,
    coord_exact_min,
    exact_solve,
    measure_eps,
    sdca_solve,
    subproblem_value,
)
from .orchestrator import (
    BoundCertificate,
    BudgetCalibration,
    EpsSchedule,
    RunResult,
    ThetaSequence,
    acc_step,
    calibrate_budget,
    cocoa_plus_step,
    convex_comb_audit,
    iteration_count_check,
    run,
    exact_bound_audit,
    theta_next,
)
from .partition import (
    AggregationParams,
    Partition,
    estimate_sigma_prime_min,
    mask,
    partition_balanced,
    safe_sigma_prime,
    spectral_quantities,
)
from .problems import (
    HingeSvmDualInstance,
    LassoInstance,
    ObjectivePair,
    dual_map,
    dual_value,
    duality_gap,
    primal_value,
    suboptimality,
)

__version__ = "0.1.0"
