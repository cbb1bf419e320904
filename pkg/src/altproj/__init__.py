"""Regularized alternating projections for low-rank matrix completion.

Exact and inexact variants of the alternating projection method for
two-set feasibility problems, with a bidiagonalization engine that stops
rank projections early once a computable certificate guarantees enough
accuracy for the outer iteration.
"""

from .dense import RngSpec, frobenius_norm, gaussian_matrix
from .lanczos import (
    BidiagState,
    SmallSVD,
    TruncatedFactors,
    assemble_truncated,
    bidiag_step,
    init_bidiag,
    residual_norms,
    ritz_error_bound,
    small_svd,
)
from .projections import (
    InexactCertificate,
    IntervalUnion,
    ObservedData,
    inexact_project_rank,
    kappa,
    project_affine_mask,
    project_interval_union,
    project_rank_exact,
)
from .solvers import (
    IntervalFeasibility,
    IterationRecord,
    MatrixFeasibility,
    SolverConfig,
    SolverTrace,
    eval_l,
    eval_q,
    project_rank_ritz,
    read_trace_csv,
    run,
    step_apm,
    step_irapm,
    step_rapm,
    write_trace_csv,
)
from .harness import (
    CampaignConfig,
    CampaignSummary,
    ProblemInstance,
    build_instance,
    generate_gaussian,
    load_image_problem,
    metric_e_mse,
    metric_e_omega,
    read_problem_dir,
    run_campaign,
    synthetic_scene,
    write_problem_dir,
)

__version__ = "0.1.0"
