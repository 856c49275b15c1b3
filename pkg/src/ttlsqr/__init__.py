"""Least squares with multiterm Kronecker-structured operators in tensor-train format.

The pieces: ``TtTensor`` and its rounding (``tt``), the operator ``L`` and
its QR preconditioner (``kron``), truncated TT-LSQR (``solver``), randomized
sketching (``sketch``), query classification (``classify``) and the
finite-difference test problems (``pde``).
"""
from .classify import (
    EvalReport,
    GroupedCorpus,
    build_corpus,
    build_query_problem,
    classify_c1,
    classify_c2,
    classify_c3,
    classify_c4,
    evaluate_harness,
    kmeans_cluster,
    synthetic_corpus,
)
from .fileio import load_matrix_market, load_operator_manifest, read_trace_csv, read_tt_json, write_trace_csv, write_tt_json
from .kron import (
    KronSumOperator,
    Preconditioner,
    RankDeficientError,
    op_apply,
    op_apply_adjoint,
    op_to_dense,
    precond_build,
    precond_solve,
)
from .pde import PdeProblem, build_convection_problem, build_variable_coefficient_problem, run_convergence_study
from .sketch import SketchOptions, Sketcher, sketch_apply, sketch_build, sketch_operator, two_pass_solve
from .solver import LsqrTrace, SolveOptions, SolveStatus, estimate_residuals, tt_lsqr, vector_lsqr
from .tt import (
    RoundingReport,
    TtTensor,
    tt_axpy,
    tt_eval,
    tt_from_dense,
    tt_inner,
    tt_mode_apply,
    tt_norm,
    tt_rank1,
    tt_round,
    tt_scale,
    tt_sum,
    tt_to_dense,
    tt_zeros,
)

__version__ = "0.1.0"
