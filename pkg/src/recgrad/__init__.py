"""Recursive-gradient finite-sum optimization with a verification harness."""

from .data import Dataset, load_idx, make_class_images, make_synthetic, subset, write_idx
from .mlp import MlpSpec, init_normalized, make_mlp_problem, test_error
from .optim import (
    DivergenceError,
    OptimizerConfig,
    RateReport,
    RecursiveState,
    rate_report,
    recursive_update,
    sarah,
    sarah_in,
    sarah_plus_in,
    step_size_bound,
    svrg_in,
)
from .problems import (
    FiniteSumProblem,
    full_gradient,
    make_logistic,
    make_quadratic,
    make_sigmoid_nonconvex,
)
from .sampling import RngStream, sample_batch
from .verify import (
    EnumerationReport,
    check_batch_variance_identity,
    check_lemma2_identity,
    check_lemma3_bound,
)

__all__ = [
    "Dataset",
    "DivergenceError",
    "EnumerationReport",
    "FiniteSumProblem",
    "MlpSpec",
    "OptimizerConfig",
    "RateReport",
    "RecursiveState",
    "RngStream",
    "check_batch_variance_identity",
    "check_lemma2_identity",
    "check_lemma3_bound",
    "full_gradient",
    "init_normalized",
    "load_idx",
    "make_class_images",
    "make_logistic",
    "make_mlp_problem",
    "make_quadratic",
    "make_sigmoid_nonconvex",
    "make_synthetic",
    "rate_report",
    "recursive_update",
    "sarah",
    "sarah_in",
    "sarah_plus_in",
    "sample_batch",
    "step_size_bound",
    "subset",
    "svrg_in",
    "test_error",
    "write_idx",
]
