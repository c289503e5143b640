"""Matrix-free randomized trace and diagonal estimation with exchangeable
estimators (XTrace, XNysTrace, XDiag) and classical baselines."""

from .adaptive import AdaptiveConfig, AdaptiveReport, run_adaptive
from .estimators import (
    DIAG_ESTIMATORS,
    ESTIMATORS,
    DegenerateInputError,
    DiagReport,
    TraceReport,
    admissible_budget,
    bks_diag,
    error_estimate,
    hutch,
    hutchpp,
    lra_trace,
    nystrompp,
    xdiag,
    xnystrace,
    xtrace,
)
from .linop import (
    DenseOperator,
    DenseSpectralOperator,
    DimensionError,
    IdentityOperator,
    LinearOperator,
    SpectrumSpec,
    TfimHamiltonian,
    exact_diag,
    exact_trace,
    make_function_operator,
    make_synthetic_operator,
    make_tfim,
    read_matrix_market,
)
from .sampling import TestMatrix, extend_test_matrix, sample_test_matrix, trial_seeds

__version__ = "0.1.0"
