"""Tensor completion by lifting masked least squares to structured full
regressions solved with (approximate) preconditioned Richardson iteration."""

from .core import (
    CPModel,
    DenseTensor,
    ObservationMask,
    TTModel,
    TuckerModel,
    devectorize,
    fold,
    frobenius_norm,
    inner,
    mode_product,
    reconstruct,
    rre,
    unfold,
    vectorize,
)
from .operators import (
    BetaEstimationError,
    DenseOperator,
    KhatriRaoOperator,
    KroneckerOperator,
    KroneckerTimesMatrixOperator,
    LeverageProfile,
    RankDeficiencyWarning,
    SketchConfig,
    StructuredOperator,
    TTChainOperator,
    estimate_beta,
    incoherence,
    ridge_leverage_scores,
    sample_sketch,
    solve_least_squares,
)
from .lifted import (
    LiftedProblem,
    RichardsonConfig,
    SolveReport,
    accelerated_mini_als,
    approx_mini_als,
    em_one_step,
    iteration_bound,
    mini_als_step,
)
from .completion import (
    AlsPlan,
    FitRecord,
    FitTrace,
    MaskedTensor,
    cp_factor_update,
    run_completion,
    tt_canonicalize,
    tt_core_update,
    tucker_core_update,
    tucker_factor_update,
)
from .coupled import CoupledInstance, coupled_half_step, coupled_solve
from . import synth, tensorio

__version__ = "0.1.0"
