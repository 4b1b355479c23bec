"""Mixture-model estimation from moments.

Observed data moments are mixtures of polynomials in the component
parameters; completing the induced parameter moment matrix (directly, by
corner completion, or through a trace-penalized semidefinite relaxation) and
eigen-decomposing its shift structure recovers the components.
"""

from .completion import (
    CompletionResult,
    MomentConstraintSystem,
    MultiviewMoments,
    SdpConfig,
    complete_corner,
    complete_multiview,
    solve_linear_completion,
    solve_sdp_nuclear,
)
from .extraction import (
    ColumnBasis,
    ComponentEstimate,
    column_space_basis,
    extract_parameters,
    hankel_moment_matrices,
    multiplication_matrix,
    recover_weights,
    select_row_basis,
    univariate_atoms_from_moments,
)
from .momentmat import (
    LinearMomentConstraint,
    MomentSequence,
    RankTolerance,
    assemble,
    build_moment_index,
    equality_constraint_family,
    flat_extension_rank,
    localizing_index,
    numeric_rank,
    riesz_coefficients,
)
from .models import (
    BinomialAdapter,
    GaussianAdapter,
    MixtureSpec,
    MlrAdapter,
    MultiviewAdapter,
    exact_observation_means,
    hermite_moment_coeffs,
    make_adapter,
    random_mixture_spec,
    separability_check,
)
from .pipeline import (
    ConstraintSpec,
    FitConfig,
    FitReport,
    em_gaussian_baseline,
    fit,
    relative_error,
    run_experiment,
)
from .polyring import MonomialBasis, Polynomial, monomials_up_to, poly_eval

__version__ = "0.1.0"

__all__ = [
    "BinomialAdapter",
    "ColumnBasis",
    "ComponentEstimate",
    "CompletionResult",
    "ConstraintSpec",
    "FitConfig",
    "FitReport",
    "GaussianAdapter",
    "LinearMomentConstraint",
    "MixtureSpec",
    "MlrAdapter",
    "MomentConstraintSystem",
    "MomentSequence",
    "MonomialBasis",
    "MultiviewAdapter",
    "MultiviewMoments",
    "Polynomial",
    "RankTolerance",
    "SdpConfig",
    "assemble",
    "build_moment_index",
    "column_space_basis",
    "complete_corner",
    "complete_multiview",
    "em_gaussian_baseline",
    "equality_constraint_family",
    "exact_observation_means",
    "extract_parameters",
    "fit",
    "flat_extension_rank",
    "hankel_moment_matrices",
    "hermite_moment_coeffs",
    "localizing_index",
    "make_adapter",
    "monomials_up_to",
    "multiplication_matrix",
    "numeric_rank",
    "poly_eval",
    "random_mixture_spec",
    "recover_weights",
    "relative_error",
    "riesz_coefficients",
    "run_experiment",
    "select_row_basis",
    "separability_check",
    "solve_linear_completion",
    "solve_sdp_nuclear",
    "univariate_atoms_from_moments",
]
