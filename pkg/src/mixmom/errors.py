"""Exception hierarchy shared across the solver and extraction stages."""


class MixmomError(Exception):
    """Base class for all package-specific failures."""


class InputError(MixmomError):
    """Malformed files, schemas or argument combinations."""


class SolverError(MixmomError):
    """Completion-stage failures (linear or semidefinite)."""


class InconsistentSystemError(SolverError):
    """Full-rank linear system whose least-squares residual exceeds tolerance."""

    def __init__(self, residual: float, tolerance: float):
        super().__init__(
            f"constraint system is inconsistent: least-squares residual "
            f"{residual:.3e} exceeds tolerance {tolerance:.3e}"
        )
        self.residual = residual
        self.tolerance = tolerance


class SingularBlockError(SolverError):
    """A pivot block required to be invertible is numerically rank-deficient."""


class ConvergenceError(SolverError):
    """The iterative solver stopped above its residual tolerances."""


class ExtractionError(MixmomError):
    """Parameter-recovery failures downstream of completion."""


class RankDeficiencyError(ExtractionError):
    """The completed matrix does not have the rank the caller requested."""


class RowBasisError(ExtractionError):
    """No admissible, well-conditioned row basis could be selected."""


class ComplexEigenvalueError(ExtractionError):
    """Extraction produced eigenvalues with non-negligible imaginary parts."""
