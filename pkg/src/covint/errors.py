"""Exception hierarchy shared across the package.

Every error carries a stable machine-readable ``code`` so CLI reports and
tests can assert on failure modes without string-matching messages.
"""

from __future__ import annotations

__all__ = [
    "CovintError",
    "AsymmetricKernelError",
    "NotPositiveSemidefiniteError",
    "SolveFailedError",
    "InconclusiveLimitError",
    "NotInRkhsError",
    "NotInRangeError",
    "StructuralFailError",
    "HorizonExceededError",
    "MonotonicityError",
    "NoDeflatorError",
    "IncompleteMarketError",
    "LinearProgramError",
    "NotSupermartingaleError",
    "NegativeWealthError",
    "MissingDecompositionError",
    "ConfigInvalidError",
]


class CovintError(Exception):
    """Base class for all package-specific failures."""

    code = "ERROR"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


class AsymmetricKernelError(CovintError):
    """Kernel matrix is not symmetric within tolerance."""

    code = "ASYMMETRIC"


class NotPositiveSemidefiniteError(CovintError):
    """Kernel matrix has an eigenvalue below the negative tolerance."""

    code = "NOT_PSD"


class SolveFailedError(CovintError):
    """A regularized linear solve lost all accuracy (pathological scale)."""

    code = "SOLVE_FAILED"


class InconclusiveLimitError(CovintError):
    """Regularization profile neither settled nor diverged over the schedule."""

    code = "INCONCLUSIVE"


class NotInRkhsError(CovintError):
    """Vector lies outside the kernel's column span."""

    code = "NOT_IN_RKHS"


class NotInRangeError(CovintError):
    """Some per-step increment fails membership in its kernel increment."""

    code = "NOT_IN_RC"


class StructuralFailError(CovintError):
    """Finite-variation part is not absolutely continuous w.r.t. the kernel."""

    code = "STRUCTURAL_FAIL"


class HorizonExceededError(CovintError):
    """Metric truncation horizon reaches past the end of the time grid."""

    code = "HORIZON_EXCEEDED"


class MonotonicityError(CovintError):
    """Nested-subset norm certificate violated beyond numerical tolerance."""

    code = "MONOTONICITY_VIOLATION"


class NoDeflatorError(CovintError):
    """Deflator polytope has no strictly positive point."""

    code = "NO_DEFLATOR"


class IncompleteMarketError(CovintError):
    """Backward replication hit a node where the claim is not attainable."""

    code = "INCOMPLETE"


class LinearProgramError(CovintError):
    """LP solve ended unbounded/infeasible where an optimum was required."""

    code = "LP_FAIL"


class NotSupermartingaleError(CovintError):
    """Deflated process fails the supermartingale test at some node."""

    code = "NOT_SUPERMARTINGALE"


class NegativeWealthError(CovintError):
    """Strategy wealth leaves the admissible (nonnegative) class."""

    code = "NEGATIVE_WEALTH"


class MissingDecompositionError(CovintError):
    """Operation requires drift/martingale parts that were not supplied."""

    code = "MISSING_DECOMPOSITION"


class ConfigInvalidError(CovintError):
    """Experiment configuration failed schema validation."""

    code = "CONFIG_INVALID"
