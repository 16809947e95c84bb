"""Exception hierarchy shared across the toolkit.

Two branches matter for the CLI: ValidationError maps to exit code 2
(bad inputs, schemas, configuration) and NumericalError maps to exit
code 3 (solver or optimization failure).
"""


class WheelLoadError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(WheelLoadError):
    """Bad inputs, schemas, or configuration."""


class NumericalError(WheelLoadError):
    """Solver or optimizer failure."""


class TravelOutOfRange(ValidationError):
    """Requested (x_a, x_d) lies outside the configured travel box."""


class KinematicSingularity(NumericalError):
    """Constraint Jacobian condition number exceeded the singular threshold."""


class NoConvergence(NumericalError):
    """Iteration budget exhausted before the residual tolerance was met."""


class CoincidentPoints(ValidationError):
    """Two hard points are too close to define a direction."""


class SingularEquilibrium(NumericalError):
    """Equilibrium system is numerically singular (degenerate geometry)."""


class InversionFailure(NumericalError):
    """No spring travel reproduces the demanded corner load."""


class ShapeMismatch(ValidationError):
    """Array shapes incompatible for the requested operation."""


class NonScalarRoot(ValidationError):
    """Reverse pass requested from a non-scalar node."""


class InsufficientSamples(ValidationError):
    """Too few Monte-Carlo samples for the requested statistic."""


class EmptyCollocationSet(ValidationError):
    """Physics loss enabled but no valid collocation points exist."""


class PhysicsUnavailable(NumericalError):
    """Too many collocation points failed the physics solve."""


class NanLoss(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index


class SchemaMismatch(ValidationError):
    """Dataset or frame file does not match the expected column set."""


class DatasetMismatch(ValidationError):
    """Reports being compared were computed on different datasets."""


class CheckpointVersion(ValidationError):
    """Checkpoint file version is not supported."""


class EmptySeries(ValidationError):
    """Metric requested over an empty series."""
