"""Exception hierarchy shared by every liftnet module."""


class LiftnetError(Exception):
    """Base class for all errors raised by liftnet."""


class DomainError(LiftnetError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class OutOfDomainError(DomainError):
    """A point lies outside (or on the wall of) a channel cross-section."""


class DegeneratePointError(DomainError):
    """The local velocity is too small for the feature map to be defined."""


class UndefinedMetricError(DomainError):
    """An error metric is undefined for zero-magnitude vectors."""


class FormatError(LiftnetError, ValueError):
    """A file does not conform to its schema."""


class ConfigError(LiftnetError, ValueError):
    """Invalid configuration value."""


class ShapeError(LiftnetError, ValueError):
    """Array or layer widths do not conform."""


class TrainingDivergedError(LiftnetError, ArithmeticError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class TraceAbortedError(LiftnetError, RuntimeError):
    """Time step fell below the minimum while tracing a particle."""
