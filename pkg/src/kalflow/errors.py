"""Exception hierarchy shared across the package."""


class KalflowError(Exception):
    """Base class for all errors raised by this package."""


class NonFinite(KalflowError):
    """An array that must be finite contains NaN or Inf."""


class DegenerateEnsemble(KalflowError):
    """Ensemble too small for the requested operation (J < 2)."""


class SingularSystem(KalflowError):
    """Kalman system matrix could not be factorized, even with jitter."""


class ScheduleStalled(KalflowError):
    """Temperature increment collapsed below the progress threshold."""


class TrainingDiverged(KalflowError):
    """Flow training produced a non-finite loss."""


class IterationCapExceeded(KalflowError):
    """Inversion loop hit the safety iteration cap before reaching beta=1."""


class ForwardModelFailure(KalflowError):
    """Forward model failed on a particle; carries the particle index."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"forward model failed on particle {index}")


class GradientUnavailable(KalflowError):
    """Reference sampling requested on a model without gradients."""


class DivergentChain(KalflowError):
    """HMC chain diverged repeatedly (energy errors above threshold)."""


class InsufficientChain(KalflowError):
    """Chain too short/correlated to thin to the requested sample count."""


class SizeMismatch(KalflowError):
    """Sample sets of unequal size passed to an equal-size metric."""


class EmptyInput(KalflowError):
    """Aggregation over an empty collection."""


class InvalidConfig(KalflowError):
    """Experiment configuration failed schema validation."""


class MissingReference(KalflowError):
    """Metrics requested before reference samples were produced."""


class IoFailure(KalflowError):
    """Filesystem read/write failed."""
