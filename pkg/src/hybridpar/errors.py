"""Exception types shared across the package."""


class HybridparError(Exception):
    """Base class for all package errors."""


class ParameterError(HybridparError, ValueError):
    """A scalar or field value is out of its documented range."""


class ShapeError(HybridparError, ValueError):
    """Array arguments disagree in shape or dimensionality."""


class NumericError(HybridparError, ValueError):
    """Non-finite values where finite floats are required."""


class StepUnderflowError(HybridparError, ValueError):
    """A denoising update was requested below the final timestep."""


class HistoryError(HybridparError, ValueError):
    """A windowed statistic was requested before enough points exist."""


class SequencingError(HybridparError, ValueError):
    """Controller or engine calls arrived out of order."""


class DegenerateInputError(HybridparError, ValueError):
    """Input is structurally valid but has no usable signal (e.g. zero norm)."""


class PlanError(HybridparError, ValueError):
    """An execution plan is internally inconsistent."""


class SeriesParseError(HybridparError, ValueError):
    """A recorded series file could not be parsed.

    Carries the 1-based line number when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
