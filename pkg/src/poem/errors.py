"""Exception types shared across the package."""


class PoemError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(PoemError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(PoemError, ValueError):
    """Array shapes or vector dimensions are inconsistent."""


class TopologyError(PoemError, ValueError):
    """A mesh violates manifold / validity constraints."""


class MeshParseError(PoemError, ValueError):
    """A mesh file could not be parsed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InputLengthError(PoemError, ValueError):
    """An audio clip is too short for the requested analysis."""


class SolverError(PoemError, RuntimeError):
    """The linear system of a global step is singular or ill-posed."""


class TrainingError(PoemError, RuntimeError):
    """Model training failed (empty data, NaN loss, ...)."""


class StateError(PoemError, RuntimeError):
    """A required artifact (model file, index) is missing or empty."""


class OverBendError(ParameterError):
    """A bend state exceeds the admissible curvature range."""
