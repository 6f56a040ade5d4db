"""Exception hierarchy shared by the simulation and analysis layers."""


class Cardio0DError(Exception):
    """Base class for all package errors."""


class NumericFailure(Cardio0DError):
    """A non-finite value appeared while evaluating or integrating the model."""

    def __init__(self, message, t=None, h=None):
        super().__init__(message)
        self.t = t
        self.h = h


class StiffnessError(NumericFailure):
    """The adaptive step size collapsed below the admissible minimum."""


class NonConvergenceError(Cardio0DError):
    """The beat-to-beat iteration did not reach a periodic steady state."""

    def __init__(self, message, delta):
        super().__init__(message)
        self.delta = delta


class ContractViolation(Cardio0DError):
    """An input does not satisfy the preconditions of an operation."""


class DegenerateSample(Cardio0DError):
    """A sample has zero dispersion where a positive one is required."""


class InputFileError(Cardio0DError):
    """A configuration or data file is missing or malformed."""
