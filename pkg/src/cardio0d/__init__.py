"""Closed-loop lumped-parameter circulation model with patient calibration,
rejection-sampling reliability analysis and cohort statistics."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (Cardio0DError, ContractViolation, DegenerateSample, InputFileError,
                     NonConvergenceError, NumericFailure, StiffnessError)
from .model import ModelParameters, ModelState, load_parameters, reference_parameters
from .observables import compute_outputs
from .solver import SolverSettings, Trajectory, integrate

__all__ = [
    "Cardio0DError", "ContractViolation", "DegenerateSample", "InputFileError",
    "NonConvergenceError", "NumericFailure", "StiffnessError", "ModelParameters", "ModelState",
    "load_parameters", "reference_parameters", "compute_outputs", "SolverSettings",
    "Trajectory", "integrate", "__version__",
]
