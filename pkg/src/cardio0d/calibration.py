"""Patient-specific calibration: bounded quasi-Newton fit of squared relative errors."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from ._layout import PARAM_INDEX
from .errors import Cardio0DError, ContractViolation, InputFileError
from .model import ModelParameters, parameters_from_dict, parameters_to_dict, reference_parameters
from .observables import MO1_NAMES, compute_outputs, compute_outputs_with_tangents
from .solver import SolverSettings, integrate, warm_state

log = logging.getLogger(__name__)

SUCCESS_THRESHOLD = 1e-3
FAILURE_PENALTY = 1e6

# echo values of the reference individual
REFERENCE_RV_FAC = 45.0
REFERENCE_TAPSE = 22.0

PRESSURE_OUTPUTS = ("max_grad_p_rAV", "SAP_max", "SAP_min", "PAP_max")
VOLUME_OUTPUTS = ("LA_Vmax", "LV_EDV", "LV_ESV")


def default_measurement_error(name: str, value: float) -> float:
    """Shipped error when a patient file gives none: 5% pressures and EF, 10% volumes."""
    frac = 0.10 if name in VOLUME_OUTPUTS else 0.05
    return frac * abs(value)


# ---------------------------------------------------------------------------
# patients

@dataclass(frozen=True)
class ClinicalDatum:
    output_name: str
    value: float
    measurement_error: float

    def __post_init__(self):
        if self.output_name not in MO1_NAMES:
            raise ContractViolation(f"{self.output_name!r} has no clinical counterpart")
        if not math.isfinite(self.value) or self.value == 0:
            raise ContractViolation(f"{self.output_name}: datum must be finite and nonzero")
        if not self.measurement_error >= 0:
            raise ContractViolation(f"{self.output_name}: measurement error must be >= 0")


@dataclass(frozen=True)
class PatientRecord:
    id: str
    heart_rate: float
    body_surface_area: float
    rv_fac: float | None
    tapse: float | None
    data: tuple

    def __post_init__(self):
        if not (self.heart_rate > 0 and self.body_surface_area > 0):
            raise ContractViolation(f"patient {self.id}: HR and BSA must be positive")
        names = [d.output_name for d in self.data]
        if len(set(names)) != len(names):
            raise ContractViolation(f"patient {self.id}: duplicate clinical datum")
        if not self.data:
            raise ContractViolation(f"patient {self.id}: no clinical data")
        object.__setattr__(self, "data", tuple(self.data))

    def datum(self, name: str) -> ClinicalDatum | None:
        for d in self.data:
            if d.output_name == name:
                return d
        return None

    def model_parameters(self, base: ModelParameters) -> ModelParameters:
        return base.with_patient(self.heart_rate, self.body_surface_area)


PATIENT_COLUMNS = ("id", "HR", "BSA", "RV_FAC", "TAPSE")


def _cell(row, key):
    text = (row.get(key) or "").strip()
    return None if text == "" else float(text)


def read_patients(source) -> list:
    """Patient cohort CSV: id, HR, BSA, RV_FAC, TAPSE, then ``<name>`` and
    ``<name>_err`` for each output with a clinical counterpart. Empty cells
    are missing values; a missing error column takes the shipped default."""
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise InputFileError(f"cannot read patient file {source}: {exc}") from exc
    else:
        text = source.read()
    patients = []
    try:
        reader = csv.DictReader(io.StringIO(text))
        missing = [c for c in ("id", "HR", "BSA") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"missing columns {missing}")
        for row in reader:
            data = []
            for name in MO1_NAMES:
                value = _cell(row, name)
                if value is None:
                    continue
                err = _cell(row, f"{name}_err")
                if err is None:
                    err = default_measurement_error(name, value)
                data.append(ClinicalDatum(name, value, err))
            patients.append(PatientRecord(row["id"].strip(), float(row["HR"]), float(row["BSA"]),
                                          _cell(row, "RV_FAC"), _cell(row, "TAPSE"), tuple(data)))
    except (ValueError, ContractViolation) as exc:
        raise InputFileError(f"malformed patient file: {exc}") from exc
    return patients


def write_patients(patients, path) -> None:
    header = list(PATIENT_COLUMNS)
    for name in MO1_NAMES:
        header += [name, f"{name}_err"]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in patients:
            row = [p.id, repr(p.heart_rate), repr(p.body_surface_area),
                   "" if p.rv_fac is None else repr(p.rv_fac),
                   "" if p.tapse is None else repr(p.tapse)]
            for name in MO1_NAMES:
                d = p.datum(name)
                row += ["", ""] if d is None else [repr(d.value), repr(d.measurement_error)]
            w.writerow(row)


# ---------------------------------------------------------------------------
# parameter space

@dataclass(frozen=True)
class ParameterBound:
    param_id: str
    reference: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.param_id not in PARAM_INDEX:
            raise ContractViolation(f"unknown parameter {self.param_id!r}")
        if not 0 < self.lower <= self.upper:
            raise ContractViolation(f"{self.param_id}: need 0 < lower <= upper")


@dataclass(frozen=True)
class ParameterSpace:
    bounds: tuple
    rv_active_elastance: str = "RV.active_elastance"

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(self.bounds))
        if self.rv_active_elastance not in self.ids:
            raise ContractViolation("the space must contain the RV active elastance")
        for b in self.bounds:
            if self.is_reference_interval(b) and not b.lower <= b.reference <= b.upper:
                raise ContractViolation(f"{b.param_id}: reference outside its interval")

    def is_reference_interval(self, b) -> bool:
        return b.param_id != self.rv_active_elastance

    @property
    def ids(self) -> tuple:
        return tuple(b.param_id for b in self.bounds)

    @property
    def indices(self) -> tuple:
        return tuple(PARAM_INDEX[i] for i in self.ids)

    @property
    def size(self) -> int:
        return len(self.bounds)

    @property
    def reference(self) -> np.ndarray:
        return np.array([b.reference for b in self.bounds])

    @property
    def lower(self) -> np.ndarray:
        return np.array([b.lower for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b.upper for b in self.bounds])

    def bound(self, param_id: str) -> ParameterBound:
        return self.bounds[self.ids.index(param_id)]

    def with_interval(self, param_id: str, lower: float, upper: float) -> "ParameterSpace":
        new = [replace(b, lower=lower, upper=upper) if b.param_id == param_id else b
               for b in self.bounds]
        return replace(self, bounds=tuple(new))

    def contains(self, values, rtol: float = 1e-12) -> bool:
        v = np.asarray(values, float)
        return bool(np.all(v >= self.lower * (1 - rtol)) and np.all(v <= self.upper * (1 + rtol)))

    def apply(self, base: ModelParameters, values) -> ModelParameters:
        return base.with_values(dict(zip(self.ids, np.asarray(values, float))))

    def values_of(self, params: ModelParameters) -> np.ndarray:
        return np.array([params.get(i) for i in self.ids])

    def to_dict(self) -> dict:
        return {"rv_active_elastance": self.rv_active_elastance,
                "bounds": [b.__dict__.copy() for b in self.bounds]}

    @classmethod
    def from_dict(cls, doc) -> "ParameterSpace":
        return cls(tuple(ParameterBound(**b) for b in doc["bounds"]), doc["rv_active_elastance"])


def _data_json(name):
    with resources.files("cardio0d.data").joinpath(name).open() as fh:
        return json.load(fh)


def default_space(params: ModelParameters | None = None) -> ParameterSpace:
    """The shipped calibrated set with intervals relative to ``params``."""
    params = reference_parameters() if params is None else params
    doc = _data_json("calibration_space.json")
    bounds = []
    for entry in doc["parameters"]:
        ref = params.get(entry["id"])
        bounds.append(ParameterBound(entry["id"], ref, ref * entry["lower_factor"],
                                     ref * entry["upper_factor"]))
    return ParameterSpace(tuple(bounds))


# ---------------------------------------------------------------------------
# right ventricular contractility from echo

@dataclass(frozen=True)
class RvLookup:
    """Monotone table of RV active elastance against simulated RV ejection fraction."""

    elastance: np.ndarray
    ejection_fraction: np.ndarray
    reference_elastance: float
    reference_ejection_fraction: float

    def elastance_for(self, ef: float) -> float:
        return float(np.interp(ef, self.ejection_fraction, self.elastance))

    def ejection_fraction_for(self, elastance: float) -> float:
        return float(np.interp(elastance, self.elastance, self.ejection_fraction))


def load_rv_lookup() -> RvLookup:
    doc = _data_json("rv_elastance_lookup.json")
    return RvLookup(np.array(doc["elastance"]), np.array(doc["ejection_fraction"]),
                    doc["reference_elastance"], doc["reference_ejection_fraction"])


def sweep_rv_elastance(params: ModelParameters, factors, settings=SolverSettings()):
    """Simulated RV ejection fraction for scaled copies of the RV active elastance."""
    ref = params.get("RV.active_elastance")
    es, efs = [], []
    for f in factors:
        p = params.with_values({"RV.active_elastance": ref * f})
        efs.append(compute_outputs(integrate(p, settings=settings), p)["RV_EF"])
        es.append(ref * f)
    return np.array(es), np.array(efs)


def contractility_ratio(rv_fac: float | None, tapse: float | None) -> float | None:
    """Echo contractility relative to the reference individual; None if unknown."""
    parts = []
    if rv_fac is not None:
        if not 0 < rv_fac < 100:
            raise ContractViolation("RV_FAC must lie in (0, 100)")
        parts.append(rv_fac / REFERENCE_RV_FAC)
    if tapse is not None:
        if not tapse > 0:
            raise ContractViolation("TAPSE must be positive")
        parts.append(tapse / REFERENCE_TAPSE)
    return float(np.mean(parts)) if parts else None


def echo_from_elastance(elastance: float, lookup: RvLookup | None = None):
    """RV_FAC and TAPSE surrogates of a given RV active elastance."""
    lookup = load_rv_lookup() if lookup is None else lookup
    rho = lookup.ejection_fraction_for(elastance) / lookup.reference_ejection_fraction
    return REFERENCE_RV_FAC * rho, REFERENCE_TAPSE * rho


def build_bounds(space: ParameterSpace, patient: PatientRecord,
                 lookup: RvLookup | None = None) -> ParameterSpace:
    """Replace the RV active elastance interval by one driven by RV_FAC and TAPSE."""
    rho = contractility_ratio(patient.rv_fac, patient.tapse)
    if rho is None:
        log.warning("patient %s: no RV_FAC/TAPSE, keeping the reference RV interval", patient.id)
        return space
    lookup = load_rv_lookup() if lookup is None else lookup
    b = space.bound(space.rv_active_elastance)
    # interval half-widths relative to the reference centre carry over
    e_ref = lookup.reference_elastance
    e_star = lookup.elastance_for(rho * lookup.reference_ejection_fraction)
    e_star *= b.reference / e_ref
    return space.with_interval(space.rv_active_elastance,
                               e_star * b.lower / b.reference, e_star * b.upper / b.reference)


# ---------------------------------------------------------------------------
# loss

def _residuals(outputs, patient):
    return np.array([(outputs[d.output_name] - d.value) / d.value for d in patient.data])


def relative_errors(outputs: dict, patient: PatientRecord) -> dict:
    return {d.output_name: float((outputs[d.output_name] - d.value) / d.value)
            for d in patient.data}


def loss_from_outputs(outputs: dict, patient: PatientRecord) -> float:
    r = _residuals(outputs, patient)
    return float(r @ r)


def loss(values, patient: PatientRecord, space: ParameterSpace | None = None,
         base: ModelParameters | None = None, settings: SolverSettings = SolverSettings()) -> float:
    """Sum of squared relative errors of the matched outputs at ``values``.

    ``values`` are the calibrated parameters in the order of ``space``. A beat
    that fails to settle scores the finite penalty 1e6.
    """
    space = default_space() if space is None else space
    base = reference_parameters() if base is None else base
    params = space.apply(patient.model_parameters(base), values)
    try:
        traj = integrate(params, settings=settings)
    except Cardio0DError as exc:
        log.warning("patient %s: loss evaluation failed (%s)", patient.id, exc)
        return FAILURE_PENALTY
    return loss_from_outputs(compute_outputs(traj, params), patient)


def _loss_and_gradient(params, patient, directions, settings, init=None, init_tangent=None):
    traj = integrate(params, init=init, settings=settings, directions=directions,
                     init_tangent=init_tangent)
    vals, grads = compute_outputs_with_tangents(traj, params)
    g = np.zeros(len(directions))
    total = 0.0
    for d in patient.data:
        r = (vals[d.output_name] - d.value) / d.value
        total += r * r
        g += 2.0 * r / d.value * grads[d.output_name]
    return total, g, traj, vals


def loss_gradient(values, patient: PatientRecord, space: ParameterSpace | None = None,
                  base: ModelParameters | None = None,
                  settings: SolverSettings = SolverSettings()) -> np.ndarray:
    """dL/dp for the parameters of ``space``, by forward sensitivities of the beat."""
    space = default_space() if space is None else space
    base = reference_parameters() if base is None else base
    params = space.apply(patient.model_parameters(base), values)
    _, g, _, _ = _loss_and_gradient(params, patient, space.indices, settings)
    return g


# ---------------------------------------------------------------------------
# optimizer

@dataclass(frozen=True)
class CalibrationSettings:
    threshold: float = SUCCESS_THRESHOLD
    target_loss: float = 1e-4
    gradient_tol: float = 1e-8
    max_iterations: int = 500
    restarts: int = 3
    restart_spread: float = 0.25
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.restarts < 1:
            raise ContractViolation("at least one restart is required")
        if not 0 <= self.restart_spread < 1:
            raise ContractViolation("restart_spread must lie in [0, 1)")


@dataclass
class CalibrationResult:
    patient_id: str
    params: ModelParameters | None
    loss_value: float
    converged: bool
    restarts_used: int
    iterations: int
    relative_errors: dict
    restart_losses: list
    initial_losses: list
    evaluations: int
    space: ParameterSpace | None = None
    periodic_state: np.ndarray | None = None
    failure_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "converged": self.converged,
            "loss": self.loss_value,
            "restarts_used": self.restarts_used,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "restart_losses": self.restart_losses,
            "initial_losses": self.initial_losses,
            "relative_errors": self.relative_errors,
            "failure_reason": self.failure_reason,
            "parameters": None if self.params is None else parameters_to_dict(self.params),
            "space": None if self.space is None else self.space.to_dict(),
            "periodic_state": None if self.periodic_state is None
            else [float(v) for v in self.periodic_state],
        }

    @classmethod
    def from_dict(cls, doc) -> "CalibrationResult":
        return cls(
            patient_id=doc["patient_id"],
            params=None if doc["parameters"] is None else parameters_from_dict(doc["parameters"]),
            loss_value=doc["loss"], converged=doc["converged"],
            restarts_used=doc["restarts_used"], iterations=doc["iterations"],
            relative_errors=doc["relative_errors"], restart_losses=doc["restart_losses"],
            initial_losses=doc["initial_losses"], evaluations=doc["evaluations"],
            space=None if doc["space"] is None else ParameterSpace.from_dict(doc["space"]),
            periodic_state=None if doc["periodic_state"] is None
            else np.array(doc["periodic_state"]),
            failure_reason=doc.get("failure_reason", ""),
        )


class _Reached(Exception):
    pass


class _Objective:
    """Loss and gradient in scaled coordinates x = p / p_ref, warm-started from the last beat."""

    def __init__(self, patient, space, base, settings, target):
        self.patient = patient
        self.space = space
        self.base = patient.model_parameters(base)
        self.settings = settings
        self.scale = space.reference
        self.target = target
        self.last = None
        self.best = (np.inf, None, None)
        self.evaluations = 0
        self.values = []

    def _attempt(self, params, warm):
        init = tangent = None
        if warm and self.last is not None:
            init = warm_state(self.last, params)
            tangent = self.last.state_tangents[0]
        return _loss_and_gradient(params, self.patient, self.space.indices,
                                  self.settings, init, tangent)

    def __call__(self, x):
        self.evaluations += 1
        x = np.clip(x, self.space.lower / self.scale, self.space.upper / self.scale)
        params = self.space.apply(self.base, x * self.scale)
        try:
            total, g, traj, _ = self._attempt(params, warm=True)
        except Cardio0DError:
            try:
                total, g, traj, _ = self._attempt(params, warm=False)
            except Cardio0DError as exc:
                log.warning("patient %s: evaluation failed (%s)", self.patient.id, exc)
                self.values.append(FAILURE_PENALTY)
                return FAILURE_PENALTY, np.zeros_like(x)
        self.values.append(total)
        self.last = traj
        if total < self.best[0]:
            self.best = (total, x.copy(), traj.start_state)
        if total < self.target:
            raise _Reached
        return total, g * self.scale


def restart_points(space: ParameterSpace, n: int, spread: float, seed: int) -> np.ndarray:
    """Reference point plus ``n - 1`` scrambled-Sobol log-perturbations, clipped to bounds."""
    ref = np.clip(space.reference, space.lower, space.upper)
    points = [ref]
    if n > 1:
        u = qmc.Sobol(d=space.size, scramble=True, seed=seed).random(n - 1)
        span = math.log1p(spread)
        for row in u:
            points.append(np.clip(ref * np.exp(span * (2.0 * row - 1.0)), space.lower, space.upper))
    return np.array(points)


def calibrate(patient: PatientRecord, space: ParameterSpace | None = None,
              settings: CalibrationSettings = CalibrationSettings(), seed: int = 0,
              base: ModelParameters | None = None, lookup: RvLookup | None = None
              ) -> CalibrationResult:
    """Multi-start L-BFGS-B calibration of one patient; keeps the lowest loss."""
    base = reference_parameters() if base is None else base
    space = build_bounds(default_space(base) if space is None else space, patient, lookup)
    starts = restart_points(space, settings.restarts, settings.restart_spread, seed)
    obj = _Objective(patient, space, base, settings.solver, settings.target_loss)
    scale = space.reference
    box = list(zip(space.lower / scale, space.upper / scale))
    iterations = 0
    restart_losses, initial_losses = [], []
    for x0 in starts:
        obj.last = None
        obj.best = (np.inf, None, None)
        obj.values = []
        counter = [0]

        def tick(_x):
            counter[0] += 1

        try:
            minimize(obj, x0 / scale, jac=True, method="L-BFGS-B", bounds=box, callback=tick,
                     options={"maxiter": settings.max_iterations, "gtol": settings.gradient_tol,
                              "ftol": 1e-15})
        except _Reached:
            pass
        initial_losses.append(float(obj.values[0]) if obj.values else FAILURE_PENALTY)
        iterations += counter[0]
        restart_losses.append((obj.best[0], obj.best[1], obj.best[2]))

    k = int(np.argmin([r[0] for r in restart_losses]))
    best_loss, best_x, best_state = restart_losses[k]
    losses = [float(r[0]) for r in restart_losses]
    if best_x is None or best_loss >= FAILURE_PENALTY:
        return CalibrationResult(patient.id, None, FAILURE_PENALTY, False, len(starts), iterations,
                                 {}, losses, initial_losses, obj.evaluations, space, None,
                                 "no restart produced a periodic beat")
    params = space.apply(patient.model_parameters(base), best_x * scale)
    traj = integrate(params, init=best_state, settings=settings.solver)
    errs = relative_errors(compute_outputs(traj, params), patient)
    converged = best_loss < settings.threshold
    return CalibrationResult(patient.id, params, float(best_loss), bool(converged), len(starts),
                             iterations, errs, losses, initial_losses, obj.evaluations, space,
                             traj.start_state, "" if converged else "loss above threshold")
