"""Synthetic patient cohorts with known ground truth, for twin experiments."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import (ClinicalDatum, ParameterSpace, PatientRecord, VOLUME_OUTPUTS,
                          default_space, echo_from_elastance, load_rv_lookup)
from .errors import Cardio0DError, ContractViolation
from .model import ModelParameters, reference_parameters
from .observables import MO1_NAMES, compute_outputs
from .solver import SolverSettings, integrate

log = logging.getLogger(__name__)


def default_noise() -> dict:
    return {n: (0.10 if n in VOLUME_OUTPUTS else 0.05) for n in MO1_NAMES}


def default_missing() -> dict:
    """Share of patients lacking each datum in the shipped cohort summaries (n out of 58)."""
    n = {"LA_Vmax": 56, "LV_EDV": 58, "LV_ESV": 57, "LV_EF": 58, "max_grad_p_rAV": 42,
         "SAP_max": 58, "SAP_min": 58, "PAP_max": 40}
    return {k: round(1.0 - v / 58.0, 3) for k, v in n.items()}


def patient_rng(seed: int, index: int) -> np.random.Generator:
    """Stream for one patient; independent of how patients are scheduled."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass(frozen=True)
class CohortSpec:
    size: int
    rng_seed: int = 0
    jitter: float | dict = 0.2          # log-uniform spread per calibrated parameter
    hr_jitter: float = 0.15
    bsa_jitter: float = 0.1
    noise: dict = field(default_factory=default_noise)
    missing: float | dict = field(default_factory=default_missing)
    id_prefix: str = "S"
    max_redraws: int = 10

    def __post_init__(self):
        if self.size < 1:
            raise ContractViolation("cohort size must be at least 1")
        spreads = self.jitter.values() if isinstance(self.jitter, dict) else [self.jitter]
        if any(s < 0 for s in spreads) or self.hr_jitter < 0 or self.bsa_jitter < 0:
            raise ContractViolation("spreads must be non-negative")
        if any(s < 0 for s in self.noise.values()):
            raise ContractViolation("noise levels must be non-negative")
        probs = self.missing.values() if isinstance(self.missing, dict) else [self.missing]
        if any(not 0 <= q <= 1 for q in probs):
            raise ContractViolation("missing-data probabilities must lie in [0, 1]")

    def spread(self, param_id: str) -> float:
        return self.jitter.get(param_id, 0.0) if isinstance(self.jitter, dict) else self.jitter

    def missing_probability(self, name: str) -> float:
        return self.missing.get(name, 0.0) if isinstance(self.missing, dict) else self.missing

    @classmethod
    def twin(cls, size: int, rng_seed: int = 0, **kw) -> "CohortSpec":
        """Zero noise and no missing data."""
        return cls(size, rng_seed, noise={n: 0.0 for n in MO1_NAMES}, missing=0.0, **kw)


@dataclass(frozen=True)
class GroundTruth:
    patient_id: str
    heart_rate: float
    body_surface_area: float
    values: dict
    clean_outputs: dict

    def as_dict(self) -> dict:
        return {"id": self.patient_id, "heart_rate": self.heart_rate,
                "body_surface_area": self.body_surface_area, "parameters": self.values,
                "outputs": self.clean_outputs}


def _log_uniform(rng, center, spread):
    if spread == 0:
        rng.random()  # keep the stream layout independent of the spread
        return center
    return center * float(np.exp(np.log1p(spread) * (2.0 * rng.random() - 1.0)))


def generate_patient(spec: CohortSpec, space: ParameterSpace, index: int,
                     base: ModelParameters | None = None,
                     settings: SolverSettings = SolverSettings()):
    """One synthetic patient and its ground truth."""
    base = reference_parameters() if base is None else base
    rng = patient_rng(spec.rng_seed, index)
    pid = f"{spec.id_prefix}{index + 1:03d}"
    lookup = load_rv_lookup()
    for attempt in range(spec.max_redraws):
        hr = _log_uniform(rng, base.heart_rate, spec.hr_jitter)
        bsa = _log_uniform(rng, base.body_surface_area, spec.bsa_jitter)
        values = np.array([_log_uniform(rng, b.reference, spec.spread(b.param_id))
                           for b in space.bounds])
        values = np.clip(values, space.lower, space.upper)
        params = space.apply(base.with_patient(hr, bsa), values)
        try:
            clean = compute_outputs(integrate(params, settings=settings), params)
            break
        except Cardio0DError as exc:
            log.warning("%s: draw %d failed (%s), redrawing", pid, attempt + 1, exc)
    else:
        raise Cardio0DError(f"{pid}: no simulable draw after {spec.max_redraws} attempts")

    data = []
    noise = rng.standard_normal(len(MO1_NAMES))
    keep = rng.random(len(MO1_NAMES))
    for k, name in enumerate(MO1_NAMES):
        if keep[k] < spec.missing_probability(name):
            continue
        sigma = spec.noise.get(name, 0.0)
        value = clean[name] * (1.0 + sigma * noise[k])
        err = (sigma if sigma > 0 else default_noise()[name]) * abs(value)
        data.append(ClinicalDatum(name, float(value), float(err)))
    if not data:
        # never emit an empty record; keep the least likely to be missing
        name = min(MO1_NAMES, key=spec.missing_probability)
        k = MO1_NAMES.index(name)
        sigma = spec.noise.get(name, 0.0)
        value = clean[name] * (1.0 + sigma * noise[k])
        data.append(ClinicalDatum(name, float(value),
                                  float((sigma or default_noise()[name]) * abs(value))))
    rv_fac, tapse = echo_from_elastance(params.get(space.rv_active_elastance), lookup)
    patient = PatientRecord(pid, hr, bsa, rv_fac, tapse, tuple(data))
    truth = GroundTruth(pid, hr, bsa, dict(zip(space.ids, map(float, values))),
                        {k: float(v) for k, v in clean.items()})
    return patient, truth


def generate(spec: CohortSpec, space: ParameterSpace | None = None,
             base: ModelParameters | None = None, settings: SolverSettings = SolverSettings(),
             executor=None):
    """Patients and ground truths of a whole cohort, in index order."""
    base = reference_parameters() if base is None else base
    space = default_space(base) if space is None else space
    if executor is None:
        results = [generate_patient(spec, space, i, base, settings) for i in range(spec.size)]
    else:
        futures = [executor.submit(generate_patient, spec, space, i, base, settings)
                   for i in range(spec.size)]
        results = [f.result() for f in futures]
    return [r[0] for r in results], [r[1] for r in results]


def write_ground_truth(truths, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps([t.as_dict() for t in truths], indent=2) + "\n")


def read_ground_truth(path) -> list:
    doc = json.loads(Path(path).read_text())
    return [GroundTruth(d["id"], d["heart_rate"], d["body_surface_area"], d["parameters"],
                        d["outputs"]) for d in doc]
