"""Reliability of calibrated outputs by rejection sampling around the calibrated point.

Perturbed parameter sets are accepted when every matched output stays inside
its measurement-error window. The perturbation width is tuned until the
acceptance ratio lands in a target band; the accepted outputs then decide,
per output, whether the calibrated mean is reliable.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import Cardio0DError, ContractViolation, DegenerateSample
from .observables import OUTPUT_NAMES, compute_outputs
from .solver import SolverSettings, integrate, warm_state

log = logging.getLogger(__name__)

DEGENERATE_MEAN = 1e-6
MAX_WIDTH = 0.95


@dataclass(frozen=True)
class UqSettings:
    n: int = 100
    w0: float = 0.125
    acceptance_band: tuple = (0.10, 0.15)
    reliability_ratio: float = 0.05
    w_adjust_factor: float = 1.25
    max_adaptations: int = 20
    max_draw_factor: int = 20          # phase 2 gives up after n * this many draws
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.acceptance_band
        if not 0 < self.w0 < 1:
            raise ContractViolation("w0 must lie in (0, 1)")
        if not 0 < lo < hi < 1:
            raise ContractViolation("acceptance band must lie inside (0, 1)")
        if self.n < 10:
            raise ContractViolation("n must be at least 10")
        if self.w_adjust_factor <= 1:
            raise ContractViolation("w_adjust_factor must exceed 1")


@dataclass(frozen=True)
class Window:
    output_name: str
    lower: float
    upper: float

    @property
    def degenerate(self) -> bool:
        return self.lower == self.upper

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


def acceptance_windows(patient) -> list:
    """One window [d - e, d + e] per clinical datum."""
    return [Window(d.output_name, d.value - d.measurement_error, d.value + d.measurement_error)
            for d in patient.data]


def perturb(center, lower, upper, w: float, rng) -> np.ndarray:
    """Uniform draw from [c(1-w), c(1+w)] intersected with [lower, upper], per component."""
    if not 0 <= w < 1:
        raise ContractViolation("w must lie in [0, 1)")
    c = np.asarray(center, float)
    lo = np.maximum(c * (1.0 - w), lower)
    hi = np.minimum(c * (1.0 + w), upper)
    return lo + (hi - lo) * rng.random(c.shape)


@dataclass
class UqResult:
    accepted: list
    final_w: float
    total_draws: int
    adaptations: int
    acceptance_ratio: float            # of the trial round that fixed w
    failed: bool
    reason: str = ""
    sampling_ratio: float | None = None  # acceptances over draws while collecting


def rejection_sample(evaluate, center, lower, upper, windows, settings: UqSettings) -> UqResult:
    """Adaptive rejection sampling around ``center``.

    ``evaluate(values)`` returns an output map, or raises a package error,
    which counts as a rejection. Phase 1 runs ``n`` trial draws and adapts w
    until the acceptance ratio sits in the band; trial acceptances are
    discarded. Phase 2 then collects ``n`` fresh acceptances.
    """
    rng = np.random.default_rng(settings.rng_seed)
    lo_band, hi_band = settings.acceptance_band
    w = settings.w0
    draws = 0

    def attempt():
        nonlocal draws
        draws += 1
        values = perturb(center, lower, upper, w, rng)
        try:
            out = evaluate(values)
        except Cardio0DError as exc:
            log.debug("draw rejected: %s", exc)
            return None
        if all(win.contains(out[win.output_name]) for win in windows):
            return out
        return None

    adaptations = 0
    while True:
        hits = sum(attempt() is not None for _ in range(settings.n))
        ratio = hits / settings.n
        if lo_band <= ratio <= hi_band:
            break
        if adaptations == settings.max_adaptations:
            return UqResult([], w, draws, adaptations, ratio, True,
                            "acceptance ratio never reached the target band")
        adaptations += 1
        # wider perturbations are accepted less often
        w = min(w * settings.w_adjust_factor, MAX_WIDTH) if ratio > hi_band \
            else w / settings.w_adjust_factor

    accepted = []
    phase2 = 0
    cap = settings.n * settings.max_draw_factor
    while len(accepted) < settings.n:
        if phase2 == cap:
            return UqResult(accepted, w, draws, adaptations, ratio, True,
                            "too few acceptances in the sampling phase",
                            len(accepted) / phase2)
        phase2 += 1
        out = attempt()
        if out is not None:
            accepted.append(out)
    return UqResult(accepted, w, draws, adaptations, ratio, False, "", settings.n / phase2)


def sample_outputs(patient, calibration, settings: UqSettings = UqSettings(),
                   solver: SolverSettings = SolverSettings()) -> UqResult:
    """Rejection sampling around a calibrated patient; every draw warm-starts
    from the calibrated periodic state."""
    if calibration.params is None or not calibration.converged:
        raise ContractViolation(f"patient {patient.id} is not calibrated")
    space = calibration.space
    center = space.values_of(calibration.params)
    base = calibration.params
    state = calibration.periodic_state

    def evaluate(values):
        p = space.apply(base, values)
        init = None if state is None else warm_state(state, p)
        return compute_outputs(integrate(p, init=init, settings=solver), p)

    return rejection_sample(evaluate, center, space.lower, space.upper,
                            acceptance_windows(patient), settings)


# ---------------------------------------------------------------------------
# verdicts

@dataclass(frozen=True)
class OutputVerdict:
    mean: float
    std: float
    reliable: bool
    sample_size: int


def verdict(sample, ratio: float = 0.05) -> OutputVerdict:
    x = np.asarray(sample, float)
    if len(x) == 0:
        raise ContractViolation("reliability needs a non-empty sample")
    mean = float(np.mean(x))
    std = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    ok = abs(mean) > DEGENERATE_MEAN and std < ratio * abs(mean)
    return OutputVerdict(mean, std, bool(ok), len(x))


def reliability(accepted, settings: UqSettings = UqSettings(), names=None) -> dict:
    """Per-output sample mean, unbiased std and the reliable flag."""
    if not accepted:
        raise ContractViolation("reliability needs at least one accepted sample")
    names = list(accepted[0]) if names is None else names
    return {n: verdict([a[n] for a in accepted], settings.reliability_ratio) for n in names}


def normality_check(sample) -> float:
    """Chi-squared goodness-of-fit p-value against a fitted normal.

    ceil(sqrt(n)) equal-probability bins, k - 3 degrees of freedom.
    """
    x = np.asarray(sample, float)
    n = len(x)
    if n < 20:
        raise ContractViolation("normality check needs at least 20 values")
    mu, sd = float(np.mean(x)), float(np.std(x, ddof=1))
    if sd == 0:
        raise DegenerateSample("zero variance")
    k = math.ceil(math.sqrt(n))
    edges = stats.norm.ppf(np.linspace(0.0, 1.0, k + 1)[1:-1], loc=mu, scale=sd)
    counts = np.bincount(np.searchsorted(edges, x, side="right"), minlength=k)
    expected = n / k
    stat = float(np.sum((counts - expected) ** 2) / expected)
    return float(stats.chi2.sf(stat, k - 3))


# ---------------------------------------------------------------------------
# report

def uq_report(patient_id: str, result: UqResult, settings: UqSettings = UqSettings()) -> dict:
    names = list(OUTPUT_NAMES)
    doc = {
        "patient_id": patient_id,
        "failed": result.failed,
        "reason": result.reason,
        "final_w": result.final_w,
        "total_draws": result.total_draws,
        "adaptations": result.adaptations,
        "acceptance_ratio": result.acceptance_ratio,
        "sampling_ratio": result.sampling_ratio,
        "outputs": {},
    }
    if result.failed or not result.accepted:
        for n in names:
            doc["outputs"][n] = {"mean": None, "std": None, "reliable": False,
                                 "sample_size": len(result.accepted)}
        return doc
    verdicts = reliability(result.accepted, settings, names)
    for n in names:
        v = verdicts[n]
        try:
            p = normality_check([a[n] for a in result.accepted])
        except (DegenerateSample, ContractViolation):
            p = None
        doc["outputs"][n] = {"mean": v.mean, "std": v.std, "reliable": v.reliable,
                             "sample_size": v.sample_size, "normality_p": p}
    return doc


def write_uq_report(doc: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
