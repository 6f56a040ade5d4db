"""Cohort-level hypothesis tests against healthy ranges.

Test I runs on raw clinical data, test II on the per-patient means of model
outputs that passed the reliability screen. Both share one one-tailed z-test
kernel; only the sample-size gate differs.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DegenerateSample, InputFileError
from .observables import DISPLAY_NAMES, UNITS

ALPHA = 0.01
MIN_N_TEST = 26            # "more than 25 elements"
MIN_N_REPORT = 24          # smaller test-II samples are listed as too small

# table rows: clinical data (test I) and model outputs without clinical data (test II)
TEST_I_NAMES = ("LA_I_Vmax", "LV_I_EDV", "LV_ESV", "LV_EF", "max_grad_p_rAV",
                "SAP_max", "SAP_min", "PAP_max")
TEST_II_NAMES = ("RV_Pmax", "PAP_min", "PAP_mean", "PWP_min", "PWP_mean", "LV_SV", "CI",
                 "LA_Pmax", "LA_Pmean", "LV_Pmax", "RA_I_Vmax", "RV_I_EDV", "RV_EF", "SVR",
                 "PVR", "LA_Pmin", "LV_Pmin", "RV_I_ESV", "RA_Pmax", "RA_Pmin", "RA_Pmean",
                 "RV_Pmin", "ShuntFraction")


class Classification(str, enum.Enum):
    NOT_ALTERED_IN_RANGE = "NotAltered_InRange"
    NOT_ALTERED_TEST_RETAINED = "NotAltered_TestRetained"
    INCREASED_SIGNIFICANT = "IncreasedSignificant"
    DECREASED_SIGNIFICANT = "DecreasedSignificant"
    INSUFFICIENT_SAMPLE = "InsufficientSample"
    NO_RANGE = "NoRange"


@dataclass(frozen=True)
class HealthyRange:
    quantity_name: str
    lower: float | None = None
    upper: float | None = None
    source: str = ""

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise ValueError(f"{self.quantity_name}: a healthy range needs a bound")
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError(f"{self.quantity_name}: lower bound must be below upper bound")

    def contains(self, x: float) -> bool:
        return ((self.lower is None or x >= self.lower)
                and (self.upper is None or x <= self.upper))


@dataclass(frozen=True)
class SampleSummary:
    n: int
    mean: float
    std: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a summary needs at least one value")
        if not self.std >= 0:
            raise ValueError("standard deviation must be non-negative")

    @classmethod
    def of(cls, values) -> "SampleSummary":
        x = np.asarray(values, dtype=float)
        std = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
        return cls(len(x), float(np.mean(x)), std)


# ---------------------------------------------------------------------------
# healthy ranges

def _parse_bound(text):
    text = text.strip()
    return None if text in ("", "-") else float(text)


def read_healthy_ranges(source) -> dict:
    """Read a range file: CSV with columns name, lower, upper, source.

    Empty or "-" bounds are open. Names listed with both bounds open are
    range-free and map to ``None``.
    """
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise InputFileError(f"cannot read healthy ranges {source}: {exc}") from exc
    else:
        text = source.read()
    ranges = {}
    try:
        for row in csv.DictReader(io.StringIO(text)):
            name = row["name"].strip()
            lo, hi = _parse_bound(row["lower"]), _parse_bound(row["upper"])
            if lo is None and hi is None:
                ranges[name] = None
            else:
                ranges[name] = HealthyRange(name, lo, hi, row.get("source", "").strip())
    except (KeyError, ValueError) as exc:
        raise InputFileError(f"malformed healthy range file: {exc}") from exc
    return ranges


def default_healthy_ranges() -> dict:
    with resources.files("cardio0d.data").joinpath("healthy_ranges.csv").open() as fh:
        return read_healthy_ranges(fh)


# ---------------------------------------------------------------------------
# tests

def normal_upper_tail(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def z_test_one_tailed(s: SampleSummary, bound: float, direction: str) -> float:
    """p-value of a one-tailed z-test of the sample mean against ``bound``.

    ``direction="above"`` tests mean > bound (upper tail), ``"below"`` tests
    mean < bound (lower tail). The variance is the unbiased sample variance.
    """
    if s.n < 2:
        raise DegenerateSample("z-test needs at least two observations")
    if s.std == 0:
        raise DegenerateSample("z-test needs a positive standard deviation")
    z = (s.mean - bound) / (s.std / math.sqrt(s.n))
    if direction == "above":
        return normal_upper_tail(z)
    if direction == "below":
        return normal_upper_tail(-z)
    raise ValueError("direction must be 'above' or 'below'")


def classify(s: SampleSummary | None, healthy: HealthyRange | None, alpha: float = ALPHA,
             min_n: int | None = MIN_N_TEST):
    """Classification and optional p-value of one quantity.

    ``min_n=None`` disables the sample-size gate (test I).
    """
    if healthy is None:
        return Classification.NO_RANGE, None
    if s is None:
        return Classification.INSUFFICIENT_SAMPLE, None
    if healthy.contains(s.mean):
        return Classification.NOT_ALTERED_IN_RANGE, None
    if min_n is not None and s.n < min_n:
        return Classification.INSUFFICIENT_SAMPLE, None
    if healthy.upper is not None and s.mean > healthy.upper:
        p = z_test_one_tailed(s, healthy.upper, "above")
        label = Classification.INCREASED_SIGNIFICANT
    else:
        p = z_test_one_tailed(s, healthy.lower, "below")
        label = Classification.DECREASED_SIGNIFICANT
    if p < alpha:
        return label, p
    return Classification.NOT_ALTERED_TEST_RETAINED, p


def table_group(classification: Classification, n: int | None, test: str,
                min_n_report: int = MIN_N_REPORT) -> str:
    """Row group of the test II table: "I" rejected, "II" retained, "III" too small.

    Test I rows are "no test" unless a test was actually run.
    """
    if classification is Classification.NO_RANGE:
        return "-"
    if classification in (Classification.INCREASED_SIGNIFICANT,
                          Classification.DECREASED_SIGNIFICANT):
        return "I"
    if test == "I":
        return "no test" if classification is Classification.NOT_ALTERED_IN_RANGE else "II"
    if classification is Classification.INSUFFICIENT_SAMPLE or n is None or n < min_n_report:
        return "III"
    return "II"


def clinical_values(patients) -> dict:
    """Test I samples from patient records; two volumes are indexed by BSA."""
    indexed = {"LA_I_Vmax": "LA_Vmax", "LV_I_EDV": "LV_EDV"}
    out = {n: [] for n in TEST_I_NAMES}
    for p in patients:
        for name in TEST_I_NAMES:
            d = p.datum(indexed.get(name, name))
            if d is not None:
                out[name].append(d.value / p.body_surface_area if name in indexed else d.value)
    return out


def reliable_values(uq_reports, names=TEST_II_NAMES) -> dict:
    """Test II samples: the reliable per-patient means of each output."""
    out = {n: [] for n in names}
    for doc in uq_reports:
        if doc.get("failed"):
            continue
        for n in names:
            entry = doc["outputs"].get(n)
            if entry and entry["reliable"]:
                out[n].append(entry["mean"])
    return out


def cohort_summarize(values_by_quantity: dict) -> dict:
    """Per-quantity summaries; quantities with no values are dropped."""
    return {name: SampleSummary.of(vals) for name, vals in values_by_quantity.items()
            if len(vals) > 0}


# ---------------------------------------------------------------------------
# analysis report

@dataclass
class QuantityResult:
    name: str
    test: str
    summary: SampleSummary | None
    healthy: HealthyRange | None
    classification: Classification
    p_value: float | None
    group: str

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "test": self.test,
            "n": self.summary.n if self.summary else 0,
            "mean": self.summary.mean if self.summary else None,
            "std": self.summary.std if self.summary else None,
            "lower": self.healthy.lower if self.healthy else None,
            "upper": self.healthy.upper if self.healthy else None,
            "classification": self.classification.value,
            "p_value": self.p_value,
            "group": self.group,
        }


def analyze(summaries: dict, ranges: dict, names, test: str, alpha: float = ALPHA,
            min_n: int = MIN_N_TEST, min_n_report: int = MIN_N_REPORT) -> list:
    """Classify every quantity in ``names``; test "I" skips the sample-size gate."""
    results = []
    for name in names:
        s = summaries.get(name)
        healthy = ranges.get(name)
        label, p = classify(s, healthy, alpha, None if test == "I" else min_n)
        group = table_group(label, s.n if s else None, test, min_n_report)
        results.append(QuantityResult(name, test, s, healthy, label, p, group))
    return results


def _fmt_range(h):
    if h is None:
        return "-"
    lo = "-" if h.lower is None else f"{h.lower:g}"
    hi = "-" if h.upper is None else f"{h.upper:g}"
    return f"[{lo},{hi}]"


def format_table(results, title: str) -> str:
    """Aligned text table in the layout of the clinical summary tables."""
    rows = [("Group", "Quantity", "Healthy range", "Mean ± std (n)", "p-value", "Classification")]
    order = {"I": 0, "II": 1, "III": 2}
    ranked = sorted(results, key=lambda r: (order.get(r.group, 3), ))
    for r in ranked:
        disp = f"{DISPLAY_NAMES.get(r.name, r.name)} [{UNITS.get(r.name, '')}]"
        if r.summary is None:
            stat = "(n = 0)"
        else:
            stat = f"{r.summary.mean:.1f} ± {r.summary.std:.1f} (n = {r.summary.n})"
        p = "-" if r.p_value is None else f"{r.p_value:.2E}"
        rows.append((r.group, disp, _fmt_range(r.healthy), stat, p, r.classification.value))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [title, ""]
    for k, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def results_to_json(results) -> list:
    return [r.as_dict() for r in results]


def read_summaries(source) -> dict:
    """Summaries-only input: CSV with columns test, name, n, mean, std.

    Returns {"I": {name: SampleSummary}, "II": {...}} preserving row order.
    """
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise InputFileError(f"cannot read summaries {source}: {exc}") from exc
    else:
        text = source.read()
    out = {"I": {}, "II": {}}
    try:
        for row in csv.DictReader(io.StringIO(text)):
            test = row["test"].strip()
            if test not in out:
                raise ValueError(f"unknown test {test!r}")
            out[test][row["name"].strip()] = SampleSummary(
                int(row["n"]), float(row["mean"]), float(row["std"]))
    except (KeyError, ValueError) as exc:
        raise InputFileError(f"malformed summaries file: {exc}") from exc
    return out


def published_summaries() -> dict:
    """The cohort summary statistics shipped for regression runs."""
    with resources.files("cardio0d.data").joinpath("covid_cohort_summaries.csv").open() as fh:
        return read_summaries(fh)


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
