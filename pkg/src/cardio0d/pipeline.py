"""Batch stages behind the command line: simulate, cohort, calibrate, uq, analyze, report.

Every stage reads its inputs from files and writes its artifacts under the
output directory, so stages can run separately or back to back. Randomness
comes only from the global seed, split per patient by file position.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (CalibrationResult, CalibrationSettings, calibrate, default_space,
                          read_patients, write_patients)
from .cohort import CohortSpec, default_noise, generate, write_ground_truth
from .errors import ContractViolation, InputFileError
from .model import load_parameters, reference_parameters
from .observables import MO1_NAMES, compute_outputs, outputs_to_json
from .solver import SolverSettings, integrate, write_trajectory_csv
from .stats import (TEST_I_NAMES, TEST_II_NAMES, analyze, clinical_values, cohort_summarize,
                    default_healthy_ranges, format_table, read_healthy_ranges, read_summaries,
                    published_summaries, reliable_values, results_to_json)
from .uncertainty import UqSettings, sample_outputs, uq_report

log = logging.getLogger(__name__)

CONFIG_KEYS = {"reference_parameters", "healthy_ranges", "patients", "output_dir", "seed", "jobs",
               "solver", "calibration", "uq", "cohort"}


@dataclass
class RunConfig:
    reference_parameters: Path | None = None
    healthy_ranges: Path | None = None
    patients: Path | None = None
    output_dir: Path = Path("out")
    seed: int = 0
    jobs: int = 1
    solver: SolverSettings = field(default_factory=SolverSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    uq: UqSettings = field(default_factory=UqSettings)
    cohort: dict = field(default_factory=dict)

    # -- loading ------------------------------------------------------------
    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputFileError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    @classmethod
    def from_dict(cls, doc: dict, root=Path(".")) -> "RunConfig":
        unknown = set(doc) - CONFIG_KEYS
        if unknown:
            raise InputFileError(f"unknown config keys: {sorted(unknown)}")
        root = Path(root)

        def rel(key):
            return None if doc.get(key) is None else root / doc[key]

        try:
            solver = SolverSettings(**doc.get("solver", {}))
            calib = dict(doc.get("calibration", {}))
            calibration = CalibrationSettings(solver=solver, **calib)
            uq = dict(doc.get("uq", {}))
            if "acceptance_band" in uq:
                uq["acceptance_band"] = tuple(uq["acceptance_band"])
            cfg = cls(rel("reference_parameters"), rel("healthy_ranges"), rel("patients"),
                      root / doc.get("output_dir", "out"), int(doc.get("seed", 0)),
                      int(doc.get("jobs", 1)), solver, calibration, UqSettings(**uq),
                      dict(doc.get("cohort", {})))
        except (TypeError, ValueError, ContractViolation) as exc:
            raise InputFileError(f"invalid config: {exc}") from exc
        if cfg.jobs < 1:
            raise InputFileError("jobs must be at least 1")
        return cfg

    def with_overrides(self, patients=None, out=None, seed=None, jobs=None,
                       samples_per_beat=None) -> "RunConfig":
        cfg = dataclasses.replace(self)
        if patients is not None:
            cfg.patients = Path(patients)
        if out is not None:
            cfg.output_dir = Path(out)
        if seed is not None:
            cfg.seed = int(seed)
        if jobs is not None:
            if jobs < 1:
                raise InputFileError("--jobs must be at least 1")
            cfg.jobs = int(jobs)
        if samples_per_beat is not None:
            try:
                cfg.solver = dataclasses.replace(cfg.solver, samples_per_beat=samples_per_beat)
            except ContractViolation as exc:
                raise InputFileError(str(exc)) from exc
            cfg.calibration = dataclasses.replace(cfg.calibration, solver=cfg.solver)
        return cfg

    # -- derived ------------------------------------------------------------
    def parameters(self):
        return reference_parameters() if self.reference_parameters is None \
            else load_parameters(self.reference_parameters)

    def ranges(self):
        return default_healthy_ranges() if self.healthy_ranges is None \
            else read_healthy_ranges(self.healthy_ranges)

    def load_patients(self):
        if self.patients is None:
            raise InputFileError("no patient file given (config 'patients' or --patients)")
        return read_patients(self.patients)

    def fingerprint(self) -> str:
        """Hash of every setting and input file that can change results.

        The worker count and output location are excluded on purpose.
        """
        doc = {
            "seed": self.seed,
            "solver": dataclasses.asdict(self.solver),
            "calibration": {k: v for k, v in dataclasses.asdict(self.calibration).items()
                            if k != "solver"},
            "uq": dataclasses.asdict(self.uq),
            "cohort": self.cohort,
        }
        h = hashlib.sha256(json.dumps(doc, sort_keys=True, default=list).encode())
        for p in (self.reference_parameters, self.healthy_ranges, self.patients):
            h.update(b"\0" if p is None or not Path(p).exists() else Path(p).read_bytes())
        return h.hexdigest()[:16]


def patient_seed(seed: int, index: int, stream: int) -> int:
    """Seed of one patient and one stage, fixed by position in the cohort file."""
    return int(np.random.SeedSequence([int(seed), int(index), int(stream)]).generate_state(1)[0])


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_json(doc, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFileError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# simulate

def run_simulate(cfg: RunConfig, params_path=None) -> dict:
    params = cfg.parameters() if params_path is None else load_parameters(params_path)
    traj = integrate(params, settings=cfg.solver)
    outputs = compute_outputs(traj, params)
    out = cfg.output_dir / "simulate"
    write_trajectory_csv(traj, out / "transient.csv")
    outputs_to_json(outputs, out / "outputs.json")
    return outputs


# ---------------------------------------------------------------------------
# synthetic cohort

def cohort_spec(cfg: RunConfig) -> CohortSpec:
    doc = dict(cfg.cohort)
    noise = doc.pop("noise", "default")
    if noise == "default":
        noise = default_noise()
    elif noise == "none":
        noise = {n: 0.0 for n in MO1_NAMES}
    elif isinstance(noise, (int, float)):
        noise = {n: float(noise) for n in MO1_NAMES}
    try:
        return CohortSpec(size=int(doc.pop("size", 20)), rng_seed=cfg.seed, noise=noise, **doc)
    except (TypeError, ContractViolation) as exc:
        raise InputFileError(f"invalid cohort settings: {exc}") from exc


def run_cohort(cfg: RunConfig):
    spec = cohort_spec(cfg)
    base = cfg.parameters()
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            patients, truths = generate(spec, default_space(base), base, cfg.solver, pool)
    else:
        patients, truths = generate(spec, default_space(base), base, cfg.solver)
    out = cfg.output_dir / "cohort"
    write_patients(patients, out / "patients.csv")
    write_ground_truth(truths, out / "ground_truth.json")
    return patients, truths


# ---------------------------------------------------------------------------
# calibrate

def _calibrate_task(args):
    patient, settings, seed, base = args
    return calibrate(patient, None, settings, seed=seed, base=base).to_dict()


def run_calibrate(cfg: RunConfig) -> dict:
    patients = cfg.load_patients()
    base = cfg.parameters()
    tasks = [(p, cfg.calibration, patient_seed(cfg.seed, i, 0), base)
             for i, p in enumerate(patients)]
    docs = _map(_calibrate_task, tasks, cfg.jobs)
    out = cfg.output_dir / "calibration"
    for doc in docs:
        _write_json(doc, out / f"{doc['patient_id']}.json")
    summary = {
        "converged": sum(d["converged"] for d in docs),
        "total": len(docs),
        "patients": [{"id": d["patient_id"], "converged": d["converged"], "loss": d["loss"],
                      "reason": d["failure_reason"]} for d in docs],
    }
    _write_json(summary, out / "summary.json")
    return summary


def load_calibrations(cfg: RunConfig, patients) -> list:
    out = cfg.output_dir / "calibration"
    return [CalibrationResult.from_dict(_read_json(out / f"{p.id}.json")) for p in patients]


# ---------------------------------------------------------------------------
# uq

def _uq_task(args):
    patient, calibration, settings, solver = args
    result = sample_outputs(patient, calibration, settings, solver)
    return uq_report(patient.id, result, settings)


def run_uq(cfg: RunConfig) -> dict:
    patients = cfg.load_patients()
    calibrations = load_calibrations(cfg, patients)
    tasks, skipped = [], []
    for i, (p, c) in enumerate(zip(patients, calibrations)):
        if not c.converged:
            skipped.append(p.id)
            continue
        settings = dataclasses.replace(cfg.uq, rng_seed=patient_seed(cfg.seed, i, 1))
        tasks.append((p, c, settings, cfg.solver))
    docs = _map(_uq_task, tasks, cfg.jobs)
    out = cfg.output_dir / "uq"
    for doc in docs:
        _write_json(doc, out / f"{doc['patient_id']}.json")
    summary = {"analysed": [d["patient_id"] for d in docs], "skipped_unconverged": skipped,
               "failed": [d["patient_id"] for d in docs if d["failed"]]}
    _write_json(summary, out / "summary.json")
    return summary


def load_uq_reports(cfg: RunConfig) -> list:
    summary = _read_json(cfg.output_dir / "uq" / "summary.json")
    return [_read_json(cfg.output_dir / "uq" / f"{pid}.json") for pid in summary["analysed"]]


# ---------------------------------------------------------------------------
# analyze

TABLE_I_TITLE = "Test I: clinical data against healthy ranges"
TABLE_II_TITLE = "Test II: reliable model outputs against healthy ranges"


def run_analyze(cfg: RunConfig, summaries=None) -> dict:
    """Tests I and II; ``summaries`` (a path, or True for the shipped cohort
    statistics) switches to summaries-only mode."""
    ranges = cfg.ranges()
    if summaries is not None:
        triples = published_summaries() if summaries is True else read_summaries(summaries)
        s1 = triples["I"]
        s2 = triples["II"]
        names1 = list(s1) or list(TEST_I_NAMES)
        names2 = list(s2) or list(TEST_II_NAMES)
    else:
        s1 = cohort_summarize(clinical_values(cfg.load_patients()))
        s2 = cohort_summarize(reliable_values(load_uq_reports(cfg)))
        names1, names2 = list(TEST_I_NAMES), list(TEST_II_NAMES)
    r1 = analyze(s1, ranges, names1, "I")
    r2 = analyze(s2, ranges, names2, "II")
    out = cfg.output_dir / "analysis"
    report = {"test_I": results_to_json(r1), "test_II": results_to_json(r2)}
    _write_json(report, out / "report.json")
    text = format_table(r1, TABLE_I_TITLE) + "\n" + format_table(r2, TABLE_II_TITLE)
    (out / "tables.txt").write_text(text)
    return {"report": report, "results": (r1, r2), "text": text}


# ---------------------------------------------------------------------------
# report

def run_report(cfg: RunConfig) -> Path:
    """Consolidated text and JSON document with figures, ordered by patient id."""
    from .plotting import plot_range_chart, plot_transients

    patients = sorted(cfg.load_patients(), key=lambda p: p.id)
    calibrations = {c.patient_id: c for c in load_calibrations(cfg, patients)}
    uq_dir = cfg.output_dir / "uq"
    uq = {p.id: _read_json(uq_dir / f"{p.id}.json") for p in patients
          if (uq_dir / f"{p.id}.json").exists()}
    analysis = run_analyze(cfg)
    r1, r2 = analysis["results"]
    out = cfg.output_dir / "report"
    fig_dir = out / "figures"

    lines = [f"cardio0d {__version__}", f"config hash {cfg.fingerprint()}", ""]
    converged = [p.id for p in patients if calibrations[p.id].converged]
    lines.append(f"Calibrated {len(converged)} of {len(patients)} patients")
    lines.append("")
    per_patient = []
    for p in patients:
        c = calibrations[p.id]
        entry = {"id": p.id, "converged": c.converged, "loss": c.loss_value,
                 "relative_errors": dict(sorted(c.relative_errors.items()))}
        lines.append(f"[{p.id}] HR {p.heart_rate:.1f} bpm, BSA {p.body_surface_area:.2f} m2, "
                     f"loss {c.loss_value:.3e} ({'converged' if c.converged else 'not converged'})")
        for name, e in sorted(c.relative_errors.items()):
            lines.append(f"    {name:16s} relative error {100 * e:+.2f}%")
        if p.id in uq:
            u = uq[p.id]
            reliable = sorted(n for n, v in u["outputs"].items() if v["reliable"])
            entry["uq"] = {"failed": u["failed"], "final_w": u["final_w"],
                           "total_draws": u["total_draws"], "reliable": reliable}
            if u["failed"]:
                lines.append(f"    uq failed: {u['reason']}")
            else:
                lines.append(f"    uq: w {u['final_w']:.4g}, {u['total_draws']} draws, "
                             f"{len(reliable)} reliable outputs")
        per_patient.append(entry)
    lines.append("")
    lines.append(analysis["text"])

    trajs = []
    for pid in converged:
        c = calibrations[pid]
        trajs.append((pid, integrate(c.params, init=c.periodic_state, settings=cfg.solver)))
    if trajs:
        plot_transients(trajs, fig_dir / "transients.png", "Calibrated patients, one beat")
    plot_range_chart(r2, fig_dir / "test_II.png", TABLE_II_TITLE)
    plot_range_chart(r1, fig_dir / "test_I.png", TABLE_I_TITLE)

    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    _write_json({"version": __version__, "config_hash": cfg.fingerprint(),
                 "converged": len(converged), "total": len(patients), "patients": per_patient,
                 "test_I": results_to_json(r1), "test_II": results_to_json(r2)},
                out / "report.json")
    return out / "report.txt"
