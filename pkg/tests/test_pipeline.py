import json

import pytest

from cardio0d.errors import InputFileError
from cardio0d.pipeline import RunConfig, cohort_spec, patient_seed
from cardio0d.plotting import plot_range_chart, plot_transients
from cardio0d.solver import SolverSettings, integrate
from cardio0d.stats import analyze, default_healthy_ranges, published_summaries, TEST_II_NAMES


def test_config_paths_are_relative_to_the_file(tmp_path):
    (tmp_path / "sub").mkdir()
    path = tmp_path / "sub" / "cfg.json"
    path.write_text(json.dumps({"patients": "p.csv", "output_dir": "res", "seed": 4,
                                "uq": {"n": 20, "acceptance_band": [0.1, 0.2]}}))
    cfg = RunConfig.load(path)
    assert cfg.patients == tmp_path / "sub" / "p.csv"
    assert cfg.output_dir == tmp_path / "sub" / "res"
    assert cfg.uq.n == 20 and cfg.uq.acceptance_band == (0.1, 0.2)
    assert cfg.calibration.solver is cfg.solver


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"solver": {"rel_tol": -1}}, {"jobs": 0},
                                 {"uq": {"n": 3}}, {"calibration": {"restarts": 0}}])
def test_invalid_configs(doc):
    with pytest.raises(InputFileError):
        RunConfig.from_dict(doc)


def test_fingerprint_ignores_workers_and_location(tmp_path):
    cfg = RunConfig.from_dict({"seed": 1}, tmp_path)
    assert cfg.with_overrides(jobs=8, out=tmp_path / "x").fingerprint() == cfg.fingerprint()
    assert cfg.with_overrides(seed=2).fingerprint() != cfg.fingerprint()
    assert cfg.with_overrides(samples_per_beat=500).fingerprint() != cfg.fingerprint()


def test_seeds_per_patient_and_stage():
    seeds = {patient_seed(7, i, s) for i in range(50) for s in (0, 1)}
    assert len(seeds) == 100
    assert patient_seed(7, 3, 1) == patient_seed(7, 3, 1)


def test_cohort_settings_from_config():
    spec = cohort_spec(RunConfig.from_dict({"seed": 5, "cohort": {"size": 4, "noise": 0.02}}))
    assert spec.size == 4 and spec.rng_seed == 5 and set(spec.noise.values()) == {0.02}
    assert set(cohort_spec(RunConfig.from_dict({"cohort": {"noise": "none"}})).noise.values()) \
        == {0.0}
    with pytest.raises(InputFileError):
        cohort_spec(RunConfig.from_dict({"cohort": {"colour": 1}}))


def test_figures_are_written(ref, tmp_path):
    tr = integrate(ref, settings=SolverSettings(samples_per_beat=200))
    plot_transients([("reference", tr)], tmp_path / "t.png", "Reference")
    s = published_summaries()
    plot_range_chart(analyze(s["II"], default_healthy_ranges(), TEST_II_NAMES, "II"),
                     tmp_path / "r.png")
    for name in ("t.png", "r.png"):
        assert (tmp_path / name).read_bytes()[:4] == b"\x89PNG"
