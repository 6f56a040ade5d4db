import io
import json

import numpy as np
import pytest

from cardio0d.calibration import (FAILURE_PENALTY, CalibrationResult, CalibrationSettings,
                                  ClinicalDatum, PatientRecord, build_bounds, calibrate,
                                  contractility_ratio, default_measurement_error, default_space,
                                  echo_from_elastance, load_rv_lookup, loss, loss_from_outputs,
                                  read_patients, relative_errors, restart_points,
                                  sweep_rv_elastance, write_patients)
from cardio0d.cohort import CohortSpec, generate
from cardio0d.errors import ContractViolation, InputFileError
from cardio0d.observables import compute_outputs
from cardio0d.solver import SolverSettings, integrate


@pytest.fixture(scope="module")
def space(ref):
    return default_space(ref)


@pytest.fixture(scope="module")
def twin(ref, space):
    patients, truths = generate(CohortSpec.twin(1, rng_seed=21), space, ref)
    return patients[0], truths[0]


def test_datum_and_record_contracts():
    with pytest.raises(ContractViolation):
        ClinicalDatum("CO", 5.0, 0.1)
    with pytest.raises(ContractViolation):
        ClinicalDatum("LV_EF", 0.0, 0.1)
    with pytest.raises(ContractViolation):
        ClinicalDatum("LV_EF", 60.0, -1.0)
    d = ClinicalDatum("LV_EF", 60.0, 3.0)
    with pytest.raises(ContractViolation):
        PatientRecord("p", 80, 1.8, None, None, (d, d))
    with pytest.raises(ContractViolation):
        PatientRecord("p", 80, 1.8, None, None, ())
    with pytest.raises(ContractViolation):
        PatientRecord("p", 0, 1.8, None, None, (d,))


def test_patient_file_round_trip(tmp_path):
    p = PatientRecord("P01", 72.5, 1.83, 40.0, None,
                      (ClinicalDatum("LV_EDV", 110.0, 11.0), ClinicalDatum("SAP_max", 131.0, 6.5)))
    path = tmp_path / "patients.csv"
    write_patients([p], path)
    assert read_patients(path) == [p]


def test_patient_file_defaults_and_errors():
    text = "id,HR,BSA,LV_EDV,PAP_max\nA,80,1.9,120,30\nB,70,1.7,,\n"
    with pytest.raises(InputFileError):
        read_patients(io.StringIO(text))          # B has no data at all
    a = read_patients(io.StringIO(text.splitlines()[0] + "\n" + text.splitlines()[1]))[0]
    assert a.datum("LV_EDV").measurement_error == pytest.approx(12.0)
    assert a.datum("PAP_max").measurement_error == pytest.approx(1.5)
    assert a.rv_fac is None and a.datum("LV_EF") is None
    with pytest.raises(InputFileError):
        read_patients(io.StringIO("id,HR\nA,80\n"))
    with pytest.raises(InputFileError):
        read_patients("/nonexistent/patients.csv")
    assert default_measurement_error("LV_EF", 60.0) == pytest.approx(3.0)


def test_shipped_space(ref, space):
    assert space.size == 12
    b = space.bound("RV.active_elastance")
    assert (b.lower, b.upper) == pytest.approx((0.75 * b.reference, 1.25 * b.reference))
    sh = space.bound("shunt_resistance")
    assert sh.lower == pytest.approx(0.01 * ref.shunt_resistance)
    assert np.all(space.lower < space.reference) and np.all(space.reference < space.upper)
    assert space.contains(space.reference) and not space.contains(space.upper * 1.01)
    np.testing.assert_array_equal(space.values_of(space.apply(ref, space.reference)),
                                  space.reference)
    assert type(space).from_dict(json.loads(json.dumps(space.to_dict()))) == space


def test_with_interval_leaves_others_alone(space):
    new = space.with_interval("RV.active_elastance", 0.1, 0.2)
    for a, b in zip(space.bounds, new.bounds):
        if a.param_id != "RV.active_elastance":
            assert a == b
    assert new.bound("RV.active_elastance").lower == 0.1


def test_contractility_ratio():
    assert contractility_ratio(45.0, 22.0) == pytest.approx(1.0)
    assert contractility_ratio(36.0, None) == pytest.approx(0.8)
    assert contractility_ratio(None, 11.0) == pytest.approx(0.5)
    assert contractility_ratio(None, None) is None
    with pytest.raises(ContractViolation):
        contractility_ratio(120.0, None)
    with pytest.raises(ContractViolation):
        contractility_ratio(None, -1.0)


def test_rv_lookup_is_monotone_and_invertible(ref):
    lk = load_rv_lookup()
    assert np.all(np.diff(lk.elastance) > 0) and np.all(np.diff(lk.ejection_fraction) > 0)
    assert lk.reference_elastance == pytest.approx(ref.get("RV.active_elastance"))
    e = 0.8 * lk.reference_elastance
    assert lk.elastance_for(lk.ejection_fraction_for(e)) == pytest.approx(e, rel=1e-9)
    # the shipped table agrees with a fresh simulation
    es, efs = sweep_rv_elastance(ref, [0.7, 1.0])
    np.testing.assert_allclose(efs, [lk.ejection_fraction_for(x) for x in es], rtol=2e-3)


def test_echo_drives_rv_interval(space):
    lk = load_rv_lookup()
    d = (ClinicalDatum("LV_EF", 60.0, 3.0),)
    normal = build_bounds(space, PatientRecord("n", 80, 1.8, 45.0, 22.0, d), lk)
    b0, b1 = space.bound("RV.active_elastance"), normal.bound("RV.active_elastance")
    assert (b1.lower, b1.upper) == pytest.approx((b0.lower, b0.upper), rel=1e-9)
    weak = build_bounds(space, PatientRecord("w", 80, 1.8, 30.0, 15.0, d), lk)
    bw = weak.bound("RV.active_elastance")
    assert bw.upper < b1.upper and bw.upper / bw.lower == pytest.approx(1.25 / 0.75)
    # the centre maps back to the echo-implied ejection fraction
    centre = (bw.lower + bw.upper) / 2
    rho = contractility_ratio(30.0, 15.0)
    assert lk.ejection_fraction_for(centre) == pytest.approx(rho * lk.reference_ejection_fraction,
                                                             rel=1e-3)
    assert build_bounds(space, PatientRecord("x", 80, 1.8, None, None, d), lk) == space
    fac, tapse = echo_from_elastance(centre, lk)
    assert contractility_ratio(fac, tapse) == pytest.approx(rho, rel=1e-3)


def test_loss_is_relative_and_scale_free():
    p = PatientRecord("p", 80, 1.8, None, None,
                      (ClinicalDatum("LV_EDV", 100.0, 10.0), ClinicalDatum("SAP_max", 120.0, 6.0)))
    out = {"LV_EDV": 110.0, "SAP_max": 114.0}
    assert relative_errors(out, p) == pytest.approx({"LV_EDV": 0.1, "SAP_max": -0.05})
    assert loss_from_outputs(out, p) == pytest.approx(0.01 + 0.0025)
    # mL -> L for one datum and its output leaves the loss unchanged
    q = PatientRecord("p", 80, 1.8, None, None,
                      (ClinicalDatum("LV_EDV", 0.1, 0.01), ClinicalDatum("SAP_max", 120.0, 6.0)))
    assert loss_from_outputs({"LV_EDV": 0.11, "SAP_max": 114.0}, q) == pytest.approx(0.0125)


def test_loss_vanishes_at_truth(ref, space, twin):
    patient, truth = twin
    x = np.array([truth.values[i] for i in space.ids])
    assert loss(x, patient, space, ref) < 1e-20
    assert loss(space.reference, patient, space, ref) > 1e-4


def test_loss_penalty_on_failure(ref, space, twin):
    patient, _ = twin
    assert loss(space.reference, patient, space, ref,
                settings=SolverSettings(max_beats=2)) == FAILURE_PENALTY


def test_restart_points(space):
    pts = restart_points(space, 3, 0.25, seed=4)
    assert pts.shape == (3, space.size)
    np.testing.assert_array_equal(pts[0], space.reference)
    assert all(space.contains(p) for p in pts)
    np.testing.assert_array_equal(pts, restart_points(space, 3, 0.25, seed=4))
    assert not np.array_equal(pts[1:], restart_points(space, 3, 0.25, seed=5)[1:])
    assert np.all(np.abs(np.log(pts[1:] / space.reference)) <= np.log(1.25) + 1e-12)


def test_settings_contracts():
    with pytest.raises(ContractViolation):
        CalibrationSettings(restarts=0)
    with pytest.raises(ContractViolation):
        CalibrationSettings(restart_spread=1.0)


def test_twin_calibration(ref, twin):
    patient, truth = twin
    res = calibrate(patient, seed=0, base=ref)
    assert res.converged and res.loss_value < 1e-3
    assert res.restarts_used == 3 and len(res.restart_losses) == 3
    assert res.loss_value <= min(res.initial_losses)
    assert res.space.contains(res.space.values_of(res.params))
    assert max(abs(e) for e in res.relative_errors.values()) < 0.032
    again = CalibrationResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert again.params == res.params and again.loss_value == res.loss_value
    np.testing.assert_array_equal(again.periodic_state, res.periodic_state)
    # the stored state is the periodic beat of the calibrated parameters
    out = compute_outputs(integrate(res.params, init=res.periodic_state), res.params)
    assert relative_errors(out, patient) == pytest.approx(res.relative_errors, abs=1e-4)


def test_unreachable_datum_does_not_converge(ref):
    # EF = 100 (EDV - ESV) / EDV holds for every beat, so these three cannot all match
    patient = PatientRecord("far", 80.0, 1.79, None, None,
                            (ClinicalDatum("LV_EDV", 100.0, 10.0),
                             ClinicalDatum("LV_ESV", 100.0, 10.0),
                             ClinicalDatum("LV_EF", 50.0, 2.5)))
    res = calibrate(patient, settings=CalibrationSettings(max_iterations=30), base=ref)
    assert not res.converged and res.loss_value >= 1e-3
    assert res.failure_reason
