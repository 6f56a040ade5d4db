import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cardio0d.errors import ContractViolation, InputFileError
from cardio0d.model import (ChamberParams, ModelParameters, ModelState, ValveParams, activation,
                            adapt_state, adapt_state_tangent, chamber_pressure, derived_signals,
                            equilibrium_state, load_parameters, parameters_to_dict, rhs,
                            save_parameters, total_blood_volume, valve_flow)
from cardio0d._layout import I_VTOT, PARAM_INDEX, STATE_NAMES


def circuit_rhs(t, y, p):
    """Plain restatement of the circuit balance laws, written from the topology."""
    T = p.period
    V = dict(zip(("LA", "LV", "RA", "RV"), y[:4]))
    P = dict(zip(("AR_SYS", "C_SYS", "VEN_SYS", "AR_PUL", "C_PUL", "VEN_PUL"), y[4:10]))
    Q = dict(zip(("AR_SYS", "VEN_SYS", "AR_PUL", "VEN_PUL"), y[10:14]))
    pc = {c: chamber_pressure(V[c], t, p.chambers[c], T) for c in V}
    mv = valve_flow(pc["LA"], pc["LV"], p.valves["MV"])
    av = valve_flow(pc["LV"], P["AR_SYS"], p.valves["AV"])
    tv = valve_flow(pc["RA"], pc["RV"], p.valves["TV"])
    pv = valve_flow(pc["RV"], P["AR_PUL"], p.valves["PV"])
    vs = p.vascular
    downstream = {"AR_SYS": P["C_SYS"], "VEN_SYS": pc["RA"], "AR_PUL": P["C_PUL"],
                  "VEN_PUL": pc["LA"]}
    upstream = {k: P[k] for k in downstream}
    dq, flow = {}, {}
    for k in downstream:
        drop = upstream[k] - downstream[k]
        if vs[k].inertance > 0:
            flow[k] = Q[k]
            dq[k] = (drop - vs[k].resistance * Q[k]) / vs[k].inertance
        else:
            flow[k] = drop / vs[k].resistance
            dq[k] = 0.0
    q_csys = (P["C_SYS"] - P["VEN_SYS"]) / vs["C_SYS"].resistance
    q_cpul = (P["C_PUL"] - P["VEN_PUL"]) / vs["C_PUL"].resistance
    q_sh = (P["AR_PUL"] - P["VEN_PUL"]) / p.shunt_resistance
    return np.array([
        flow["VEN_PUL"] - mv, mv - av, flow["VEN_SYS"] - tv, tv - pv,
        (av - flow["AR_SYS"]) / vs["AR_SYS"].compliance,
        (flow["AR_SYS"] - q_csys) / vs["C_SYS"].compliance,
        (q_csys - flow["VEN_SYS"]) / vs["VEN_SYS"].compliance,
        (pv - flow["AR_PUL"] - q_sh) / vs["AR_PUL"].compliance,
        (flow["AR_PUL"] - q_cpul) / vs["C_PUL"].compliance,
        (q_cpul + q_sh - flow["VEN_PUL"]) / vs["VEN_PUL"].compliance,
        dq["AR_SYS"], dq["VEN_SYS"], dq["AR_PUL"], dq["VEN_PUL"],
    ])


def random_state(rng):
    return np.concatenate([rng.uniform(40, 150, 4), rng.uniform(-2, 120, 6),
                           rng.uniform(-50, 400, 4)])


def test_rhs_matches_balance_laws(ref):
    rng = np.random.default_rng(0)
    for _ in range(50):
        y, t = random_state(rng), rng.uniform(0, 3 * ref.period)
        np.testing.assert_allclose(rhs(t, y, ref), circuit_rhs(t, y, ref), rtol=1e-12, atol=1e-9)


def test_rhs_with_algebraic_branch(ref):
    p = ref.with_values({"VEN_SYS.inertance": 0.0, "AR_PUL.inertance": 0.0})
    rng = np.random.default_rng(1)
    y = random_state(rng)
    f = rhs(0.3, y, p)
    np.testing.assert_allclose(f, circuit_rhs(0.3, y, p), rtol=1e-12, atol=1e-9)
    assert f[STATE_NAMES.index("Q_VEN_SYS")] == 0.0


def test_total_volume_is_conserved_by_rhs(ref):
    rng = np.random.default_rng(2)
    th = ref.to_vector()
    comp = np.array([v.compliance for v in ref.vascular.values()])
    for _ in range(20):
        y = random_state(rng)
        f = rhs(rng.uniform(0, 1), y, th)
        rate = f[:4].sum() + comp @ f[4:10]
        assert abs(rate) < 1e-9 * np.abs(f).max()


def test_derived_signals_agree_with_laws(ref):
    y = equilibrium_state(ref).values + 5.0
    s = derived_signals(0.1, y, ref)
    assert s.p_LV == pytest.approx(chamber_pressure(y[1], 0.1, ref.chambers["LV"], ref.period))
    assert s.Q_SH == pytest.approx((y[7] - y[9]) / ref.shunt_resistance)


@given(st.floats(0, 0.99), st.floats(0.01, 0.99), st.floats(0, 5))
@settings(max_examples=200, deadline=None)
def test_activation_shape(onset, duration, t):
    ch = ChamberParams(1.0, 1.0, 0.0, onset, duration)
    a = activation(t, ch, 1.0)
    assert 0.0 <= a <= 1.0
    assert activation(t + 1.0, ch, 1.0) == pytest.approx(a, abs=1e-9)
    mid = onset + duration / 2
    assert activation(mid, ch, 1.0) == pytest.approx(1.0)
    assert activation(onset + duration + 1e-9 + (1 - duration) / 2, ch, 1.0) == 0.0


def test_activation_period_scaling():
    ch = ChamberParams(1.0, 1.0, 0.0, 0.1, 0.3)
    assert activation(0.25 * 0.75, ch, 0.75) == pytest.approx(1.0)


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_valve_is_a_two_resistance_diode(pu, pd):
    v = ValveParams(0.01, 1e4)
    q = valve_flow(pu, pd, v)
    assert q == pytest.approx((pu - pd) / (0.01 if pu >= pd else 1e4))
    assert math.copysign(1, q) == math.copysign(1, pu - pd) or q == 0


def test_parameter_invariants(ref):
    with pytest.raises(ContractViolation):
        ChamberParams(0.0, 1.0, 0.0, 0.0, 0.3)
    with pytest.raises(ContractViolation):
        ChamberParams(1.0, 1.0, 0.0, 1.0, 0.3)
    with pytest.raises(ContractViolation):
        ValveParams(1.0, 0.5)
    with pytest.raises(ContractViolation):
        ref.with_values({"shunt_resistance": 0.0})
    with pytest.raises(ContractViolation):
        ModelParameters(ref.chambers, {}, ref.vascular, 1.0, 80.0, 1.8, 5000.0)


def test_vector_and_file_round_trip(ref, tmp_path):
    assert ModelParameters.from_vector(ref.to_vector()) == ref
    path = tmp_path / "p.json"
    save_parameters(ref, path)
    assert load_parameters(path) == ref
    assert ref.get("RV.active_elastance") == ref.to_vector()[PARAM_INDEX["RV.active_elastance"]]


def test_parameter_file_errors(ref, tmp_path):
    doc = parameters_to_dict(ref)
    doc.pop(next(k for k in doc if k != "format_version"))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(InputFileError):
        load_parameters(bad)
    with pytest.raises(InputFileError):
        load_parameters(tmp_path / "missing.json")
    doc = parameters_to_dict(ref)
    doc[next(k for k in doc if "resistance" in k)] = -1.0
    bad.write_text(json.dumps(doc))
    with pytest.raises(InputFileError):
        load_parameters(bad)


def test_equilibrium_state_holds_total_volume(ref):
    s = equilibrium_state(ref)
    assert total_blood_volume(s, ref) == pytest.approx(ref.total_blood_volume, rel=1e-12)
    pressures = s.values[4:10]
    assert np.ptp(pressures) == 0.0
    assert np.all(s.values[10:] == 0.0)


def test_model_state_access():
    s = ModelState.from_named(V_LV=120.0, p_AR_SYS=90.0)
    assert s.V_LV == 120.0 and s.p_AR_SYS == 90.0 and s.Q_AR_SYS == 0.0
    assert s.as_dict()["V_LV"] == 120.0
    with pytest.raises(ContractViolation):
        ModelState(np.zeros(3))
    with pytest.raises(AttributeError):
        s.nonsense


def test_adapt_state_matches_new_volume(ref):
    y = equilibrium_state(ref).values
    p = ref.with_values({"total_blood_volume": ref.total_blood_volume * 1.1,
                         "VEN_SYS.compliance": ref.vascular["VEN_SYS"].compliance * 0.8})
    assert total_blood_volume(adapt_state(y, p), p) == pytest.approx(p.total_blood_volume)
    np.testing.assert_array_equal(adapt_state(y, p)[4:], y[4:])


@pytest.mark.parametrize("pid", ["total_blood_volume", "VEN_SYS.compliance",
                                 "AR_PUL.unstressed_volume", "LV.active_elastance"])
def test_adapt_state_tangent_is_derivative(ref, pid):
    y = equilibrium_state(ref).values + np.linspace(0, 3, 14)
    idx = PARAM_INDEX[pid]
    th = ref.to_vector()
    ds = adapt_state_tangent(y, th, [idx])[:, 0]
    h = 1e-6 * max(abs(th[idx]), 1.0)
    up, down = th.copy(), th.copy()
    up[idx] += h
    down[idx] -= h
    fd = (adapt_state(y, up) - adapt_state(y, down)) / (2 * h)
    np.testing.assert_allclose(ds, fd, atol=1e-6)


def test_adapt_state_tangent_corrects_a_guess(ref):
    y = equilibrium_state(ref).values
    th = ref.to_vector()
    guess = np.random.default_rng(3).normal(size=(14, 1))
    ds = adapt_state_tangent(y, th, [I_VTOT], guess)
    comp = th[29:52:4]
    assert ds[:4, 0].sum() + comp @ ds[4:10, 0] == pytest.approx(1.0)
    np.testing.assert_array_equal(ds[4:], guess[4:])
