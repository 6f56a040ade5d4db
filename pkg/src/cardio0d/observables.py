"""Reduction of a periodic beat to the named scalar model outputs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._layout import SIGNAL_NAMES, STATE_NAMES
from .errors import ContractViolation

# outputs with a clinical counterpart (used for calibration)
MO1_NAMES = ("LA_Vmax", "LV_EDV", "LV_ESV", "LV_EF", "max_grad_p_rAV",
             "SAP_max", "SAP_min", "PAP_max")
# outputs without one
MO2_NAMES = ("LA_Pmax", "LA_Pmin", "LA_Pmean", "LV_Pmax", "LV_Pmin",
             "RA_Pmax", "RA_Pmin", "RA_Pmean", "RV_Pmax", "RV_Pmin",
             "RA_I_Vmax", "RV_I_EDV", "RV_I_ESV", "RV_EF", "LV_SV", "CO", "CI",
             "SVR", "PVR", "PAP_min", "PAP_mean", "PWP_min", "PWP_mean", "ShuntFraction")
# indexed forms of the two MO1 volumes whose healthy ranges are stated per BSA
INDEXED_MO1 = ("LA_I_Vmax", "LV_I_EDV")
OUTPUT_NAMES = MO1_NAMES + MO2_NAMES + INDEXED_MO1

UNITS = {
    "LA_Vmax": "mL", "LV_EDV": "mL", "LV_ESV": "mL", "LV_EF": "%",
    "max_grad_p_rAV": "mmHg", "SAP_max": "mmHg", "SAP_min": "mmHg", "PAP_max": "mmHg",
    "RA_I_Vmax": "mL/m2", "RV_I_EDV": "mL/m2", "RV_I_ESV": "mL/m2", "RV_EF": "%",
    "LV_SV": "mL", "CO": "L/min", "CI": "L/min/m2", "SVR": "mmHg min/L",
    "PVR": "mmHg min/L", "ShuntFraction": "%", "LA_I_Vmax": "mL/m2", "LV_I_EDV": "mL/m2",
}
for _n in OUTPUT_NAMES:
    UNITS.setdefault(_n, "mmHg")

# display names as printed in clinical tables
DISPLAY_NAMES = {
    "max_grad_p_rAV": "max∇p_rAV", "RA_I_Vmax": "RA_I-Vmax", "RV_I_EDV": "RV_I-EDV",
    "RV_I_ESV": "RV_I-ESV", "LA_I_Vmax": "LA_I-Vmax", "LV_I_EDV": "LV_I-EDV",
    "ShuntFraction": "Shunt Fraction",
}


class _Dual:
    """Scalar carrying a gradient vector; just enough arithmetic for the outputs."""

    __slots__ = ("val", "d")

    def __init__(self, val, d):
        self.val = float(val)
        self.d = d

    @staticmethod
    def _wrap(x, like):
        return x if isinstance(x, _Dual) else _Dual(x, np.zeros_like(like.d))

    def __add__(self, o):
        o = self._wrap(o, self)
        return _Dual(self.val + o.val, self.d + o.d)

    __radd__ = __add__

    def __sub__(self, o):
        o = self._wrap(o, self)
        return _Dual(self.val - o.val, self.d - o.d)

    def __rsub__(self, o):
        return self._wrap(o, self) - self

    def __mul__(self, o):
        o = self._wrap(o, self)
        return _Dual(self.val * o.val, self.d * o.val + o.d * self.val)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = self._wrap(o, self)
        q = self.val / o.val
        return _Dual(q, (self.d - q * o.d) / o.val)

    def __rtruediv__(self, o):
        return self._wrap(o, self) / self


def _series(traj, name):
    if name in STATE_NAMES:
        i = STATE_NAMES.index(name)
        vals = traj.states[:, i]
        tang = traj.state_tangents[:, i] if traj.state_tangents is not None else None
    else:
        i = SIGNAL_NAMES.index(name)
        vals = traj.signals[:, i]
        tang = traj.signal_tangents[:, i] if traj.signal_tangents is not None else None
    if tang is None:
        tang = np.zeros((len(vals), 0))
    return vals, tang


def _max(vals, tang):
    i = int(np.argmax(vals))
    return _Dual(vals[i], tang[i].copy())


def _min(vals, tang):
    i = int(np.argmin(vals))
    return _Dual(vals[i], tang[i].copy())


def _mean(vals, tang):
    return _Dual(np.mean(vals), tang.mean(axis=0))


def _evaluate(traj, params, pvr_downstream):
    if not traj.converged:
        raise ContractViolation("outputs need a converged periodic beat")
    if pvr_downstream not in ("LA", "PWP"):
        raise ContractViolation("pvr_downstream must be 'LA' or 'PWP'")
    s = {n: _series(traj, n) for n in STATE_NAMES + SIGNAL_NAMES}
    bsa = params.body_surface_area
    hr = params.heart_rate
    out = {}

    def extrema(prefix, name, mean=True):
        out[f"{prefix}_Pmax"] = _max(*s[name])
        out[f"{prefix}_Pmin"] = _min(*s[name])
        if mean:
            out[f"{prefix}_Pmean"] = _mean(*s[name])

    out["LA_Vmax"] = _max(*s["V_LA"])
    lv_edv = _max(*s["V_LV"])
    lv_esv = _min(*s["V_LV"])
    lv_sv = lv_edv - lv_esv
    out["LV_EDV"], out["LV_ESV"] = lv_edv, lv_esv
    out["LV_EF"] = 100.0 * lv_sv / lv_edv

    grad_vals = s["p_RV"][0] - s["p_RA"][0]
    grad_tang = s["p_RV"][1] - s["p_RA"][1]
    out["max_grad_p_rAV"] = _max(grad_vals, grad_tang)

    out["SAP_max"] = _max(*s["p_AR_SYS"])
    out["SAP_min"] = _min(*s["p_AR_SYS"])
    out["PAP_max"] = _max(*s["p_AR_PUL"])

    extrema("LA", "p_LA")
    extrema("LV", "p_LV", mean=False)
    extrema("RA", "p_RA")
    extrema("RV", "p_RV", mean=False)

    out["RA_I_Vmax"] = _max(*s["V_RA"]) / bsa
    rv_edv = _max(*s["V_RV"])
    rv_esv = _min(*s["V_RV"])
    out["RV_I_EDV"] = rv_edv / bsa
    out["RV_I_ESV"] = rv_esv / bsa
    out["RV_EF"] = 100.0 * (rv_edv - rv_esv) / rv_edv

    out["LV_SV"] = lv_sv
    co = lv_sv * (hr / 1000.0)
    out["CO"] = co
    out["CI"] = co / bsa
    p_ra_mean = _mean(*s["p_RA"])
    p_la_mean = _mean(*s["p_LA"])
    sap_mean = _mean(*s["p_AR_SYS"])
    pap_mean = _mean(*s["p_AR_PUL"])
    pwp_mean = _mean(*s["p_C_PUL"])
    out["SVR"] = (sap_mean - p_ra_mean) / co
    downstream = p_la_mean if pvr_downstream == "LA" else pwp_mean
    out["PVR"] = (pap_mean - downstream) / co
    out["PAP_min"] = _min(*s["p_AR_PUL"])
    out["PAP_mean"] = pap_mean
    out["PWP_min"] = _min(*s["p_C_PUL"])
    out["PWP_mean"] = pwp_mean
    # uniform periodic grid: beat integrals are proportional to grid means
    q_sh = _mean(*s["Q_SH"])
    q_ox = _mean(*s["Q_C_PUL"])
    out["ShuntFraction"] = 100.0 * q_sh / (q_sh + q_ox)

    out["LA_I_Vmax"] = out["LA_Vmax"] / bsa
    out["LV_I_EDV"] = lv_edv / bsa
    return {name: out[name] for name in OUTPUT_NAMES}


def compute_outputs(traj, params, pvr_downstream: str = "LA") -> dict:
    """Named scalar outputs of a converged beat, as a plain ``{name: value}`` map.

    ``pvr_downstream`` selects mean left atrial ("LA") or mean wedge ("PWP")
    pressure as the downstream pressure of the pulmonary resistance.
    """
    return {k: v.val for k, v in _evaluate(traj, params, pvr_downstream).items()}


def compute_outputs_with_tangents(traj, params, pvr_downstream: str = "LA"):
    """Outputs and their gradients w.r.t. ``traj.directions``.

    Extrema differentiate through the grid sample attaining them.
    """
    duals = _evaluate(traj, params, pvr_downstream)
    return ({k: v.val for k, v in duals.items()},
            {k: np.asarray(v.d, dtype=float) for k, v in duals.items()})


def ejection_fraction(edv: float, esv: float) -> float:
    return 100.0 * (edv - esv) / edv


def cardiac_index(co: float, bsa: float) -> float:
    return co / bsa


def vascular_resistance(p_up_mean: float, p_down_mean: float, co: float) -> float:
    """Mean pressure drop over cardiac output, in mmHg min/L."""
    return (p_up_mean - p_down_mean) / co


def shunt_fraction(q_shunt_integral: float, q_oxygenated_integral: float) -> float:
    return 100.0 * q_shunt_integral / (q_shunt_integral + q_oxygenated_integral)


def outputs_to_json(outputs: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps({k: float(outputs[k]) for k in outputs}, indent=2) + "\n")
