"""Regenerate the calibration data files shipped with the package.

Writes the RV elastance lookup (sweep of RV active elastance on the reference
individual) and the calibrated parameter set with its interval factors. The
shunt resistance lower factor is the largest round value that still lets the
reference individual reach a 70% shunt fraction.
"""

import argparse
import json
import math
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from cardio0d.calibration import sweep_rv_elastance
from cardio0d.model import reference_parameters
from cardio0d.observables import compute_outputs
from cardio0d.solver import integrate

DATA = Path(__file__).resolve().parents[1] / "src" / "cardio0d" / "data"

CALIBRATED = [
    "LV.active_elastance", "RV.active_elastance", "LA.active_elastance", "RA.active_elastance",
    "AR_SYS.resistance", "AR_SYS.compliance", "AR_PUL.resistance", "AR_PUL.compliance",
    "shunt_resistance", "C_SYS.resistance", "total_blood_volume", "RV.passive_elastance",
]


def shunt_fraction_at(p, r_sh):
    q = p.with_values({"shunt_resistance": r_sh})
    return compute_outputs(integrate(q), q)["ShuntFraction"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=49)
    args = ap.parse_args()
    p = reference_parameters()

    factors = np.geomspace(0.25, 4.0, args.points)
    factors[np.argmin(np.abs(np.log(factors)))] = 1.0
    e, ef = sweep_rv_elastance(p, factors)
    if np.any(np.diff(ef) <= 0):
        raise SystemExit("RV ejection fraction is not increasing along the sweep")
    ref_e = p.get("RV.active_elastance")
    lookup = {
        "elastance": [float(x) for x in e],
        "ejection_fraction": [float(x) for x in ef],
        "reference_elastance": ref_e,
        "reference_ejection_fraction": float(ef[list(factors).index(1.0)]),
    }
    (DATA / "rv_elastance_lookup.json").write_text(json.dumps(lookup, indent=1) + "\n")

    r_ref = p.shunt_resistance
    r70 = math.exp(brentq(lambda lr: shunt_fraction_at(p, math.exp(lr)) - 70.0,
                          math.log(r_ref * 1e-4), math.log(r_ref), xtol=1e-6))
    lo = r70 / r_ref
    digits = -math.floor(math.log10(lo)) + 1
    lo = math.floor(lo * 10 ** digits) / 10 ** digits
    print(f"70% shunt at R_SH = {r70:.5g} ({r70 / r_ref:.4g} x reference); lower factor {lo}")

    params = []
    for pid in CALIBRATED:
        lower, upper = 0.5, 2.0
        if pid == "RV.active_elastance":
            lower, upper = 0.75, 1.25
        elif pid == "shunt_resistance":
            lower = lo
        params.append({"id": pid, "lower_factor": lower, "upper_factor": upper})
    (DATA / "calibration_space.json").write_text(json.dumps({"parameters": params}, indent=1) + "\n")


if __name__ == "__main__":
    main()
