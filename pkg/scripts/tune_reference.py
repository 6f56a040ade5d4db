"""Re-tune the shipped reference parameters so every output sits inside its healthy range.

Run once by hand; writes src/cardio0d/data/reference_parameters.json.
"""

import argparse

import numpy as np
from scipy.optimize import least_squares

from cardio0d.errors import Cardio0DError
from cardio0d.model import load_parameters, reference_parameters, save_parameters
from cardio0d.observables import compute_outputs
from cardio0d.solver import integrate
from cardio0d.stats import default_healthy_ranges

FREE = [
    "LA.passive_elastance", "LA.active_elastance", "LV.passive_elastance", "LV.active_elastance",
    "RA.passive_elastance", "RA.active_elastance", "RV.passive_elastance", "RV.active_elastance",
    "AR_SYS.resistance", "AR_SYS.compliance", "C_SYS.resistance", "VEN_SYS.compliance",
    "AR_PUL.resistance", "AR_PUL.compliance", "C_PUL.resistance", "VEN_PUL.compliance",
    "shunt_resistance", "total_blood_volume", "LV.rest_volume", "RV.rest_volume",
]

# comfortably healthy targets: (value, scale)
TARGETS = {
    "LA_I_Vmax": (26.0, 3.0), "RA_I_Vmax": (25.0, 3.0), "LV_I_EDV": (66.0, 4.0),
    "LV_ESV": (42.0, 2.0), "LV_EF": (58.0, 2.0), "RV_I_EDV": (62.0, 5.0), "RV_I_ESV": (30.0, 4.0),
    "RV_EF": (56.0, 3.0), "SAP_max": (118.0, 5.0), "SAP_min": (74.0, 3.0), "PAP_max": (23.5, 0.7), "RV_Pmax": (25.0, 0.5),
    "PAP_min": (14.5, 0.5), "PAP_mean": (19.0, 0.5), "PWP_mean": (10.0, 1.0),
    "LA_Pmean": (8.0, 0.5), "LA_Pmax": (11.0, 1.0), "RA_Pmean": (4.0, 1.0), "LV_Pmin": (5.2, 0.3), "RV_Pmin": (3.0, 1.0),
    "CI": (3.0, 0.07), "PVR": (2.3, 0.1), "SVR": (14.5, 1.0), "ShuntFraction": (2.5, 0.3),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="src/cardio0d/data/reference_parameters.json")
    ap.add_argument("--max-nfev", type=int, default=300)
    ap.add_argument("--init", help="start from this parameter file")
    args = ap.parse_args()

    p0 = load_parameters(args.init) if args.init else reference_parameters()
    x0 = np.log([p0.get(k) for k in FREE])
    names = list(TARGETS)

    def outputs(x):
        p = p0.with_values(dict(zip(FREE, np.exp(x))))
        return p, compute_outputs(integrate(p), p)

    def resid(x):
        try:
            _, o = outputs(x)
        except Cardio0DError:
            return np.full(len(names), 1e3)
        return np.array([(o[n] - TARGETS[n][0]) / TARGETS[n][1] for n in names])

    res = least_squares(resid, x0, bounds=(x0 - np.log(5), x0 + np.log(5)),
                        diff_step=1e-2, xtol=1e-10, ftol=1e-10, max_nfev=args.max_nfev, verbose=1)
    p, o = outputs(res.x)
    ranges = default_healthy_ranges()
    bad = 0
    for k, v in o.items():
        h = ranges.get(k)
        ok = h is None or h.contains(v)
        bad += not ok
        print(f"{k:16s} {v:9.3f}{'' if ok else '  OUT OF RANGE'}")
    for k in FREE:
        print(f"{k:24s} {p.get(k):.4g}")
    save_parameters(p, args.out)
    print("violations:", bad)


if __name__ == "__main__":
    main()
