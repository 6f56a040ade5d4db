"""Index layout of the flat state, signal and parameter vectors.

The numba kernels work on plain float arrays; these constants are the single
source of truth for what lives where.
"""

CHAMBERS = ("LA", "LV", "RA", "RV")
CHAMBER_FIELDS = ("passive_elastance", "active_elastance", "rest_volume",
                  "activation_onset", "activation_duration")
VALVES = ("MV", "AV", "TV", "PV")
VALVE_FIELDS = ("r_open", "r_closed")
VESSELS = ("AR_SYS", "C_SYS", "VEN_SYS", "AR_PUL", "C_PUL", "VEN_PUL")
VESSEL_FIELDS = ("resistance", "compliance", "inertance", "unstressed_volume")

# parameter vector
I_CH = 0
I_VALVE = I_CH + 5 * len(CHAMBERS)           # 20
I_VES = I_VALVE + 2 * len(VALVES)             # 28
I_RSH = I_VES + 4 * len(VESSELS)              # 52
I_HR = I_RSH + 1
I_BSA = I_HR + 1
I_VTOT = I_BSA + 1
N_THETA = I_VTOT + 1                          # 56

PARAM_IDS = (
    [f"{c}.{f}" for c in CHAMBERS for f in CHAMBER_FIELDS]
    + [f"{v}.{f}" for v in VALVES for f in VALVE_FIELDS]
    + [f"{k}.{f}" for k in VESSELS for f in VESSEL_FIELDS]
    + ["shunt_resistance", "heart_rate", "body_surface_area", "total_blood_volume"]
)
PARAM_INDEX = {name: i for i, name in enumerate(PARAM_IDS)}

# activation timing and heart rate only shape the clock, no tangents exist for them
NON_DIFFERENTIABLE = frozenset(
    [PARAM_INDEX[f"{c}.activation_onset"] for c in CHAMBERS]
    + [PARAM_INDEX[f"{c}.activation_duration"] for c in CHAMBERS]
    + [I_HR, I_BSA]
)

# state vector
STATE_NAMES = ("V_LA", "V_LV", "V_RA", "V_RV",
               "p_AR_SYS", "p_C_SYS", "p_VEN_SYS", "p_AR_PUL", "p_C_PUL", "p_VEN_PUL",
               "Q_AR_SYS", "Q_VEN_SYS", "Q_AR_PUL", "Q_VEN_PUL")
N_STATE = len(STATE_NAMES)
S_V = 0          # first chamber volume
S_P = 4          # first vessel pressure, ordered as VESSELS
S_Q = 10         # first inertial flow

# vessels carrying an inertial flow state, in state order
FLOW_VESSELS = (0, 2, 3, 5)   # AR_SYS, VEN_SYS, AR_PUL, VEN_PUL

# derived signals (first 11 are public, last 4 are the effective branch flows)
SIGNAL_NAMES = ("p_LA", "p_LV", "p_RA", "p_RV",
                "Q_MV", "Q_AV", "Q_TV", "Q_PV",
                "Q_C_SYS", "Q_C_PUL", "Q_SH")
N_SIGNAL_PUBLIC = len(SIGNAL_NAMES)
N_SIGNAL = N_SIGNAL_PUBLIC + 4
