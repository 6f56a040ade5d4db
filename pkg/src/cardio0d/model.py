"""Closed-loop lumped-parameter circuit: parameters, state and algebraic relations.

Topology::

    LA -MV-> LV -AV-> AR_SYS =RL=> C_SYS -R-> VEN_SYS =RL=> RA -TV-> RV -PV-> AR_PUL
    AR_PUL =RL=> C_PUL -R-> VEN_PUL      (oxygenated capillaries)
    AR_PUL ---R_SH----> VEN_PUL          (non-oxygenated capillaries, shunt)
    VEN_PUL =RL=> LA

Chambers follow a time-varying elastance law, valves are two-resistance
diodes, vessels are compliant nodes joined by resistive (and, on the four
arterial/venous branches, inertial) connections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import _kernels
from ._layout import (CHAMBERS, I_BSA, I_HR, I_RSH, I_VTOT, N_SIGNAL, N_STATE, N_THETA,
                      PARAM_IDS, PARAM_INDEX, S_P, SIGNAL_NAMES, STATE_NAMES, VALVES, VESSELS)
from .errors import ContractViolation, InputFileError, NumericFailure

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ChamberParams:
    passive_elastance: float      # mmHg/mL
    active_elastance: float       # mmHg/mL
    rest_volume: float            # mL
    activation_onset: float       # fraction of the beat
    activation_duration: float    # fraction of the beat

    def __post_init__(self):
        if not self.passive_elastance > 0:
            raise ContractViolation("passive elastance must be positive")
        if not self.active_elastance >= 0:
            raise ContractViolation("active elastance must be non-negative")
        if not self.rest_volume >= 0:
            raise ContractViolation("rest volume must be non-negative")
        if not 0 <= self.activation_onset < 1:
            raise ContractViolation("activation onset must lie in [0, 1)")
        if not 0 < self.activation_duration < 1:
            raise ContractViolation("activation duration must lie in (0, 1)")


@dataclass(frozen=True)
class ValveParams:
    r_open: float     # mmHg s/mL
    r_closed: float   # mmHg s/mL

    def __post_init__(self):
        if not 0 < self.r_open < self.r_closed:
            raise ContractViolation("valve resistances need 0 < r_open < r_closed")


@dataclass(frozen=True)
class VascularParams:
    resistance: float           # mmHg s/mL
    compliance: float           # mL/mmHg
    inertance: float = 0.0      # mmHg s^2/mL
    unstressed_volume: float = 0.0  # mL

    def __post_init__(self):
        if not self.resistance > 0:
            raise ContractViolation("vascular resistance must be positive")
        if not self.compliance > 0:
            raise ContractViolation("vascular compliance must be positive")
        if not self.inertance >= 0:
            raise ContractViolation("inertance must be non-negative")
        if not self.unstressed_volume >= 0:
            raise ContractViolation("unstressed volume must be non-negative")


@dataclass(frozen=True)
class ModelParameters:
    """All circuit constants of one individual.

    ``chambers``, ``valves`` and ``vascular`` are keyed by the names in
    ``CHAMBERS``, ``VALVES`` and ``VESSELS``.
    """

    chambers: dict
    valves: dict
    vascular: dict
    shunt_resistance: float
    heart_rate: float                # beats/min
    body_surface_area: float         # m^2
    total_blood_volume: float        # mL

    def __post_init__(self):
        if set(self.chambers) != set(CHAMBERS):
            raise ContractViolation(f"chambers must be exactly {CHAMBERS}")
        if set(self.valves) != set(VALVES):
            raise ContractViolation(f"valves must be exactly {VALVES}")
        if set(self.vascular) != set(VESSELS):
            raise ContractViolation(f"vascular compartments must be exactly {VESSELS}")
        if not self.heart_rate > 0:
            raise ContractViolation("heart rate must be positive")
        if not self.body_surface_area > 0:
            raise ContractViolation("body surface area must be positive")
        if not self.shunt_resistance > 0:
            raise ContractViolation("shunt resistance must be positive")

    @property
    def period(self) -> float:
        """Heartbeat period in seconds."""
        return 60.0 / self.heart_rate

    def to_vector(self) -> np.ndarray:
        th = np.empty(N_THETA)
        for name in PARAM_IDS:
            th[PARAM_INDEX[name]] = self.get(name)
        return th

    @classmethod
    def from_vector(cls, th) -> "ModelParameters":
        th = np.asarray(th, dtype=float)
        if th.shape != (N_THETA,):
            raise ContractViolation(f"parameter vector must have length {N_THETA}")
        chambers = {c: ChamberParams(*(float(x) for x in th[5 * i:5 * i + 5]))
                    for i, c in enumerate(CHAMBERS)}
        valves = {v: ValveParams(float(th[20 + 2 * i]), float(th[21 + 2 * i]))
                  for i, v in enumerate(VALVES)}
        vascular = {k: VascularParams(*(float(x) for x in th[28 + 4 * i:32 + 4 * i]))
                    for i, k in enumerate(VESSELS)}
        return cls(chambers, valves, vascular, float(th[I_RSH]), float(th[I_HR]),
                   float(th[I_BSA]), float(th[I_VTOT]))

    def get(self, param_id: str) -> float:
        """Value of a parameter addressed by its id, e.g. ``"LV.active_elastance"``."""
        head, _, tail = param_id.partition(".")
        if not tail:
            return float(getattr(self, param_id))
        for group in (self.chambers, self.valves, self.vascular):
            if head in group:
                return float(getattr(group[head], tail))
        raise KeyError(param_id)

    def with_values(self, values: dict) -> "ModelParameters":
        th = self.to_vector()
        for name, x in values.items():
            th[PARAM_INDEX[name]] = x
        return ModelParameters.from_vector(th)

    def with_patient(self, heart_rate: float, body_surface_area: float) -> "ModelParameters":
        return replace(self, heart_rate=float(heart_rate),
                       body_surface_area=float(body_surface_area))


# ---------------------------------------------------------------------------
# parameter file

def _json_keys():
    units_ch = {"passive_elastance": "mmHg_per_mL", "active_elastance": "mmHg_per_mL",
                "rest_volume": "mL", "activation_onset": "fraction",
                "activation_duration": "fraction"}
    units_va = {"r_open": "mmHg_s_per_mL", "r_closed": "mmHg_s_per_mL"}
    units_ve = {"resistance": "mmHg_s_per_mL", "compliance": "mL_per_mmHg",
                "inertance": "mmHg_s2_per_mL", "unstressed_volume": "mL"}
    keys = {}
    for name in PARAM_IDS:
        head, _, tail = name.partition(".")
        if head in CHAMBERS:
            keys[name] = f"chamber.{head}.{tail}_{units_ch[tail]}"
        elif head in VALVES:
            keys[name] = f"valve.{head}.{tail}_{units_va[tail]}"
        elif head in VESSELS:
            keys[name] = f"vascular.{head}.{tail}_{units_ve[tail]}"
    keys["shunt_resistance"] = "shunt_resistance_mmHg_s_per_mL"
    keys["heart_rate"] = "heart_rate_bpm"
    keys["body_surface_area"] = "body_surface_area_m2"
    keys["total_blood_volume"] = "total_blood_volume_mL"
    return keys


JSON_KEYS = _json_keys()


def parameters_to_dict(params: ModelParameters) -> dict:
    out = {"format_version": FORMAT_VERSION}
    for name, key in JSON_KEYS.items():
        out[key] = params.get(name)
    return out


def parameters_from_dict(doc: dict) -> ModelParameters:
    th = np.empty(N_THETA)
    missing = [key for key in JSON_KEYS.values() if key not in doc]
    if missing:
        raise InputFileError(f"parameter document lacks keys: {', '.join(missing)}")
    for name, key in JSON_KEYS.items():
        th[PARAM_INDEX[name]] = float(doc[key])
    return ModelParameters.from_vector(th)


def save_parameters(params: ModelParameters, path) -> None:
    Path(path).write_text(json.dumps(parameters_to_dict(params), indent=2) + "\n")


def load_parameters(path) -> ModelParameters:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFileError(f"cannot read parameter file {path}: {exc}") from exc
    try:
        return parameters_from_dict(doc)
    except (ContractViolation, ValueError, TypeError) as exc:
        raise InputFileError(f"invalid parameter file {path}: {exc}") from exc


def reference_parameters() -> ModelParameters:
    """The shipped healthy reference individual (HR 80 bpm, BSA 1.79 m^2)."""
    text = resources.files("cardio0d.data").joinpath("reference_parameters.json").read_text()
    return parameters_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# state

@dataclass(frozen=True)
class ModelState:
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.shape != (N_STATE,):
            raise ContractViolation(f"state must have {N_STATE} components")
        object.__setattr__(self, "values", arr)

    def __getattr__(self, name):
        try:
            return float(self.values[STATE_NAMES.index(name)])
        except ValueError:
            raise AttributeError(name) from None

    @classmethod
    def from_named(cls, **kw) -> "ModelState":
        return cls(np.array([float(kw.get(n, 0.0)) for n in STATE_NAMES]))

    def as_dict(self) -> dict:
        return dict(zip(STATE_NAMES, map(float, self.values)))


@dataclass(frozen=True)
class DerivedSignals:
    p_LA: float
    p_LV: float
    p_RA: float
    p_RV: float
    Q_MV: float
    Q_AV: float
    Q_TV: float
    Q_PV: float
    Q_C_SYS: float
    Q_C_PUL: float
    Q_SH: float


# ---------------------------------------------------------------------------
# point-wise operations

def activation(t: float, ch: ChamberParams, period: float) -> float:
    """Half-cosine activation in [0, 1], periodic with ``period``."""
    return float(_kernels.activation(float(t), ch.activation_onset,
                                     ch.activation_duration, float(period)))


def chamber_pressure(volume: float, t: float, ch: ChamberParams, period: float) -> float:
    a = activation(t, ch, period)
    return (ch.passive_elastance + ch.active_elastance * a) * (volume - ch.rest_volume)


def valve_flow(p_up: float, p_down: float, v: ValveParams) -> float:
    dp = p_up - p_down
    return dp / v.r_open if dp >= 0 else dp / v.r_closed


def _state_array(s) -> np.ndarray:
    arr = s.values if isinstance(s, ModelState) else np.asarray(s, dtype=float)
    if arr.shape != (N_STATE,):
        raise ContractViolation(f"state must have {N_STATE} components")
    return arr


def _theta(p) -> np.ndarray:
    return p.to_vector() if isinstance(p, ModelParameters) else np.asarray(p, dtype=float)


def _evaluate(t, s, p):
    y = _state_array(s)
    if not np.all(np.isfinite(y)):
        raise NumericFailure("non-finite model state", t=t)
    th = _theta(p)
    sig = np.empty(N_SIGNAL)
    f = _kernels.signals_at(float(t), np.ascontiguousarray(y), th, sig)
    return f, sig


def rhs(t: float, s, p) -> np.ndarray:
    """Time derivative of the 14-component state."""
    f, _ = _evaluate(t, s, p)
    return f


def derived_signals(t: float, s, p) -> DerivedSignals:
    _, sig = _evaluate(t, s, p)
    return DerivedSignals(*map(float, sig[:len(SIGNAL_NAMES)]))


def total_blood_volume(s, p) -> float:
    """Chamber volumes plus unstressed and stressed volume of every vessel."""
    y = _state_array(s)
    th = _theta(p)
    total = float(np.sum(y[:4]))
    for i in range(len(VESSELS)):
        total += th[31 + 4 * i] + th[29 + 4 * i] * y[S_P + i]
    return total


def equilibrium_state(p) -> ModelState:
    """Relaxed circuit at a common filling pressure holding the total volume.

    All activations are taken as zero, every pressure equals the mean filling
    pressure and every flow vanishes.
    """
    th = _theta(p)
    v0 = sum(th[5 * i + 2] for i in range(4))
    vu = sum(th[31 + 4 * i] for i in range(len(VESSELS)))
    cap = sum(1.0 / th[5 * i] for i in range(4)) + sum(th[29 + 4 * i] for i in range(len(VESSELS)))
    pf = (th[I_VTOT] - v0 - vu) / cap
    y = np.zeros(N_STATE)
    for i in range(4):
        y[i] = th[5 * i + 2] + pf / th[5 * i]
    y[S_P:S_P + len(VESSELS)] = pf
    return ModelState(y)


# chamber shares used to absorb a volume mismatch when restarting from a foreign state
CHAMBER_SHARES = np.array([0.15, 0.35, 0.15, 0.35])


def adapt_state(s, p) -> np.ndarray:
    """Shift chamber volumes of ``s`` so the total volume matches ``p``."""
    y = _state_array(s).copy()
    th = _theta(p)
    delta = th[I_VTOT] - total_blood_volume(y, th)
    y[:4] += CHAMBER_SHARES * delta
    return y


def adapt_state_tangent(s, p, directions, ds=None) -> np.ndarray:
    """Tangent of a start state consistent with the conserved total volume.

    Without ``ds`` this is the derivative of ``adapt_state(s, p)`` w.r.t. the
    parameters in ``directions``. A given ``ds`` (e.g. the periodic tangent of
    nearby parameters) is corrected so that d(total volume)/dp is exact.
    Returns a (14, len(directions)) array.
    """
    y = _state_array(s)
    th = _theta(p)
    out = np.zeros((N_STATE, len(directions))) if ds is None else np.array(ds, float)
    comp = th[29:I_RSH:4]
    for j, idx in enumerate(directions):
        want = 1.0 if idx == I_VTOT else 0.0
        have = float(np.sum(out[:4, j]) + comp @ out[S_P:S_P + len(VESSELS), j])
        if 28 <= idx < I_RSH and (idx - 28) % 4 == 1:
            have += y[S_P + (idx - 28) // 4]
        elif 28 <= idx < I_RSH and (idx - 28) % 4 == 3:
            have += 1.0
        out[:4, j] += CHAMBER_SHARES * (want - have)
    return out
