"""Adaptive Dormand-Prince integration and periodic steady-state detection."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from ._kernels import A_COEF, C_NODES, DENSE_P, E54
from ._layout import (FLOW_VESSELS, I_VES, N_SIGNAL, N_SIGNAL_PUBLIC, N_STATE, N_THETA,
                      NON_DIFFERENTIABLE, S_Q, SIGNAL_NAMES, STATE_NAMES)
from .errors import ContractViolation, NonConvergenceError, NumericFailure, StiffnessError
from .model import ModelParameters, ModelState, adapt_state, adapt_state_tangent, equilibrium_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-6
    initial_step: float = 1e-4
    max_step: float = 0.02
    max_beats: int = 200
    steady_state_tol: float = 1e-3
    samples_per_beat: int = 1000
    tangent_error_control: bool = True

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ContractViolation("tolerances must be positive")
        if self.max_beats < 2:
            raise ContractViolation("max_beats must be at least 2")
        if self.samples_per_beat < 100:
            raise ContractViolation("samples_per_beat must be at least 100")
        if not (self.initial_step > 0 and self.max_step > 0):
            raise ContractViolation("step sizes must be positive")


@dataclass
class Trajectory:
    """The last (periodic) beat sampled on a uniform grid.

    ``times`` run from the beat onset (0) to one sample short of the period.
    When parameter tangents were requested, ``state_tangents`` and
    ``signal_tangents`` hold d(sample)/d(parameter) for the parameter indices
    in ``directions``.
    """

    times: np.ndarray
    states: np.ndarray
    signals: np.ndarray
    beat_period: float
    beats_to_converge: int
    delta: float
    converged: bool
    directions: tuple = ()
    state_tangents: np.ndarray | None = field(default=None, repr=False)
    signal_tangents: np.ndarray | None = field(default=None, repr=False)

    def state(self, name: str) -> np.ndarray:
        return self.states[:, STATE_NAMES.index(name)]

    def signal(self, name: str) -> np.ndarray:
        return self.signals[:, SIGNAL_NAMES.index(name)]

    @property
    def start_state(self) -> np.ndarray:
        return self.states[0].copy()


# ---------------------------------------------------------------------------
# single step, generic right-hand side

def _stages(fun, t, y, h, k0=None):
    k = np.empty((7, len(y)))
    k[0] = fun(t, y) if k0 is None else k0
    for s in range(1, 7):
        ys = y + h * (A_COEF[s, :s] @ k[:s])
        k[s] = fun(t + C_NODES[s] * h, ys)
        if not np.all(np.isfinite(k[s])):
            raise NumericFailure(f"non-finite stage at t={t}, h={h}", t=t, h=h)
    return k


def step_dopri(fun, t: float, y, h: float):
    """One embedded Dormand-Prince 5(4) step.

    Returns the fifth order solution at ``t + h`` and the per-component
    difference between the fifth and fourth order solutions.
    """
    y = np.asarray(y, dtype=float)
    if not h > 0:
        raise ContractViolation("step size must be positive")
    if not np.all(np.isfinite(y)):
        raise NumericFailure("non-finite state", t=t, h=h)
    k0 = np.asarray(fun(t, y), dtype=float)
    if not np.all(np.isfinite(k0)):
        raise NumericFailure(f"non-finite stage at t={t}, h={h}", t=t, h=h)
    k = _stages(fun, t, y, h, k0)
    y_new = y + h * (A_COEF[6] @ k[:6])
    return y_new, h * (E54 @ k)


def dense_eval(y, k, h, s):
    """Fourth order continuous extension at ``t + s*h`` inside an accepted step."""
    powers = np.array([s, s * s, s ** 3, s ** 4])
    return y + h * (k.T @ (DENSE_P @ powers))


def integrate_periodic(fun, y0, period: float, settings: SolverSettings = SolverSettings(),
                       n_beats: int | None = None):
    """Drive a generic ``fun(t, y)`` beat by beat until its beat map settles.

    Pure-python twin of the compiled circuit integrator, used for small test
    problems. Returns (grid times relative to the beat onset, samples of the
    last beat, beats integrated, last delta).
    """
    y = np.asarray(y0, dtype=float).copy()
    h = settings.initial_step
    n_grid = settings.samples_per_beat
    beats = n_beats or settings.max_beats
    delta = np.inf
    for beat in range(beats):
        t0 = beat * period
        grid, samples, y_end, h = _beat_python(fun, t0, period, y, h, settings, n_grid)
        delta = float(np.max(np.abs(y_end - y) / (np.abs(y) + settings.abs_tol)))
        y = y_end
        if n_beats is None and delta < settings.steady_state_tol:
            return grid, samples, beat + 1, delta
    if n_beats is None:
        raise NonConvergenceError(f"no periodic state after {beats} beats", delta)
    return grid, samples, beats, delta


def _beat_python(fun, t0, period, y, h, settings, n_grid):
    n = len(y)
    t, t_end = t0, t0 + period
    dt = period / n_grid
    grid = np.arange(n_grid) * dt
    samples = np.empty((n_grid, n))
    samples[0] = y
    j = 1
    hmin = 1e-12 * period
    h = min(h, settings.max_step)
    k0 = np.asarray(fun(t, y), dtype=float)
    while t < t_end:
        last = t + h >= t_end
        if last:
            h = t_end - t
        if h < hmin:
            raise StiffnessError(f"step size underflow at t={t}", t=t, h=h)
        k = _stages(fun, t, y, h, k0)
        y_new = y + h * (A_COEF[6] @ k[:6])
        scale = settings.abs_tol + settings.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((h * (E54 @ k) / scale) ** 2)))
        if err <= 1.0:
            while j < n_grid and t0 + j * dt <= t + h:
                samples[j] = dense_eval(y, k, h, (t0 + j * dt - t) / h)
                j += 1
            t = t_end if last else t + h
            y, k0 = y_new, k[6]
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if not last:
                h = min(h * fac, settings.max_step)
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    return grid, samples, y, h


# ---------------------------------------------------------------------------
# circuit integration

def _check_directions(directions):
    for idx in directions:
        if idx in NON_DIFFERENTIABLE or not 0 <= idx < N_THETA:
            raise ContractViolation(f"no tangent available for parameter index {idx}")


def _tangent_delta(d_start, d_end, atol):
    if d_start.size == 0:
        return 0.0
    scale = np.max(np.abs(d_start), axis=0) + atol
    return float(np.max(np.max(np.abs(d_end - d_start), axis=0) / scale))


def integrate(params: ModelParameters, init=None, settings: SolverSettings = SolverSettings(),
              directions=(), fixed_beats: int | None = None, init_tangent=None) -> Trajectory:
    """Integrate beat by beat until the beat map settles; return the last beat.

    ``init`` defaults to the relaxed equilibrium state. A foreign ``init``
    (e.g. the periodic state of nearby parameters) is used as given; callers
    adapting it to a new total volume use :func:`cardio0d.model.adapt_state`.
    ``directions`` lists parameter indices whose tangents are integrated
    alongside; convergence then also requires settled tangents.
    ``fixed_beats`` integrates exactly that many beats with no convergence test.
    ``init_tangent`` (14 x len(directions)) seeds the tangents, e.g. from a
    nearby periodic beat; it is corrected for volume consistency.
    """
    th = params.to_vector() if isinstance(params, ModelParameters) else np.asarray(params, float)
    directions = tuple(int(i) for i in directions)
    _check_directions(directions)
    if init is None:
        y = equilibrium_state(th).values.copy()
    else:
        y = (init.values if isinstance(init, ModelState) else np.asarray(init, float)).copy()
    if y.shape != (N_STATE,) or not np.all(np.isfinite(y)):
        raise ContractViolation("initial state must be 14 finite values")
    if np.any(y[:4] <= 0):
        raise ContractViolation("chamber volumes must be positive")

    nd = len(directions)
    dth = np.zeros((N_THETA, nd))
    for j, idx in enumerate(directions):
        dth[idx, j] = 1.0
    if nd:
        dy = adapt_state_tangent(y, th, directions, init_tangent)
    else:
        dy = np.zeros((N_STATE, 0))
    tscale = np.zeros(nd)
    if settings.tangent_error_control:
        tscale[:] = np.abs(th[list(directions)])

    period = 60.0 / th[53]
    n_grid = settings.samples_per_beat
    yg = np.empty((n_grid, N_STATE))
    dyg = np.empty((n_grid, N_STATE, nd))
    sg = np.empty((n_grid, N_SIGNAL))
    dsg = np.empty((n_grid, N_SIGNAL, nd))
    h = settings.initial_step
    beats = fixed_beats if fixed_beats is not None else settings.max_beats
    delta = np.inf
    converged = False
    n_done = 0
    for beat in range(beats):
        t0 = beat * period
        y_end, dy_end, h, _, _, status, t_fail, h_fail = _kernels.integrate_beat(
            t0, period, y, dy, th, dth, tscale, h, settings.rel_tol, settings.abs_tol,
            settings.max_step, n_grid, yg, dyg, sg, dsg)
        if status == _kernels.NONFINITE:
            raise NumericFailure(f"non-finite stage at t={t_fail:.6g} s, h={h_fail:.3g} s",
                                 t=t_fail, h=h_fail)
        if status != _kernels.OK:
            raise StiffnessError(f"step size underflow at t={t_fail:.6g} s, h={h_fail:.3g} s",
                                 t=t_fail, h=h_fail)
        n_done = beat + 1
        delta = float(np.max(np.abs(y_end - y) / (np.abs(y) + settings.abs_tol)))
        if nd:
            delta = max(delta, _tangent_delta(dy, dy_end, settings.abs_tol))
        y, dy = y_end, dy_end
        if fixed_beats is None and delta < settings.steady_state_tol:
            converged = True
            break
    if fixed_beats is None and not converged:
        raise NonConvergenceError(
            f"no periodic state after {beats} beats (delta={delta:.3g})", delta)
    return _trajectory(th, period, yg, dyg, sg, dsg, n_done, delta,
                       converged or delta < settings.steady_state_tol, directions)


def _trajectory(th, period, yg, dyg, sg, dsg, beats, delta, converged, directions):
    states = yg.copy()
    dstates = dyg.copy() if directions else None
    # branches without inertance carry an algebraic flow; report it in the state slot
    for j, ves in enumerate(FLOW_VESSELS):
        if th[I_VES + 4 * ves + 2] == 0.0:
            states[:, S_Q + j] = sg[:, N_SIGNAL_PUBLIC + j]
            if directions:
                dstates[:, S_Q + j] = dsg[:, N_SIGNAL_PUBLIC + j]
    n_grid = yg.shape[0]
    return Trajectory(
        times=np.arange(n_grid) * (period / n_grid),
        states=states,
        signals=sg[:, :N_SIGNAL_PUBLIC].copy(),
        beat_period=period,
        beats_to_converge=beats,
        delta=delta,
        converged=bool(converged),
        directions=tuple(directions),
        state_tangents=dstates,
        signal_tangents=dsg[:, :N_SIGNAL_PUBLIC].copy() if directions else None,
    )


def warm_state(source, params) -> np.ndarray:
    """Start state for ``params`` taken from another run's periodic beat.

    ``source`` is a :class:`Trajectory` or a 14-value start state.
    """
    start = source.start_state if isinstance(source, Trajectory) else np.asarray(source, float)
    y = adapt_state(start, params)
    if np.any(y[:4] <= 0):
        return equilibrium_state(params).values
    return y


def simulate_beats(params, init=None, settings: SolverSettings = SolverSettings(), n_beats=20):
    """Grid samples of ``n_beats`` consecutive beats, shape (n_beats, n_grid, 14)."""
    th = params.to_vector() if isinstance(params, ModelParameters) else np.asarray(params, float)
    y = equilibrium_state(th).values.copy() if init is None else np.asarray(
        init.values if isinstance(init, ModelState) else init, float).copy()
    period = 60.0 / th[53]
    n_grid = settings.samples_per_beat
    out = np.empty((n_beats, n_grid, N_STATE))
    dth = np.zeros((N_THETA, 0))
    dy = np.zeros((N_STATE, 0))
    dyg = np.empty((n_grid, N_STATE, 0))
    sg = np.empty((n_grid, N_SIGNAL))
    dsg = np.empty((n_grid, N_SIGNAL, 0))
    h = settings.initial_step
    for beat in range(n_beats):
        y, dy, h, _, _, status, t_fail, h_fail = _kernels.integrate_beat(
            beat * period, period, y, dy, th, dth, np.zeros(0), h, settings.rel_tol, settings.abs_tol,
            settings.max_step, n_grid, out[beat], dyg, sg, dsg)
        if status != _kernels.OK:
            raise NumericFailure(f"integration failed at t={t_fail:.6g}", t=t_fail, h=h_fail)
    return out, y


# ---------------------------------------------------------------------------
# export

def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    """One row per sample; the beat is mapped onto [0, 1) s."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tn = trajectory.times / trajectory.beat_period
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_normalized", *STATE_NAMES, *SIGNAL_NAMES])
        for i in range(len(tn)):
            writer.writerow([repr(float(tn[i])),
                             *(repr(float(x)) for x in trajectory.states[i]),
                             *(repr(float(x)) for x in trajectory.signals[i])])


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv`: (normalized times, states, signals)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:1 + N_STATE], data[:, 1 + N_STATE:]
