import numpy as np
import pytest

from cardio0d.errors import ContractViolation, NonConvergenceError, NumericFailure
from cardio0d.model import adapt_state, rhs, total_blood_volume
from cardio0d.solver import (SolverSettings, integrate, integrate_periodic, read_trajectory_csv,
                             simulate_beats, step_dopri, warm_state, write_trajectory_csv)
from cardio0d._layout import PARAM_INDEX, SIGNAL_NAMES, STATE_NAMES


def test_step_is_exact_for_low_degree_polynomials():
    # a fifth order method integrates t^4 exactly
    y, err = step_dopri(lambda t, y: np.array([5 * t ** 4, 3 * t ** 2]), 0.5, [1.0, 2.0], 0.7)
    np.testing.assert_allclose(y, [1.0 + 1.2 ** 5 - 0.5 ** 5, 2.0 + 1.2 ** 3 - 0.5 ** 3],
                               rtol=1e-14)
    # the embedded fourth order solution is only exact up to t^3
    assert abs(err[1]) < 1e-13 < abs(err[0])


def test_step_error_estimate_is_fourth_order():
    f = lambda t, y: -y ** 2
    errs = [abs(step_dopri(f, 0.0, [1.0], h)[1][0]) for h in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 5) < 0.3)


def test_step_contracts():
    with pytest.raises(ContractViolation):
        step_dopri(lambda t, y: y, 0.0, [1.0], 0.0)
    with pytest.raises(NumericFailure):
        step_dopri(lambda t, y: y, 0.0, [np.nan], 0.1)
    with pytest.raises(NumericFailure):
        step_dopri(lambda t, y: y * np.inf, 0.0, [1.0], 0.1)


def test_periodic_driver_finds_forced_limit_cycle():
    # y' = -y + cos t has the periodic solution (cos t + sin t) / 2
    s = SolverSettings(rel_tol=1e-10, abs_tol=1e-10, steady_state_tol=1e-9, max_beats=100)
    grid, samples, beats, delta = integrate_periodic(
        lambda t, y: -y + np.cos(t), [0.0], 2 * np.pi, s)
    assert delta < 1e-9 and beats < 100
    np.testing.assert_allclose(samples[:, 0], 0.5 * (np.cos(grid) + np.sin(grid)), atol=1e-8)


def test_periodic_driver_reports_nonconvergence():
    with pytest.raises(NonConvergenceError):
        integrate_periodic(lambda t, y: np.array([1.0]), [0.0], 1.0,
                           SolverSettings(max_beats=3))


def test_settings_contracts():
    for kw in ({"rel_tol": 0}, {"abs_tol": -1}, {"max_beats": 1}, {"samples_per_beat": 10},
               {"max_step": 0}):
        with pytest.raises(ContractViolation):
            SolverSettings(**kw)


@pytest.fixture(scope="module")
def reference_beat(ref):
    return integrate(ref)


def test_reference_beat_is_periodic(ref, reference_beat):
    tr = reference_beat
    assert tr.converged and tr.delta < 1e-3
    assert tr.states.shape == (1000, len(STATE_NAMES))
    assert tr.signals.shape == (1000, len(SIGNAL_NAMES))
    assert tr.times[0] == 0.0 and tr.times[-1] < tr.beat_period
    assert tr.beat_period == pytest.approx(60 / ref.heart_rate)
    vols = [total_blood_volume(s, ref) for s in tr.states]
    assert np.ptp(vols) < 1e-6 * ref.total_blood_volume


def test_integration_is_deterministic(ref, reference_beat):
    again = integrate(ref)
    np.testing.assert_array_equal(again.states, reference_beat.states)
    np.testing.assert_array_equal(again.signals, reference_beat.signals)


def test_sampling_does_not_steer_the_steps(ref, reference_beat):
    coarse = integrate(ref, settings=SolverSettings(samples_per_beat=250))
    np.testing.assert_array_equal(coarse.start_state, reference_beat.start_state)
    np.testing.assert_allclose(coarse.states, reference_beat.states[::4], rtol=1e-12)


def test_samples_follow_the_ode(ref, reference_beat):
    tr = reference_beat
    dt = tr.times[1] - tr.times[0]
    i = 300
    deriv = (tr.states[i + 1] - tr.states[i - 1]) / (2 * dt)
    f = rhs(tr.times[i], tr.states[i], ref)
    np.testing.assert_allclose(deriv[:4], f[:4], rtol=2e-2, atol=1.0)


def test_nonconvergence_and_fixed_beats(ref):
    with pytest.raises(NonConvergenceError):
        integrate(ref, settings=SolverSettings(max_beats=2))
    tr = integrate(ref, settings=SolverSettings(max_beats=2), fixed_beats=2)
    assert tr.beats_to_converge == 2 and not tr.converged


def test_bad_initial_state(ref):
    with pytest.raises(ContractViolation):
        integrate(ref, init=np.zeros(3))
    with pytest.raises(ContractViolation):
        integrate(ref, init=np.full(14, np.nan))
    bad = integrate(ref).start_state
    bad[1] = -1.0
    with pytest.raises(ContractViolation):
        integrate(ref, init=bad)


def test_warm_start_needs_fewer_beats(ref, reference_beat):
    p = ref.with_values({"shunt_resistance": ref.shunt_resistance * 0.8})
    cold = integrate(p)
    warm = integrate(p, init=warm_state(reference_beat, p))
    assert warm.beats_to_converge < cold.beats_to_converge
    np.testing.assert_allclose(warm.states, cold.states, rtol=1e-2, atol=0.1)


def test_simulate_beats_matches_fixed_beats(ref):
    samples, end = simulate_beats(ref, n_beats=3)
    tr = integrate(ref, fixed_beats=3)
    np.testing.assert_allclose(samples[-1], tr.states, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("pid", ["shunt_resistance", "VEN_SYS.compliance",
                                 "LV.active_elastance", "total_blood_volume"])
def test_tangents_match_finite_differences(ref, pid):
    s = SolverSettings(rel_tol=1e-9, abs_tol=1e-9, steady_state_tol=1e-7, max_beats=1000)
    tight = SolverSettings(rel_tol=1e-12, abs_tol=1e-12)
    idx = PARAM_INDEX[pid]
    tr = integrate(ref, settings=s, directions=[idx])
    x = ref.get(pid)
    h = 1e-3 * x
    start = integrate(ref, settings=tight).start_state

    def beat(value):
        # common start and beat count, so +h and -h share the residual transient
        p = ref.with_values({pid: value})
        return integrate(p, init=adapt_state(start, p), settings=tight, fixed_beats=40).states

    fd = (beat(x + h) - beat(x - h)) / (2 * h)
    scale = np.abs(fd).max(axis=0) + 1e-8
    err = np.abs(tr.state_tangents[:, :, 0] - fd).max(axis=0) / scale
    assert err.max() < 1e-3


def test_trajectory_csv_round_trip(reference_beat, tmp_path):
    path = tmp_path / "beat.csv"
    write_trajectory_csv(reference_beat, path)
    t, states, signals = read_trajectory_csv(path)
    assert t[0] == 0.0 and t[-1] < 1.0
    np.testing.assert_array_equal(states, reference_beat.states)
    np.testing.assert_array_equal(signals, reference_beat.signals)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["time_normalized", *STATE_NAMES, *SIGNAL_NAMES]
