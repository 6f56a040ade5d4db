"""Compiled kernels: circuit right-hand side with forward tangents and the
Dormand-Prince beat integrator.

Every kernel carries an optional tangent block (``nd`` directions, possibly
zero). Tangents are propagated through the exact same arithmetic as the
values, so the integrated tangents are the derivatives of the discrete
scheme for a frozen step sequence.
"""

import numpy as np
from numba import njit

from ._layout import (I_HR, I_RSH, I_VES, N_SIGNAL, N_STATE)

# Dormand-Prince 5(4) tableau
C_NODES = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A_COEF = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth minus fourth order weights
E54 = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension, y(t + s h) = y + h * sum_k K_k * (P[k] . [s, s^2, s^3, s^4])
DENSE_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

OK = 0
NONFINITE = 1
UNDERFLOW = 2
TOO_MANY_STEPS = 3


@njit(cache=True)
def activation(t, onset, duration, period):
    x = t / period
    x -= np.floor(x)
    phase = x - onset
    phase -= np.floor(phase)
    if phase < duration:
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * phase / duration))
    return 0.0


@njit(cache=True)
def _valve(pu, dpu, pd, dpd, ro, dro, rc, drc, dq):
    delta = pu - pd
    if delta >= 0.0:
        q = delta / ro
        for k in range(dq.shape[0]):
            dq[k] = (dpu[k] - dpd[k]) / ro - q * dro[k] / ro
    else:
        q = delta / rc
        for k in range(dq.shape[0]):
            dq[k] = (dpu[k] - dpd[k]) / rc - q * drc[k] / rc
    return q


@njit(cache=True)
def _resistor(pa, dpa, pb, dpb, r, dr, dq):
    q = (pa - pb) / r
    for k in range(dq.shape[0]):
        dq[k] = (dpa[k] - dpb[k]) / r - q * dr[k] / r
    return q


@njit(cache=True)
def _inertial(slot, pa, dpa, pb, dpb, r, dr, ell, dell, y, dy, f, df, dq):
    """Flow through an R-L branch; algebraic when the inertance vanishes."""
    nd = dq.shape[0]
    if ell > 0.0:
        q = y[slot]
        rate = (pa - pb - r * q) / ell
        f[slot] = rate
        for k in range(nd):
            dq[k] = dy[slot, k]
            df[slot, k] = (dpa[k] - dpb[k] - dr[k] * q - r * dq[k]) / ell - rate * dell[k] / ell
        return q
    f[slot] = 0.0
    for k in range(nd):
        df[slot, k] = 0.0
    return _resistor(pa, dpa, pb, dpb, r, dr, dq)


@njit(cache=True)
def _compliance(slot, qin, dqin, qout, dqout, c, dc, f, df):
    rate = (qin - qout) / c
    f[slot] = rate
    for k in range(df.shape[1]):
        df[slot, k] = (dqin[k] - dqout[k]) / c - rate * dc[k] / c


@njit(cache=True)
def evaluate(t, y, dy, th, dth, f, df, sig, dsig):
    """Right-hand side ``f`` and derived signals ``sig`` with their tangents.

    ``dy`` is (14, nd) and ``dth`` is (56, nd); ``df`` and ``dsig`` are
    filled in place.
    """
    nd = dy.shape[1]
    period = 60.0 / th[I_HR]

    for c in range(4):
        b = 5 * c
        a = activation(t, th[b + 3], th[b + 4], period)
        e = th[b] + th[b + 1] * a
        x = y[c] - th[b + 2]
        sig[c] = e * x
        for k in range(nd):
            dsig[c, k] = (dth[b, k] + a * dth[b + 1, k]) * x + e * (dy[c, k] - dth[b + 2, k])

    # valves, theta rows 20..27
    sig[4] = _valve(sig[0], dsig[0], sig[1], dsig[1], th[20], dth[20], th[21], dth[21], dsig[4])
    sig[5] = _valve(sig[1], dsig[1], y[4], dy[4], th[22], dth[22], th[23], dth[23], dsig[5])
    sig[6] = _valve(sig[2], dsig[2], sig[3], dsig[3], th[24], dth[24], th[25], dth[25], dsig[6])
    sig[7] = _valve(sig[3], dsig[3], y[7], dy[7], th[26], dth[26], th[27], dth[27], dsig[7])

    v = I_VES
    # capillary branches and shunt
    sig[8] = _resistor(y[5], dy[5], y[6], dy[6], th[v + 4], dth[v + 4], dsig[8])
    sig[9] = _resistor(y[8], dy[8], y[9], dy[9], th[v + 16], dth[v + 16], dsig[9])
    sig[10] = _resistor(y[7], dy[7], y[9], dy[9], th[I_RSH], dth[I_RSH], dsig[10])

    # inertial branches: AR_SYS (vessel 0), VEN_SYS (2), AR_PUL (3), VEN_PUL (5)
    sig[11] = _inertial(10, y[4], dy[4], y[5], dy[5], th[v], dth[v], th[v + 2], dth[v + 2],
                        y, dy, f, df, dsig[11])
    sig[12] = _inertial(11, y[6], dy[6], sig[2], dsig[2], th[v + 8], dth[v + 8],
                        th[v + 10], dth[v + 10], y, dy, f, df, dsig[12])
    sig[13] = _inertial(12, y[7], dy[7], y[8], dy[8], th[v + 12], dth[v + 12],
                        th[v + 14], dth[v + 14], y, dy, f, df, dsig[13])
    sig[14] = _inertial(13, y[9], dy[9], sig[0], dsig[0], th[v + 20], dth[v + 20],
                        th[v + 22], dth[v + 22], y, dy, f, df, dsig[14])

    # chamber volume balances
    f[0] = sig[14] - sig[4]
    f[1] = sig[4] - sig[5]
    f[2] = sig[12] - sig[6]
    f[3] = sig[6] - sig[7]
    for k in range(nd):
        df[0, k] = dsig[14, k] - dsig[4, k]
        df[1, k] = dsig[4, k] - dsig[5, k]
        df[2, k] = dsig[12, k] - dsig[6, k]
        df[3, k] = dsig[6, k] - dsig[7, k]

    # compliant nodes
    _compliance(4, sig[5], dsig[5], sig[11], dsig[11], th[v + 1], dth[v + 1], f, df)
    _compliance(5, sig[11], dsig[11], sig[8], dsig[8], th[v + 5], dth[v + 5], f, df)
    _compliance(6, sig[8], dsig[8], sig[12], dsig[12], th[v + 9], dth[v + 9], f, df)
    # AR_PUL node feeds both the oxygenated branch and the shunt
    c_ap = th[v + 13]
    rate = (sig[7] - sig[13] - sig[10]) / c_ap
    f[7] = rate
    for k in range(nd):
        df[7, k] = (dsig[7, k] - dsig[13, k] - dsig[10, k]) / c_ap - rate * dth[v + 13, k] / c_ap
    _compliance(8, sig[13], dsig[13], sig[9], dsig[9], th[v + 17], dth[v + 17], f, df)
    c_vp = th[v + 21]
    rate = (sig[9] + sig[10] - sig[14]) / c_vp
    f[9] = rate
    for k in range(nd):
        df[9, k] = (dsig[9, k] + dsig[10, k] - dsig[14, k]) / c_vp - rate * dth[v + 21, k] / c_vp


@njit(cache=True)
def _all_finite(a):
    for x in a.ravel():
        if not np.isfinite(x):
            return False
    return True


@njit(cache=True)
def integrate_beat(t0, period, y0, dy0, th, dth, tscale, h, rtol, atol, hmax, n_grid,
                   yg, dyg, sg, dsg):
    """Integrate one heartbeat [t0, t0 + period] with adaptive DOPRI5 steps.

    The grid t0 + j*period/n_grid (j < n_grid) is filled by dense output into
    ``yg``/``dyg`` and the signals there into ``sg``/``dsg``. Tangent column q
    joins step size control when ``tscale[q] > 0``; its error is measured on
    ``tscale[q] * dy[:, q]``, i.e. in state units for a logarithmic direction.

    Returns (y_end, dy_end, h_next, n_accepted, n_rejected, status, t_fail, h_fail).
    """
    n = N_STATE
    nd = dy0.shape[1]
    k = np.empty((7, n))
    dk = np.empty((7, n, nd))
    ytmp = np.empty(n)
    dytmp = np.empty((n, nd))
    ynew = np.empty(n)
    dynew = np.empty((n, nd))
    scratch_s = np.empty(N_SIGNAL)
    scratch_ds = np.empty((N_SIGNAL, nd))
    y = y0.copy()
    dy = dy0.copy()

    t = t0
    t_end = t0 + period
    dt_grid = period / n_grid
    hmin = 1e-12 * period
    n_acc = 0
    n_rej = 0

    evaluate(t, y, dy, th, dth, k[0], dk[0], scratch_s, scratch_ds)
    if not (_all_finite(k[0]) and _all_finite(dk[0])):
        return y, dy, h, n_acc, n_rej, NONFINITE, t, h
    yg[0] = y
    dyg[0] = dy
    evaluate(t, y, dy, th, dth, ytmp, dytmp, sg[0], dsg[0])
    j_next = 1

    if h > hmax:
        h = hmax
    while t < t_end:
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True
        if h < hmin:
            return y, dy, h, n_acc, n_rej, UNDERFLOW, t, h

        for s in range(1, 7):
            for i in range(n):
                acc = y[i]
                for m in range(s):
                    acc += h * A_COEF[s, m] * k[m, i]
                ytmp[i] = acc
                for q in range(nd):
                    dacc = dy[i, q]
                    for m in range(s):
                        dacc += h * A_COEF[s, m] * dk[m, i, q]
                    dytmp[i, q] = dacc
            ts = t + h if s >= 5 else t + C_NODES[s] * h
            evaluate(ts, ytmp, dytmp, th, dth, k[s], dk[s], scratch_s, scratch_ds)
        # stage 6 input is the 5th order solution
        for i in range(n):
            ynew[i] = ytmp[i]
            for q in range(nd):
                dynew[i, q] = dytmp[i, q]

        if not (_all_finite(k) and _all_finite(dk)):
            if h <= 2.0 * hmin:
                return y, dy, h, n_acc, n_rej, NONFINITE, t, h
            h *= 0.25
            n_rej += 1
            continue

        err = 0.0
        for i in range(n):
            e = 0.0
            for m in range(7):
                e += E54[m] * k[m, i]
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            r = h * e / sc
            err += r * r
        err = np.sqrt(err / n)
        for q in range(nd):
            if tscale[q] <= 0.0:
                continue
            eq = 0.0
            for i in range(n):
                e = 0.0
                for m in range(7):
                    e += E54[m] * dk[m, i, q]
                sc = atol + rtol * tscale[q] * max(abs(dy[i, q]), abs(dynew[i, q]))
                r = h * tscale[q] * e / sc
                eq += r * r
            eq = np.sqrt(eq / n)
            if eq > err:
                err = eq

        if err <= 1.0:
            # dense output on grid points inside (t, t + h]
            while j_next < n_grid:
                tj = t0 + j_next * dt_grid
                if tj > t + h and not last:
                    break
                if tj > t_end:
                    break
                th_ = (tj - t) / h
                b1 = th_
                b2 = th_ * th_
                b3 = b2 * th_
                b4 = b3 * th_
                for i in range(n):
                    acc = 0.0
                    for m in range(7):
                        w = (DENSE_P[m, 0] * b1 + DENSE_P[m, 1] * b2
                             + DENSE_P[m, 2] * b3 + DENSE_P[m, 3] * b4)
                        acc += w * k[m, i]
                    yg[j_next, i] = y[i] + h * acc
                    for q in range(nd):
                        dacc = 0.0
                        for m in range(7):
                            w = (DENSE_P[m, 0] * b1 + DENSE_P[m, 1] * b2
                                 + DENSE_P[m, 2] * b3 + DENSE_P[m, 3] * b4)
                            dacc += w * dk[m, i, q]
                        dyg[j_next, i, q] = dy[i, q] + h * dacc
                evaluate(tj, yg[j_next], dyg[j_next], th, dth, ytmp, dytmp,
                         sg[j_next], dsg[j_next])
                j_next += 1

            t = t_end if last else t + h
            for i in range(n):
                y[i] = ynew[i]
                k[0, i] = k[6, i]
                for q in range(nd):
                    dy[i, q] = dynew[i, q]
                    dk[0, i, q] = dk[6, i, q]
            n_acc += 1
            if n_acc > 10_000_000:
                return y, dy, h, n_acc, n_rej, TOO_MANY_STEPS, t, h
            if err == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * err ** -0.2))
            if not last:
                h = min(h * fac, hmax)
        else:
            n_rej += 1
            h *= max(0.2, 0.9 * err ** -0.2)

    return y, dy, h, n_acc, n_rej, OK, t, h


@njit(cache=True)
def signals_at(t, y, th, sig):
    """Derived signals at one (t, y) without tangents."""
    dy = np.zeros((N_STATE, 0))
    dth = np.zeros((th.shape[0], 0))
    f = np.empty(N_STATE)
    df = np.zeros((N_STATE, 0))
    dsig = np.zeros((N_SIGNAL, 0))
    evaluate(t, y, dy, th, dth, f, df, sig, dsig)
    return f
