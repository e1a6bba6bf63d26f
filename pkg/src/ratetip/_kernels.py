"""Compiled Dormand-Prince 5(4) integrator for the full slow-time system.

State (x, y) obeys dx/dtau = f / (delta * eps), dy/dtau = g / eps with lambda = lambda(tau).

A run may start in *offset mode*: a base state plus a small offset (p, q) are advanced
together with step sizes replayed from a previous base run, the offset obeying the
exact difference f(base + offset) - f(base).  Neighbouring initial conditions then
share one discretization, which keeps the flow map smooth at separations far below
the local truncation error.  Once the offset grows past ``COLLAPSE`` (or the replayed
steps run out) the pair is merged and the run continues adaptively.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# result slots
R_CODE, R_REASON, R_TAU, R_X, R_Y, R_MAXX, R_DWELL, R_STEPS, R_NITIN, R_NREC, R_NHS, R_TMAXX, R_DIST = range(13)
RESULT_SIZE = 13

CODE_TRACKED, CODE_ESCAPED, CODE_EXHAUSTED, CODE_STIFF = 0, 1, 2, 3
REASON_NONE, REASON_HORIZON, REASON_CAP, REASON_EARLY = 0, 1, 2, 3

# settings slots
(C_RTOL, C_ATOL, C_HMAX, C_ESC, C_RHO, C_TEND, C_TSTAR, C_MAXSTEPS, C_MARGIN,
 C_ETA, C_FXMIN, C_EVTOL, C_DELTA, C_EPS, C_COLLAPSE) = range(15)
SETTINGS_SIZE = 15

ITIN_CAP = 64
SYM_UP, SYM_DOWN, SYM_ESCAPE, SYM_TRACK, SYM_EXHAUST = 1, -1, 2, 0, -2

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, 0] = 0.2
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_B = _A[6].copy()
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: z(theta) = z0 + h * sum_j K_j * sum_m P[j, m] theta**(m+1)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@njit(cache=True, nogil=True)
def peval(exps, coefs, x, y, lam):
    s = 0.0
    for n in range(coefs.size):
        t = coefs[n]
        for _ in range(exps[n, 0]):
            t *= x
        for _ in range(exps[n, 1]):
            t *= y
        for _ in range(exps[n, 2]):
            t *= lam
        s += t
    return s


@njit(cache=True, nogil=True)
def _pow_diff(a, p, i):
    # (a + p)**i - a**i without cancellation: p * sum_m (a + p)**m * a**(i - 1 - m)
    if i == 0:
        return 0.0
    ap = a + p
    s = 0.0
    up = 1.0
    for m in range(i):
        t = up
        for _ in range(i - 1 - m):
            t *= a
        s += t
        up *= ap
    return p * s


@njit(cache=True, nogil=True)
def pdiff(exps, coefs, x, y, p, q, lam):
    """Exact P(x + p, y + q, lam) - P(x, y, lam)."""
    s = 0.0
    for n in range(coefs.size):
        i, j, k = exps[n, 0], exps[n, 1], exps[n, 2]
        lk = 1.0
        for _ in range(k):
            lk *= lam
        yq = 1.0
        for _ in range(j):
            yq *= y + q
        xi = 1.0
        for _ in range(i):
            xi *= x
        s += coefs[n] * lk * (_pow_diff(x, p, i) * yq + xi * _pow_diff(y, q, j))
    return s


@njit(cache=True, nogil=True)
def forcing_value(forc, tau):
    code = int(forc[0])
    lm = forc[1]
    if code == 1:
        return lm * np.tanh(tau)
    if code == 2:
        return -lm * np.expm1(-tau)
    if code == 3:
        lo, hi, lmin = forc[3], forc[4], forc[2]
        return lmin + (lm - lmin) * (tau - lo) / (hi - lo)
    return lm


@njit(cache=True, nogil=True)
def table_value(tab_lo, tab_step, tab, lam):
    u = (lam - tab_lo) / tab_step
    if u <= 0.0:
        return tab[0]
    n = tab.size - 1
    if u >= n:
        return tab[n]
    i = int(u)
    w = u - i
    return tab[i] * (1.0 - w) + tab[i + 1] * w


@njit(cache=True, nogil=True)
def _deriv(fe, fc, ge, gc, forc, tau, z, nc, de, eps, out, row):
    lam = forcing_value(forc, tau)
    out[row, 0] = peval(fe, fc, z[0], z[1], lam) / de
    out[row, 1] = peval(ge, gc, z[0], z[1], lam) / eps
    if nc == 4:
        out[row, 2] = pdiff(fe, fc, z[0], z[1], z[2], z[3], lam) / de
        out[row, 3] = pdiff(ge, gc, z[0], z[1], z[2], z[3], lam) / eps


@njit(cache=True, nogil=True)
def _dense(z, K, h, theta, c):
    t2 = theta * theta
    t3 = t2 * theta
    t4 = t3 * theta
    s = 0.0
    for j in range(7):
        s += K[j, c] * (_P[j, 0] * theta + _P[j, 1] * t2 + _P[j, 2] * t3 + _P[j, 3] * t4)
    return z[c] + h * s


@njit(cache=True, nogil=True)
def _full_x(z, K, h, theta, nc):
    v = _dense(z, K, h, theta, 0)
    if nc == 4:
        v += _dense(z, K, h, theta, 2)
    return v


@njit(cache=True, nogil=True)
def integrate(
    x0, y0, tau0, p0, q0,
    hs_in, n_in,
    fe, fc, ge, gc, fxe, fxc,
    forc, tab_lo, tab_step, xf_tab, xeq_tab,
    cfg, result, itin, rec, hs_out,
):
    """Integrate one trajectory; see module docstring.  Returns nothing, fills buffers."""
    rtol, atol, hmax = cfg[C_RTOL], cfg[C_ATOL], cfg[C_HMAX]
    esc, rho, tend, tstar = cfg[C_ESC], cfg[C_RHO], cfg[C_TEND], cfg[C_TSTAR]
    maxsteps = int(cfg[C_MAXSTEPS])
    margin, eta, fxmin, evtol = cfg[C_MARGIN], cfg[C_ETA], cfg[C_FXMIN], cfg[C_EVTOL]
    delta, eps, collapse = cfg[C_DELTA], cfg[C_EPS], cfg[C_COLLAPSE]
    de = delta * eps

    K = np.zeros((7, 4))
    z = np.zeros(4)
    zs = np.zeros(4)
    zn = np.zeros(4)
    nc = 4 if n_in > 0 else 2
    z[0], z[1], z[2], z[3] = x0, y0, p0, q0
    if nc == 2:
        z[0] += p0
        z[1] += q0
        z[2] = 0.0
        z[3] = 0.0
    tau = tau0
    rec_cap = rec.shape[0]
    hs_cap = hs_out.size
    n_rec = 0
    n_hs = 0
    n_itin = 0
    replay = 0

    _deriv(fe, fc, ge, gc, forc, tau, z, nc, de, eps, K, 0)
    xs = z[0] + z[2]
    ys = z[1] + z[3]
    lam = forcing_value(forc, tau)
    xf = table_value(tab_lo, tab_step, xf_tab, lam)
    side = 1 if xs > xf + margin else 0
    max_x = xs
    t_max = tau
    dwell = 0.0
    first_visit = True
    if n_rec < rec_cap:
        rec[n_rec, 0] = tau
        rec[n_rec, 1] = xs
        rec[n_rec, 2] = ys
        n_rec += 1

    # initial step (Hairer's heuristic on the full state)
    h = hmax
    if nc == 2:
        sk0 = atol + rtol * abs(z[0])
        sk1 = atol + rtol * abs(z[1])
        d0 = np.sqrt(0.5 * ((z[0] / sk0) ** 2 + (z[1] / sk1) ** 2))
        d1 = np.sqrt(0.5 * ((K[0, 0] / sk0) ** 2 + (K[0, 1] / sk1) ** 2))
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h0 = min(h0, hmax)
        zs[0] = z[0] + h0 * K[0, 0]
        zs[1] = z[1] + h0 * K[0, 1]
        _deriv(fe, fc, ge, gc, forc, tau + h0, zs, 2, de, eps, K, 1)
        d2 = np.sqrt(0.5 * (((K[1, 0] - K[0, 0]) / sk0) ** 2 + ((K[1, 1] - K[0, 1]) / sk1) ** 2)) / h0
        dm = max(d1, d2)
        h1 = max(1e-6, h0 * 1e-3) if dm <= 1e-15 else (0.01 / dm) ** 0.2
        h = min(100.0 * h0, h1, hmax)

    facold = 1e-4
    rejected = False
    nsteps = 0
    code = -1
    reason = REASON_NONE
    while code < 0:
        if nsteps >= maxsteps:
            code = CODE_EXHAUSTED
            reason = REASON_CAP
            break
        if nc == 4:
            h = hs_in[replay]
        if tau + h >= tend:
            h = tend - tau
        if h <= 1e-14 * max(1.0, abs(tau)):
            code = CODE_STIFF
            break
        # stages
        for s in range(1, 7):
            for c in range(nc):
                acc = 0.0
                for j in range(s):
                    acc += _A[s, j] * K[j, c]
                zs[c] = z[c] + h * acc
            _deriv(fe, fc, ge, gc, forc, tau + _C[s] * h, zs, nc, de, eps, K, s)
        for c in range(nc):
            zn[c] = zs[c]  # stage 7 point is the 5th-order solution
        accept = True
        if nc == 2:
            e0 = 0.0
            e1 = 0.0
            for j in range(7):
                e0 += _E[j] * K[j, 0]
                e1 += _E[j] * K[j, 1]
            sk0 = atol + rtol * max(abs(z[0]), abs(zn[0]))
            sk1 = atol + rtol * max(abs(z[1]), abs(zn[1]))
            err = np.sqrt(0.5 * ((h * e0 / sk0) ** 2 + (h * e1 / sk1) ** 2))
            fac11 = err ** 0.17 if err > 0.0 else 0.0
            if err <= 1.0:
                fac = fac11 / facold ** 0.04
                fac = max(0.1, min(5.0, fac / 0.9))
                hnew = h / fac if fac > 0.0 else 5.0 * h
                if rejected:
                    hnew = min(hnew, h)
                facold = max(err, 1e-4)
                rejected = False
            else:
                accept = False
                hnew = h / min(5.0, fac11 / 0.9) if np.isfinite(err) else 0.1 * h
                rejected = True
            hnew = min(hnew, hmax)
        else:
            hnew = h
        if not accept:
            h = hnew
            continue

        # accepted step [tau, tau + h]
        nsteps += 1
        tau_old = tau
        tau = tau + h
        if nc == 2 and n_hs < hs_cap:
            hs_out[n_hs] = h
            n_hs += 1
        xs = zn[0] + (zn[2] if nc == 4 else 0.0)
        ys = zn[1] + (zn[3] if nc == 4 else 0.0)
        lam = forcing_value(forc, tau)
        xf = table_value(tab_lo, tab_step, xf_tab, lam)
        dx = K[6, 0] + (K[6, 2] if nc == 4 else 0.0)

        # escape: x beyond the fold by esc and still moving right
        if xs >= xf + esc and dx > 0.0:
            a, b = 0.0, 1.0
            while (b - a) * h > evtol:
                m = 0.5 * (a + b)
                xm = _full_x(z, K, h, m, nc)
                lm_ = forcing_value(forc, tau_old + m * h)
                if xm >= table_value(tab_lo, tab_step, xf_tab, lm_) + esc:
                    b = m
                else:
                    a = m
            tau = tau_old + b * h
            xs = _full_x(z, K, h, b, nc)
            ys = _dense(z, K, h, b, 1) + (_dense(z, K, h, b, 3) if nc == 4 else 0.0)
            code = CODE_ESCAPED
            if n_itin < ITIN_CAP and side == 0:
                itin[n_itin] = SYM_UP
                n_itin += 1
            if n_itin < ITIN_CAP:
                itin[n_itin] = SYM_ESCAPE
                n_itin += 1

        if xs > max_x:
            max_x = xs
            t_max = tau

        if code < 0:
            # itinerary with hysteresis about the fold
            if side == 0 and xs > xf + margin:
                side = 1
                if n_itin < ITIN_CAP:
                    itin[n_itin] = SYM_UP
                    n_itin += 1
            elif side == 1 and xs < xf - margin:
                side = 0
                first_visit = False
                if n_itin < ITIN_CAP:
                    itin[n_itin] = SYM_DOWN
                    n_itin += 1
            # dwell near the repelling branch during the first visit: |f| / f_x <= eta, f_x >= fxmin
            fxv = peval(fxe, fxc, xs, ys, lam)
            if first_visit and fxv >= fxmin:
                if abs(peval(fe, fc, xs, ys, lam)) <= eta * fxv:
                    dwell += h
            xeq = table_value(tab_lo, tab_step, xeq_tab, lam)
            near = abs(xs - xeq) <= rho
            if tau >= tend:
                code = CODE_TRACKED if near else CODE_EXHAUSTED
                reason = REASON_HORIZON
            elif tau > tstar and near and fxv < 0.0:
                code = CODE_TRACKED
                reason = REASON_EARLY

        if n_rec < rec_cap:
            rec[n_rec, 0] = tau
            rec[n_rec, 1] = xs
            rec[n_rec, 2] = ys
            n_rec += 1
        if code >= 0:
            break

        # advance
        for c in range(nc):
            z[c] = zn[c]
            K[0, c] = K[6, c]
        if nc == 4:
            replay += 1
            if replay >= n_in or abs(z[2]) > collapse or abs(z[3]) > collapse:
                z[0] += z[2]
                z[1] += z[3]
                z[2] = 0.0
                z[3] = 0.0
                nc = 2
                _deriv(fe, fc, ge, gc, forc, tau, z, 2, de, eps, K, 0)
                facold = 1e-4
        h = hnew

    lam = forcing_value(forc, tau)
    result[R_CODE] = code
    result[R_REASON] = reason
    result[R_TAU] = tau
    result[R_X] = xs
    result[R_Y] = ys
    result[R_MAXX] = max_x
    result[R_DWELL] = dwell
    result[R_STEPS] = nsteps
    result[R_NITIN] = n_itin
    result[R_NREC] = n_rec
    result[R_NHS] = n_hs
    result[R_TMAXX] = t_max
    result[R_DIST] = abs(xs - table_value(tab_lo, tab_step, xeq_tab, lam))
    if code == CODE_TRACKED and n_itin < ITIN_CAP:
        itin[n_itin] = SYM_TRACK
        result[R_NITIN] = n_itin + 1
    elif code == CODE_EXHAUSTED and n_itin < ITIN_CAP:
        itin[n_itin] = SYM_EXHAUST
        result[R_NITIN] = n_itin + 1


@njit(cache=True, nogil=True)
def integrate_batch(
    x0s, y0s, tau0s, fe, fc, ge, gc, fxe, fxc, forc, tab_lo, tab_step, xf_tab, xeq_tab, cfg,
    results, itins,
):
    """Plain (non-offset) runs of many initial conditions; no recording."""
    rec = np.zeros((0, 3))
    hs_dummy = np.zeros(0)
    for i in range(x0s.size):
        integrate(x0s[i], y0s[i], tau0s[i], 0.0, 0.0, hs_dummy, 0,
                  fe, fc, ge, gc, fxe, fxc, forc, tab_lo, tab_step, xf_tab, xeq_tab,
                  cfg, results[i], itins[i], rec, hs_dummy)


@njit(cache=True, nogil=True)
def integrate_offsets(
    x0, y0, tau0, ps, qs, hs_in, n_in, fe, fc, ge, gc, fxe, fxc, forc, tab_lo, tab_step, xf_tab, xeq_tab, cfg,
    results, itins,
):
    """Offset-mode runs about one base state for many offsets, sharing replayed steps."""
    rec = np.zeros((0, 3))
    hs_dummy = np.zeros(0)
    for i in range(ps.size):
        integrate(x0, y0, tau0, ps[i], qs[i], hs_in, n_in,
                  fe, fc, ge, gc, fxe, fxc, forc, tab_lo, tab_step, xf_tab, xeq_tab,
                  cfg, results[i], itins[i], rec, hs_dummy)
