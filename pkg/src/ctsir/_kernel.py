"""Compiled event loop of the renormalized jump process.

All simulation paths go through ``simulate_one``.  The contact-tracing
event is sampled by thinning: between events the other five rates are
constant, and the tracing rate is bounded by an envelope evaluated at the
current time (nonincreasing weights) or by ``sup(psi) * cohort size``.
A single uniform draw selects the slot in the cumulative rate vector
ordered E=0..5; a draw inside the tracing slot but beyond the actual rate
is a rejected proposal.

Path integrals are accumulated per inter-event interval in closed form for
constant, indicator and exponential weights and by adaptive Simpson
quadrature for the gamma weight.
"""
import math

import numpy as np
from numba import njit

OK, ENVELOPE_VIOLATION, COUNT_OVERFLOW, QUADRATURE_FAILURE = 0, 1, 2, 3

# float parameter vector layout
P_LAMBDA0, P_MU0, P_LAMBDA1, P_MU1, P_LAMBDA2, P_LAMBDA3, P_N, P_PSI1, P_PSI2, P_PSISUP = range(10)
# int parameter vector layout
Q_INF, Q_TRACE, Q_PSI, Q_NONINC = range(4)

PSI_CONSTANT, PSI_INDICATOR, PSI_EXPONENTIAL, PSI_GAMMA = 0, 1, 2, 3
INF_MASS_ACTION, INF_FREQUENCY, INF_INFECTIVE = 0, 1, 2
TRACE_A, TRACE_B, TRACE_C = 0, 1, 2

# path integral slots: int I, int X, int I X, int I X/(I+X), int X 1{I>0}
N_INTEGRALS = 5
QUAD_TOL = 1e-9
_MAX_DEPTH = 48
_COUNT_LIMIT = 2 ** 62


@njit(cache=True)
def psi_eval(kind, p1, p2, a):
    if kind == PSI_CONSTANT:
        return p1
    if kind == PSI_INDICATOR:
        return 1.0 if a <= p1 else 0.0
    if kind == PSI_EXPONENTIAL:
        return math.exp(-p1 * a)
    # gamma density, shape p1 >= 1, scale p2
    if p1 == 1.0:
        return math.exp(-a / p2) / p2
    if a <= 0.0:
        return 0.0
    return math.exp((p1 - 1.0) * math.log(a) - a / p2 - math.lgamma(p1) - p1 * math.log(p2))


@njit(cache=True)
def infection_rate(form, lam1, n, S, I):
    if form == INF_MASS_ACTION:
        return lam1 * S * I / n
    if form == INF_FREQUENCY:
        if S + I == 0:
            return 0.0
        return lam1 * S * I / (S + I)
    return lam1 * I


@njit(cache=True)
def tracing_rate(model, lam3, n, I, X):
    # event 4 removes an infective: no tracing hazard without infectives
    if I == 0:
        return 0.0
    if model == TRACE_A:
        return lam3 * X
    if model == TRACE_B:
        if I + X <= 0.0:
            return 0.0
        return lam3 * I * X / (I + X)
    return lam3 * I * X / n


@njit(cache=True)
def advance_window(det, ndet, lo, tau, t):
    while lo < ndet and t - det[lo] > tau:
        lo += 1
    return lo


@njit(cache=True)
def pairing(kind, p1, p2, det, ndet, lo, anch_t, anch_x, t):
    """<R_t, psi>; for the indicator ``lo`` must already be advanced to t."""
    if ndet == 0:
        return 0.0
    if kind == PSI_CONSTANT:
        return p1 * ndet
    if kind == PSI_EXPONENTIAL:
        return anch_x * math.exp(-p1 * (t - anch_t))
    if kind == PSI_INDICATOR:
        return float(ndet - lo)
    s = 0.0
    for j in range(ndet):
        s += psi_eval(kind, p1, p2, t - det[j])
    return s


@njit(cache=True)
def _gamma_pair(p1, p2, det, ndet, I, u):
    x = 0.0
    for j in range(ndet):
        x += psi_eval(PSI_GAMMA, p1, p2, u - det[j])
    if I + x > 0.0:
        return x, I * x / (I + x)
    return x, 0.0


@njit(cache=True)
def _gamma_quad(p1, p2, det, ndet, I, ta, tb, tol):
    """Adaptive Simpson for (int X, int I X/(I+X)) over [ta, tb]."""
    cap = 2 * _MAX_DEPTH + 4
    sa = np.empty(cap)
    sb = np.empty(cap)
    sf = np.empty((cap, 6))
    sw = np.empty((cap, 2))
    st = np.empty(cap)
    sd = np.empty(cap, dtype=np.int64)
    fa0, fa1 = _gamma_pair(p1, p2, det, ndet, I, ta)
    fb0, fb1 = _gamma_pair(p1, p2, det, ndet, I, tb)
    m = 0.5 * (ta + tb)
    fm0, fm1 = _gamma_pair(p1, p2, det, ndet, I, m)
    h = tb - ta
    top = 0
    sa[0] = ta
    sb[0] = tb
    sf[0, 0] = fa0
    sf[0, 1] = fa1
    sf[0, 2] = fm0
    sf[0, 3] = fm1
    sf[0, 4] = fb0
    sf[0, 5] = fb1
    sw[0, 0] = h / 6.0 * (fa0 + 4.0 * fm0 + fb0)
    sw[0, 1] = h / 6.0 * (fa1 + 4.0 * fm1 + fb1)
    st[0] = tol
    sd[0] = 0
    top = 1
    out0 = 0.0
    out1 = 0.0
    ok = True
    while top > 0:
        top -= 1
        a = sa[top]
        b = sb[top]
        fa0, fa1, fm0, fm1, fb0, fb1 = sf[top, 0], sf[top, 1], sf[top, 2], sf[top, 3], sf[top, 4], sf[top, 5]
        w0, w1 = sw[top, 0], sw[top, 1]
        tl = st[top]
        depth = sd[top]
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        fl0, fl1 = _gamma_pair(p1, p2, det, ndet, I, lm)
        fr0, fr1 = _gamma_pair(p1, p2, det, ndet, I, rm)
        hh = (b - a) / 12.0
        l0 = hh * (fa0 + 4.0 * fl0 + fm0)
        l1 = hh * (fa1 + 4.0 * fl1 + fm1)
        r0 = hh * (fm0 + 4.0 * fr0 + fb0)
        r1 = hh * (fm1 + 4.0 * fr1 + fb1)
        err = max(abs(l0 + r0 - w0), abs(l1 + r1 - w1))
        if err <= 15.0 * tl or depth >= _MAX_DEPTH:
            if depth >= _MAX_DEPTH and err > 15.0 * tl:
                ok = False
            out0 += l0 + r0 + (l0 + r0 - w0) / 15.0
            out1 += l1 + r1 + (l1 + r1 - w1) / 15.0
            continue
        # right half
        sa[top] = m
        sb[top] = b
        sf[top, 0], sf[top, 1], sf[top, 2], sf[top, 3], sf[top, 4], sf[top, 5] = fm0, fm1, fr0, fr1, fb0, fb1
        sw[top, 0], sw[top, 1] = r0, r1
        st[top] = 0.5 * tl
        sd[top] = depth + 1
        top += 1
        # left half
        sa[top] = a
        sb[top] = m
        sf[top, 0], sf[top, 1], sf[top, 2], sf[top, 3], sf[top, 4], sf[top, 5] = fa0, fa1, fl0, fl1, fm0, fm1
        sw[top, 0], sw[top, 1] = l0, l1
        st[top] = 0.5 * tl
        sd[top] = depth + 1
        top += 1
    return out0, out1, ok


@njit(cache=True)
def _piece(acc, I, X, dt):
    acc[1] += X * dt
    acc[2] += I * X * dt
    if I + X > 0.0:
        acc[3] += I * X / (I + X) * dt
    if I > 0:
        acc[4] += X * dt


@njit(cache=True)
def integrate(kind, p1, p2, det, ndet, lo, anch_t, anch_x, I, ta, tb, acc):
    """Add the path integrals over [ta, tb] (state constant) to ``acc``.

    Returns False if the quadrature tolerance could not be met.
    """
    dt = tb - ta
    if dt <= 0.0:
        return True
    acc[0] += I * dt
    if ndet == 0:
        return True
    if kind == PSI_CONSTANT:
        _piece(acc, I, p1 * ndet, dt)
    elif kind == PSI_EXPONENTIAL:
        xa = anch_x * math.exp(-p1 * (ta - anch_t))
        e = -math.expm1(-p1 * dt)
        ix = xa * e / p1
        acc[1] += ix
        acc[2] += I * ix
        if I > 0:
            acc[4] += ix
            if xa > 0.0:
                xb = xa * (1.0 - e)
                acc[3] += I / p1 * math.log1p(xa * e / (I + xb))
    elif kind == PSI_INDICATOR:
        X = float(ndet - lo)
        cur = ta
        j = lo
        while j < ndet:
            ex = det[j] + p1
            if ex >= tb:
                break
            if ex > cur:
                _piece(acc, I, X, ex - cur)
                cur = ex
            X -= 1.0
            j += 1
        _piece(acc, I, X, tb - cur)
    else:
        q0, q1, ok = _gamma_quad(p1, p2, det, ndet, I, ta, tb, QUAD_TOL)
        acc[1] += q0
        acc[2] += I * q0
        acc[3] += q1
        if I > 0:
            acc[4] += q0
        return ok
    return True


@njit(cache=True)
def _add_interval(par, ipar, det, ndet, lo, anch_t, anch_x, S, I, ta, tb, integ, lam, tmp):
    for k in range(N_INTEGRALS):
        tmp[k] = 0.0
    ok = integrate(ipar[Q_PSI], par[P_PSI1], par[P_PSI2], det, ndet, lo, anch_t, anch_x,
                   I, ta, tb, tmp)
    for k in range(N_INTEGRALS):
        integ[k] += tmp[k]
    dt = tb - ta
    n = par[P_N]
    lam[0] += n * par[P_LAMBDA0] * dt
    lam[1] += par[P_MU0] * S * dt
    lam[2] += infection_rate(ipar[Q_INF], par[P_LAMBDA1], n, S, I) * dt
    lam[3] += par[P_LAMBDA2] * I * dt
    model = ipar[Q_TRACE]
    if model == TRACE_A:
        lam[4] += par[P_LAMBDA3] * tmp[4]
    elif model == TRACE_B:
        lam[4] += par[P_LAMBDA3] * tmp[3]
    else:
        lam[4] += par[P_LAMBDA3] * tmp[2] / n
    lam[5] += par[P_MU1] * I * dt
    return ok


@njit(cache=True)
def _record(gi, t, S, I, ndet, X, det, tk, tp1, tp2, integ, lam, counts,
            g_state, g_int, g_lam, g_cnt):
    g_state[gi, 0] = S
    g_state[gi, 1] = I
    g_state[gi, 2] = ndet
    g_state[gi, 3] = X
    for f in range(tk.shape[0]):
        s = 0.0
        for j in range(ndet):
            s += psi_eval(tk[f], tp1[f], tp2[f], t - det[j])
        g_state[gi, 4 + f] = s
    for k in range(N_INTEGRALS):
        g_int[gi, k] = integ[k]
    for k in range(6):
        g_lam[gi, k] = lam[k]
        g_cnt[gi, k] = counts[k]


@njit(cache=True, nogil=True)
def simulate_one(par, ipar, S0, I0, T, seed, max_events, stop_extinct, log_events,
                 grid, tk, tp1, tp2, g_state, g_int, g_lam, g_cnt):
    """Run one trajectory on [0, T].

    Grid snapshots are written into ``g_state`` (S, I, R count, <R,psi>, test
    function pairings), ``g_int``, ``g_lam`` and ``g_cnt``; rows after an
    early stop are NaN.
    """
    np.random.seed(seed)
    n = par[P_N]
    kind = ipar[Q_PSI]
    p1 = par[P_PSI1]
    p2 = par[P_PSI2]
    noninc = ipar[Q_NONINC] == 1
    model = ipar[Q_TRACE]
    lam3 = par[P_LAMBDA3]

    cap = 256
    det = np.empty(cap)
    ndet = 0
    lo = 0
    anch_t = 0.0
    anch_x = 0.0

    lcap = 1024 if log_events else 1
    ev_t = np.empty(lcap)
    ev_e = np.empty(lcap, dtype=np.int8)
    ev_s = np.empty(lcap, dtype=np.int64)
    ev_i = np.empty(lcap, dtype=np.int64)
    ev_r = np.empty(lcap, dtype=np.int64)
    ev_x = np.empty(lcap)
    nev = 0

    integ = np.zeros(N_INTEGRALS)
    lam = np.zeros(6)
    tmp = np.zeros(N_INTEGRALS)
    counts = np.zeros(6, dtype=np.int64)
    n_prop4 = 0
    n_rej = 0

    t = 0.0
    S = np.int64(S0)
    I = np.int64(I0)
    ngrid = grid.shape[0]
    gi = 0
    status = OK
    bad_interval = -1.0

    while True:
        if kind == PSI_INDICATOR:
            lo = advance_window(det, ndet, lo, p1, t)
        r0 = n * par[P_LAMBDA0]
        r1 = par[P_MU0] * S
        r2 = infection_rate(ipar[Q_INF], par[P_LAMBDA1], n, S, I)
        r3 = par[P_LAMBDA2] * I
        if noninc:
            x_env = pairing(kind, p1, p2, det, ndet, lo, anch_t, anch_x, t)
        else:
            x_env = par[P_PSISUP] * ndet
        b4 = tracing_rate(model, lam3, n, I, x_env)
        r5 = par[P_MU1] * I
        c0 = r0
        c1 = c0 + r1
        c2 = c1 + r2
        c3 = c2 + r3
        c4 = c3 + b4
        total = c4 + r5
        if total > 0.0:
            u = np.random.random()
            t_next = t - math.log1p(-u) / total
        else:
            t_next = math.inf

        t_stop = t_next if t_next < T else T
        while gi < ngrid and grid[gi] <= t_stop:
            g = grid[gi]
            if not _add_interval(par, ipar, det, ndet, lo, anch_t, anch_x, S, I, t, g, integ, lam, tmp):
                status = QUADRATURE_FAILURE
                bad_interval = t
            t = g
            if kind == PSI_INDICATOR:
                lo = advance_window(det, ndet, lo, p1, t)
            xg = pairing(kind, p1, p2, det, ndet, lo, anch_t, anch_x, t)
            _record(gi, t, S, I, ndet, xg, det, tk, tp1, tp2, integ, lam, counts,
                    g_state, g_int, g_lam, g_cnt)
            gi += 1
        if status != OK:
            break
        if t_next > T:
            if not _add_interval(par, ipar, det, ndet, lo, anch_t, anch_x, S, I, t, T, integ, lam, tmp):
                status = QUADRATURE_FAILURE
                bad_interval = t
            t = T
            break
        if not _add_interval(par, ipar, det, ndet, lo, anch_t, anch_x, S, I, t, t_next, integ, lam, tmp):
            status = QUADRATURE_FAILURE
            bad_interval = t
            break
        t = t_next
        if kind == PSI_INDICATOR:
            lo = advance_window(det, ndet, lo, p1, t)

        v = np.random.random() * total
        x_pre = -1.0
        if v < c0:
            e = 0
        elif v < c1:
            e = 1
        elif v < c2:
            e = 2
        elif v < c3:
            e = 3
        elif v < c4:
            n_prop4 += 1
            x_pre = pairing(kind, p1, p2, det, ndet, lo, anch_t, anch_x, t)
            a4 = tracing_rate(model, lam3, n, I, x_pre)
            if a4 > b4 * (1.0 + 1e-12):
                status = ENVELOPE_VIOLATION
                break
            if v < c3 + a4:
                e = 4
            else:
                n_rej += 1
                continue
        else:
            e = 5

        if log_events or e == 3 or e == 4:
            if x_pre < 0.0:
                x_pre = pairing(kind, p1, p2, det, ndet, lo, anch_t, anch_x, t)

        if e == 0:
            S += 1
        elif e == 1:
            S -= 1
        elif e == 2:
            S -= 1
            I += 1
        else:
            I -= 1
            if e != 5:
                if ndet == cap:
                    cap *= 2
                    new = np.empty(cap)
                    new[:ndet] = det[:ndet]
                    det = new
                det[ndet] = t
                ndet += 1
                if kind == PSI_EXPONENTIAL:
                    anch_x = x_pre + 1.0
                    anch_t = t
        counts[e] += 1

        if log_events:
            if nev == lcap:
                lcap *= 2
                ev_t = _grow_f(ev_t, nev, lcap)
                ev_x = _grow_f(ev_x, nev, lcap)
                ev_e = _grow_i8(ev_e, nev, lcap)
                ev_s = _grow_i(ev_s, nev, lcap)
                ev_i = _grow_i(ev_i, nev, lcap)
                ev_r = _grow_i(ev_r, nev, lcap)
            ev_t[nev] = t
            ev_e[nev] = e
            ev_s[nev] = S
            ev_i[nev] = I
            ev_r[nev] = ndet
            ev_x[nev] = x_pre
        nev += 1

        if S >= _COUNT_LIMIT or I >= _COUNT_LIMIT:
            status = COUNT_OVERFLOW
            break
        if stop_extinct and I == 0:
            break
        if max_events > 0 and nev >= max_events:
            break

    for k in range(gi, ngrid):
        g_state[k, :] = np.nan
        g_int[k, :] = np.nan
        g_lam[k, :] = np.nan
        g_cnt[k, :] = np.nan
    m = nev if log_events else 0
    return (status, t, S, I, counts, integ, lam, n_prop4, n_rej, bad_interval,
            ev_t[:m].copy(), ev_e[:m].copy(), ev_s[:m].copy(), ev_i[:m].copy(),
            ev_r[:m].copy(), ev_x[:m].copy(), det[:ndet].copy())


@njit(cache=True)
def _grow_f(a, m, cap):
    b = np.empty(cap)
    b[:m] = a[:m]
    return b


@njit(cache=True)
def _grow_i(a, m, cap):
    b = np.empty(cap, dtype=np.int64)
    b[:m] = a[:m]
    return b


@njit(cache=True)
def _grow_i8(a, m, cap):
    b = np.empty(cap, dtype=np.int8)
    b[:m] = a[:m]
    return b


@njit(cache=True, nogil=True)
def run_replicas(par, ipar, S0, I0, T, seeds, max_events, stop_extinct, grid, tk, tp1, tp2,
                 g_state, g_int, g_lam, g_cnt, out_status, out_totals):
    """Run ``len(seeds)`` replicas into preallocated per-replica slices.

    ``out_totals`` rows hold the terminal time, the five path integrals,
    the six rate integrals, the six event counts, proposals and rejections.
    """
    for r in range(seeds.shape[0]):
        res = simulate_one(par, ipar, S0, I0, T, seeds[r], max_events, stop_extinct, False,
                           grid, tk, tp1, tp2, g_state[r], g_int[r], g_lam[r], g_cnt[r])
        out_status[r] = res[0]
        out_totals[r, 0] = res[1]
        out_totals[r, 1:6] = res[5]
        out_totals[r, 6:12] = res[6]
        for k in range(6):
            out_totals[r, 12 + k] = res[4][k]
        out_totals[r, 18] = res[7]
        out_totals[r, 19] = res[8]


@njit(cache=True)
def replay_integrals(ev_t, ev_e, I0, T, kind, p1, p2, psisup):
    """Path integrals and pre-event pairings recomputed from an event list.

    Returns (integrals[5], x_pre per event, I before each event) using the
    same per-interval formulas as the simulator.
    """
    m = ev_t.shape[0]
    det = np.empty(max(m, 1))
    ndet = 0
    lo = 0
    anch_t = 0.0
    anch_x = 0.0
    acc = np.zeros(N_INTEGRALS)
    x_pre = np.empty(m)
    i_pre = np.empty(m, dtype=np.int64)
    I = np.int64(I0)
    t = 0.0
    ok = True
    for k in range(m + 1):
        tb = ev_t[k] if k < m else T
        if kind == PSI_INDICATOR:
            lo = advance_window(det, ndet, lo, p1, t)
        if not integrate(kind, p1, p2, det, ndet, lo, anch_t, anch_x, I, t, tb, acc):
            ok = False
        t = tb
        if k == m:
            break
        if kind == PSI_INDICATOR:
            lo = advance_window(det, ndet, lo, p1, t)
        x = pairing(kind, p1, p2, det, ndet, lo, anch_t, anch_x, t)
        x_pre[k] = x
        i_pre[k] = I
        e = ev_e[k]
        if e == 2:
            I += 1
        elif e >= 3:
            I -= 1
            if e != 5:
                det[ndet] = t
                ndet += 1
                if kind == PSI_EXPONENTIAL:
                    anch_x = x + 1.0
                    anch_t = t
    return acc, x_pre, i_pre, ok
