"""Per-sample closed-loop kernel (numba).

One call processes a block of samples and mutates the filter and servo state
arrays in place, so consecutive calls behave like one long run. Control is
applied with one sample of latency: the phase at sample k uses the servo output
computed from samples up to k-1.
"""

import numpy as np
from numba import njit

# servo parameter slots
KP, KI_DT, SIGN, LIMIT, ENGAGE, SOURCE, RAMP_DT, HOLD = range(8)
N_SERVO_PARAMS = 8
# servo state slots
INTEG, U, GRABBED, PREV_ERR = range(4)
N_SERVO_STATE = 4
# recorded channels
REC_THETA, REC_X, REC_BPF, REC_ENV, REC_ERR, REC_U, REC_AUX = range(7)
N_REC = 7


@njit(cache=True, inline="always")
def _sos_step(sos, z, x):
    for s in range(sos.shape[0]):
        y = sos[s, 0] * x + z[s, 0]
        z[s, 0] = sos[s, 1] * x - sos[s, 4] * y + z[s, 1]
        z[s, 1] = sos[s, 2] * x - sos[s, 5] * y
        x = y
    return x


@njit(cache=True)
def run_block(
    k0,
    phase,
    dist,
    g,
    g_aux,
    extra,
    plant,
    plant_aux,
    bpf_sos,
    bpf_z,
    env_sos,
    env_z,
    env_square,
    env_gain,
    lia_sos,
    lia_z,
    aux_z,
    servo,
    sstate,
    rec_every,
    rec,
    win_len,
    win_acc,
    win_out,
):
    """Advance the loop by ``len(g)`` samples.

    ``phase`` holds ``(theta0, theta1, omega_mod / fs, ref_phase, aux_ref_phase)``;
    ``dist`` is the disturbance for this block (empty when there is none).

    Returns ``(rows_recorded, windows_completed)``.
    """
    n = g.shape[0]
    theta0, theta1, w_dt, ref_phase, aux_phase = phase[0], phase[1], phase[2], phase[3], phase[4]
    has_dist = dist.shape[0] == n
    has_extra = extra.shape[0] == n
    # dither oscillator by rotation, re-seeded exactly at each block start
    cw, sw = np.cos(w_dt), np.sin(w_dt)
    co, so = np.cos(w_dt * k0), np.sin(w_dt * k0)
    cr, sr = np.cos(ref_phase), np.sin(ref_phase)
    ca, sa = np.cos(aux_phase), np.sin(aux_phase)
    m0, m1, p0, p1, p2, scale = plant[0], plant[1], plant[2], plant[3], plant[4], plant[5]
    has_aux = g_aux.shape[0] == n
    if has_aux:
        a0, a1, q0, q1, q2 = plant_aux[0], plant_aux[1], plant_aux[2], plant_aux[3], plant_aux[4]
    kp, ki_dt, sgn, lim = servo[KP], servo[KI_DT], servo[SIGN], servo[LIMIT]
    engage, source, ramp_dt, hold = servo[ENGAGE], servo[SOURCE], servo[RAMP_DT], servo[HOLD]
    integ, u, grabbed, prev_err = sstate[INTEG], sstate[U], sstate[GRABBED], sstate[PREV_ERR]
    rows = 0
    wins = 0
    err_aux = 0.0
    for i in range(n):
        k = k0 + i
        th = theta0 + theta1 * so + u
        if has_dist:
            th += dist[i]
        s = np.sin(th)
        var = p0 + p1 * s + p2 * (1.0 - 2.0 * s * s)
        if var < 0.0:
            var = 0.0
        x = m0 + m1 * s + np.sqrt(var) * scale * g[i]
        if has_extra:
            x += extra[i]

        y = _sos_step(bpf_sos, bpf_z, x)
        d = y * y if env_square else abs(y)
        e = _sos_step(env_sos, env_z, env_gain * d)
        err = _sos_step(lia_sos, lia_z, 2.0 * e * (so * cr + co * sr))

        if has_aux:
            va = q0 + q1 * s + q2 * (1.0 - 2.0 * s * s)
            if va < 0.0:
                va = 0.0
            xa = a0 + a1 * s + np.sqrt(va) * scale * g_aux[i]
            err_aux = _sos_step(lia_sos, aux_z, 2.0 * xa * (so * ca + co * sa))

        if win_len > 0:
            win_acc[0] += 1.0
            win_acc[1] += y
            win_acc[2] += y * y
            if win_acc[0] >= win_len:
                win_out[wins, 0] = win_acc[1]
                win_out[wins, 1] = win_acc[2]
                wins += 1
                win_acc[0] = 0.0
                win_acc[1] = 0.0
                win_acc[2] = 0.0

        if rec_every > 0 and k % rec_every == 0:
            rec[rows, REC_THETA] = th
            rec[rows, REC_X] = x
            rec[rows, REC_BPF] = y
            rec[rows, REC_ENV] = e
            rec[rows, REC_ERR] = err
            rec[rows, REC_U] = u
            rec[rows, REC_AUX] = err_aux
            rows += 1

        co, so = co * cw - so * sw, so * cw + co * sw

        # servo output for the next sample
        if k + 1 >= engage:
            ev = err_aux if source > 0.5 else err
            if ramp_dt != 0.0 and grabbed < 0.5:
                if prev_err * ev < 0.0 and sgn * (ev - prev_err) * ramp_dt < 0.0:
                    grabbed = 1.0
                    integ = sgn * u - kp * ev
                else:
                    u += ramp_dt
                prev_err = ev
            if ramp_dt == 0.0 or grabbed > 0.5:
                integ += ki_dt * ev
                if integ > lim:
                    integ = lim
                elif integ < -lim:
                    integ = -lim
                u = sgn * (kp * ev + integ)
                if u > lim:
                    u = lim
                elif u < -lim:
                    u = -lim
        else:
            u = hold

    sstate[INTEG] = integ
    sstate[U] = u
    sstate[GRABBED] = grabbed
    sstate[PREV_ERR] = prev_err
    return rows, wins
