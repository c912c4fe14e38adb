"""Compiled presentation-span loop.

This is a straight transcription of the per-step reference sequence (decay,
inject, integrate, fire, threshold update, plasticity, propagation) into one
njit function over flat float64 arrays. Bit-for-bit agreement with the
reference path is a hard requirement enforced by test, which is why every
expression here keeps the exact grouping of its counterpart: no fused
multiply-adds, no reordered sums, scalar decay factors precomputed by the
caller with math.exp, per-spike propagation in ascending index order.

The function releases the GIL and is cached on disk, so evaluation threads
run it concurrently and fresh processes skip recompilation.

Parameter packing conventions (see the pack_* helpers in engine):
    neuron pack P: [e_rest, e_exc, e_inh, e_reset, dt/tau_m, v_th_const,
                    t_refractory, exp(-dt/tau_ge), exp(-dt/tau_gi)]
    theta pack T:  [exp(-dt/tau_theta), alpha/tau_theta, theta_init, floor]
    stdp pack S:   [a_plus, a_minus, exp(-dt/tau_plus), exp(-dt/tau_minus), w_max]
"""

import numpy as np
from numba import njit

P_E_REST = 0
P_E_EXC = 1
P_E_INH = 2
P_E_RESET = 3
P_K = 4
P_V_TH = 5
P_T_REF = 6
P_DEC_GE = 7
P_DEC_GI = 8

T_DECAY = 0
T_JUMP = 1
T_INIT = 2
T_FLOOR = 3

S_A_PLUS = 0
S_A_MINUS = 1
S_DEC_P = 2
S_DEC_M = 3
S_W_MAX = 4

FAULT_NONE = 0


@njit(cache=True, nogil=True, fastmath=False)
def _layer_step(v, g_exc, g_inh, ref_until, pend_exc, pend_inh, pack, now):
    """Decay conductances, inject pending spikes, integrate the membrane."""
    dec_ge = pack[P_DEC_GE]
    dec_gi = pack[P_DEC_GI]
    e_rest = pack[P_E_REST]
    e_exc = pack[P_E_EXC]
    e_inh = pack[P_E_INH]
    e_reset = pack[P_E_RESET]
    k = pack[P_K]
    for i in range(v.shape[0]):
        g_exc[i] *= dec_ge
        g_inh[i] *= dec_gi
        g_exc[i] += pend_exc[i]
        g_inh[i] += pend_inh[i]
        if now >= ref_until[i]:
            vi = v[i]
            drive = (e_rest - vi) + g_exc[i] * (e_exc - vi) + g_inh[i] * (e_inh - vi)
            v[i] = vi + k * drive
        else:
            v[i] = e_reset


@njit(cache=True, nogil=True, fastmath=False)
def _fire(v, theta, ref_until, pack, now, spikes_out, counts):
    """Threshold detection and reset. Returns the number of spikes."""
    v_th = pack[P_V_TH]
    e_reset = pack[P_E_RESET]
    t_ref = pack[P_T_REF]
    n_spikes = 0
    for i in range(v.shape[0]):
        if now >= ref_until[i] and v[i] >= v_th + theta[i]:
            v[i] = e_reset
            ref_until[i] = now + t_ref
            spikes_out[n_spikes] = i
            n_spikes += 1
            counts[i] += 1
    return n_spikes


@njit(cache=True, nogil=True, fastmath=False)
def _update_theta(theta, tpack, spikes, n_spikes):
    dec = tpack[T_DECAY]
    jump = tpack[T_JUMP]
    init = tpack[T_INIT]
    floor = tpack[T_FLOOR]
    for i in range(theta.shape[0]):
        theta[i] *= dec
    for k in range(n_spikes):
        j = spikes[k]
        th = theta[j]
        d = 2.0 * th - init
        if d < 0.0:
            d = -d
        if d < floor:
            d = floor
        theta[j] = th + jump * init / d


@njit(cache=True, nogil=True, fastmath=False)
def _stdp_step(w, x_pre, x_post, spack, pre_sp, n_pre_sp, post_sp, n_post_sp):
    """One pair-rule step: decay traces, post phase, pre phase, bumps, clamp."""
    n_pre = w.shape[0]
    n_post = w.shape[1]
    a_plus = spack[S_A_PLUS]
    a_minus = spack[S_A_MINUS]
    w_max = spack[S_W_MAX]
    for i in range(n_pre):
        x_pre[i] *= spack[S_DEC_P]
    for j in range(n_post):
        x_post[j] *= spack[S_DEC_M]
    for k in range(n_post_sp):
        j = post_sp[k]
        for i in range(n_pre):
            w[i, j] += a_plus * x_pre[i]
    for k in range(n_pre_sp):
        i = pre_sp[k]
        for j in range(n_post):
            w[i, j] += a_minus * x_post[j]
    for k in range(n_pre_sp):
        x_pre[pre_sp[k]] += 1.0
    for k in range(n_post_sp):
        x_post[post_sp[k]] += 1.0
    for k in range(n_post_sp):
        j = post_sp[k]
        for i in range(n_pre):
            wij = w[i, j]
            if wij < 0.0:
                w[i, j] = 0.0
            elif wij > w_max:
                w[i, j] = w_max
    for k in range(n_pre_sp):
        i = pre_sp[k]
        for j in range(n_post):
            wij = w[i, j]
            if wij < 0.0:
                w[i, j] = 0.0
            elif wij > w_max:
                w[i, j] = w_max


@njit(cache=True, nogil=True, fastmath=False)
def _first_nonfinite(arr):
    """1-based index of the first non-finite entry, 0 if all finite."""
    for i in range(arr.shape[0]):
        x = arr[i]
        if not (x == x) or x > 1e308 or x < -1e308:
            return i + 1
    return 0


@njit(cache=True, nogil=True, fastmath=False)
def run_span(
    n_steps,
    dt,
    t0,
    has_hidden,
    # stimulus: flat spiking-input indices with per-step offsets
    in_idx,
    in_off,
    # teacher: per-step flags, label index (<0 when off)
    teacher_flags,
    teacher_label,
    # span flags
    sl_dynamics,
    stdp_in_on,
    stdp_out_on,
    theta_adapt,
    # hidden excitatory layer
    v_e,
    ge_e,
    gi_e,
    th_e,
    ref_e,
    pend_e_exc,
    pend_e_inh,
    pack_e,
    tpack_e,
    # hidden inhibitory layer
    v_i,
    ge_i,
    gi_i,
    ref_i,
    pend_i_exc,
    pack_i,
    # output layer
    v_s,
    ge_s,
    gi_s,
    th_s,
    ref_s,
    pend_s_exc,
    pack_s,
    # weights
    w_in,
    w_ei_diag,
    w_ie,
    w_out,
    # traces
    xpre_in,
    xpost_in,
    xpre_out,
    xpost_out,
    spack_in,
    spack_out,
    # outputs
    cnt_hidden,
    cnt_sl,
):
    """Run ``n_steps`` of the full network. Returns a fault code, 0 if clean.

    Fault codes encode (layer << 32) | (index + 1) with layers 1=hidden
    excitatory, 2=hidden inhibitory, 3=output.
    """
    nh = v_e.shape[0]
    n_sl = v_s.shape[0]

    scratch = max(nh, 1)
    e_sp = np.empty(scratch, dtype=np.int64)
    i_sp = np.empty(scratch, dtype=np.int64)
    sl_sp = np.empty(n_sl, dtype=np.int64)
    cnt_inh = np.zeros(scratch, dtype=np.int64)
    zero_theta_i = np.zeros(scratch, dtype=np.float64)
    zero_inh_i = np.zeros(scratch, dtype=np.float64)
    zero_inh_s = np.zeros(n_sl, dtype=np.float64)

    for s in range(n_steps):
        now = t0 + s * dt
        n_e = 0
        n_i = 0
        n_sl_sp = 0

        if has_hidden:
            _layer_step(v_e, ge_e, gi_e, ref_e, pend_e_exc, pend_e_inh, pack_e, now)
            n_e = _fire(v_e, th_e, ref_e, pack_e, now, e_sp, cnt_hidden)
            if theta_adapt:
                _update_theta(th_e, tpack_e, e_sp, n_e)
            _layer_step(v_i, ge_i, gi_i, ref_i, pend_i_exc, zero_inh_i, pack_i, now)
            # inhibitory cells have a fixed threshold: theta stays all-zero
            n_i = _fire(v_i, zero_theta_i, ref_i, pack_i, now, i_sp, cnt_inh)

        if sl_dynamics:
            _layer_step(v_s, ge_s, gi_s, ref_s, pend_s_exc, zero_inh_s, pack_s, now)
            n_sl_sp = _fire(v_s, th_s, ref_s, pack_s, now, sl_sp, cnt_sl)
        elif teacher_label >= 0 and teacher_flags[s] != 0:
            sl_sp[0] = teacher_label
            n_sl_sp = 1
            cnt_sl[teacher_label] += 1

        # plasticity: the first matrix pairs input spikes with its target
        # layer (hidden cells, or output cells in the direct topology)
        if stdp_in_on:
            if has_hidden:
                _stdp_step(
                    w_in, xpre_in, xpost_in, spack_in,
                    in_idx[in_off[s]:in_off[s + 1]], in_off[s + 1] - in_off[s],
                    e_sp, n_e,
                )
            else:
                _stdp_step(
                    w_in, xpre_in, xpost_in, spack_in,
                    in_idx[in_off[s]:in_off[s + 1]], in_off[s + 1] - in_off[s],
                    sl_sp, n_sl_sp,
                )
        if stdp_out_on and has_hidden:
            _stdp_step(w_out, xpre_out, xpost_out, spack_out, e_sp, n_e, sl_sp, n_sl_sp)

        # propagation: this step's spikes become next step's conductance
        # increments, ascending presynaptic index order throughout
        if has_hidden:
            for j in range(nh):
                pend_e_exc[j] = 0.0
                pend_e_inh[j] = 0.0
                pend_i_exc[j] = 0.0
            for j in range(n_sl):
                pend_s_exc[j] = 0.0
            for k in range(in_off[s], in_off[s + 1]):
                i = in_idx[k]
                for j in range(nh):
                    pend_e_exc[j] += w_in[i, j]
            for k in range(n_e):
                i = e_sp[k]
                pend_i_exc[i] += w_ei_diag[i]
                for j in range(n_sl):
                    pend_s_exc[j] += w_out[i, j]
            for k in range(n_i):
                i = i_sp[k]
                for j in range(nh):
                    pend_e_inh[j] += w_ie[i, j]
        else:
            for j in range(n_sl):
                pend_s_exc[j] = 0.0
            for k in range(in_off[s], in_off[s + 1]):
                i = in_idx[k]
                for j in range(n_sl):
                    pend_s_exc[j] += w_in[i, j]

    if has_hidden:
        bad = _first_nonfinite(v_e)
        if bad == 0:
            bad = _first_nonfinite(ge_e)
        if bad == 0:
            bad = _first_nonfinite(gi_e)
        if bad != 0:
            return (1 << 32) | bad
        bad = _first_nonfinite(v_i)
        if bad == 0:
            bad = _first_nonfinite(ge_i)
        if bad != 0:
            return (2 << 32) | bad
    bad = _first_nonfinite(v_s)
    if bad == 0:
        bad = _first_nonfinite(ge_s)
    if bad != 0:
        return (3 << 32) | bad
    return FAULT_NONE
