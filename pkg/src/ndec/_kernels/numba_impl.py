"""Numba-compiled kernel implementations (hot path).

Mirrors ``numpy_impl`` exactly: same arithmetic, same operation order per
element, so the two backends are interchangeable bit-for-bit. fastmath stays
off to keep IEEE ordering.
"""

import numpy as np
from numba import njit

RESET_NONE = 0
RESET_TO_ZERO = 1
RESET_BY_SUBTRACTION = 2


@njit(cache=True)
def bin_counts(spike_times, lefts, rights):
    n_spikes = spike_times.shape[0]
    n = lefts.shape[0]
    out = np.empty(n, dtype=np.int64)
    lo = 0
    hi = 0
    for k in range(n):
        # edges are nondecreasing, so both pointers only move forward
        while lo < n_spikes and spike_times[lo] <= lefts[k]:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < n_spikes and spike_times[hi] <= rights[k]:
            hi += 1
        out[k] = hi - lo
    return out


@njit(cache=True)
def lif_sequence(currents, beta, u_thr, reset_mode, u_sub, u0, s0):
    T, B, N = currents.shape
    U = np.empty_like(currents)
    S = np.empty_like(currents)
    u = u0.copy()
    s = s0.copy()
    for t in range(T):
        for b in range(B):
            for n in range(N):
                h = beta * u[b, n] + currents[t, b, n]
                if reset_mode == RESET_TO_ZERO:
                    theta = h
                elif reset_mode == RESET_BY_SUBTRACTION:
                    theta = u_sub
                else:
                    theta = 0.0
                un = h - s[b, n] * theta
                sn = 1.0 if un > u_thr else 0.0
                u[b, n] = un
                s[b, n] = sn
                U[t, b, n] = un
                S[t, b, n] = sn
    return U, S


@njit(cache=True)
def sos_forward(sos, x):
    y = x.astype(np.float64)
    for k in range(sos.shape[0]):
        b0 = sos[k, 0]
        b1 = sos[k, 1]
        b2 = sos[k, 2]
        a1 = sos[k, 3]
        a2 = sos[k, 4]
        z1 = 0.0
        z2 = 0.0
        for t in range(y.shape[0]):
            xt = y[t]
            yt = b0 * xt + z1
            z1 = b1 * xt - a1 * yt + z2
            z2 = b2 * xt - a2 * yt
            y[t] = yt
    return y


@njit(cache=True)
def _sos_bid_row(sos, row):
    # each pass initialized to the steady state for the row's first sample,
    # so short blocks carry no start-up transient
    y = row
    for direction in range(2):
        for k in range(sos.shape[0]):
            b0 = sos[k, 0]
            b1 = sos[k, 1]
            b2 = sos[k, 2]
            a1 = sos[k, 3]
            a2 = sos[k, 4]
            z1 = (b1 + b2 - a1 - a2) * y[0]
            z2 = (b2 - a2) * y[0]
            for t in range(y.shape[0]):
                xt = y[t]
                yt = b0 * xt + z1
                z1 = b1 * xt - a1 * yt + z2
                z2 = b2 * xt - a2 * yt
                y[t] = yt
        y = y[::-1]
    return y


@njit(cache=True)
def sos_bid_blocks(sos, blocks):
    out = blocks.astype(np.float64)
    for r in range(out.shape[0]):
        row = out[r].copy()
        filtered = _sos_bid_row(sos, row)
        for t in range(out.shape[1]):
            out[r, t] = filtered[t]
    return out
