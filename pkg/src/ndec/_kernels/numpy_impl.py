"""Pure-numpy kernel implementations.

Fallback path used when numba is unavailable or ``NDEC_NO_NUMBA`` is set.
Each function here must produce bit-identical results to its counterpart in
``numba_impl`` (same arithmetic, same operation order per element).
"""

import numpy as np

RESET_NONE = 0
RESET_TO_ZERO = 1
RESET_BY_SUBTRACTION = 2


def bin_counts(spike_times, lefts, rights):
    """Count spikes in the half-open interval (lefts[k], rights[k]] per window.

    spike_times must be sorted ascending; lefts/rights are per-window edges.
    """
    hi = np.searchsorted(spike_times, rights, side="right")
    lo = np.searchsorted(spike_times, lefts, side="right")
    return (hi - lo).astype(np.int64)


def lif_sequence(currents, beta, u_thr, reset_mode, u_sub, u0, s0):
    """Run a leaky integrate-and-fire layer over a sequence of input currents.

    currents: (T, B, N) synaptic drive per step. u0/s0: (B, N) initial
    membrane potential and previous-step spikes. Membrane update per step:
    pre-reset value h = beta*u + c, then u = h - s_prev*theta where theta is
    0 (no reset), h (reset to zero) or u_sub (reset by subtraction); a spike
    fires iff u > u_thr (strict).

    Returns (U, S) with shapes (T, B, N).
    """
    T = currents.shape[0]
    U = np.empty_like(currents)
    S = np.empty_like(currents)
    u = u0.copy()
    s = s0.copy()
    for t in range(T):
        h = beta * u + currents[t]
        if reset_mode == RESET_TO_ZERO:
            theta = h
        elif reset_mode == RESET_BY_SUBTRACTION:
            theta = np.full_like(h, u_sub)
        else:
            theta = np.zeros_like(h)
        u = h - s * theta
        s = (u > u_thr).astype(currents.dtype)
        U[t] = u
        S[t] = s
    return U, S


def sos_forward(sos, x):
    """Causal cascade of second-order sections, zero initial state.

    sos: (n_sections, 5) rows of (b0, b1, b2, a1, a2), a0 normalized to 1.
    Direct form II transposed.
    """
    y = x.astype(np.float64, copy=True)
    for k in range(sos.shape[0]):
        b0, b1, b2, a1, a2 = sos[k]
        z1 = 0.0
        z2 = 0.0
        for t in range(y.shape[0]):
            xt = y[t]
            yt = b0 * xt + z1
            z1 = b1 * xt - a1 * yt + z2
            z2 = b2 * xt - a2 * yt
            y[t] = yt
    return y


def sos_bid_blocks(sos, blocks):
    """Bidirectionally filter each row of ``blocks`` independently.

    Forward pass, reverse, forward pass, reverse. Each pass starts from the
    steady state the filter would hold had the input sat at the row's first
    sample forever, so short blocks carry no start-up transient (constants
    pass through exactly). Rows are short (the block-filter window), so the
    time loop runs over the window length with all rows vectorized.
    """
    y = blocks.astype(np.float64, copy=True)
    W = y.shape[1]
    for direction in range(2):
        for k in range(sos.shape[0]):
            b0, b1, b2, a1, a2 = sos[k]
            z1 = (b1 + b2 - a1 - a2) * y[:, 0]
            z2 = (b2 - a2) * y[:, 0]
            for t in range(W):
                xt = y[:, t].copy()
                yt = b0 * xt + z1
                z1 = b1 * xt - a1 * yt + z2
                z2 = b2 * xt - a2 * yt
                y[:, t] = yt
        y = y[:, ::-1]
    return y
