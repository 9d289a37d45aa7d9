"""Bessel low-pass design and forward / bidirectional / block-bidirectional
application to predicted velocity traces.

The analog prototype comes from the reverse Bessel polynomial recurrence
theta_n = (2n-1)*theta_{n-1} + s^2*theta_{n-2}, frequency-scaled so the
magnitude is -3 dB at the cutoff, then mapped to the z-domain by the
bilinear transform with the cutoff prewarped. Cutoff is a fraction of
Nyquist. Sections are individually DC-normalized, so the cascade has unit
DC gain by construction.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import TooShort

DEFAULT_ORDERS = (1, 2, 3, 4)
DEFAULT_CUTOFFS = (0.05, 0.07, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5)

MODES = ("forward", "bid", "block_bid")


@dataclass
class FilterSpec:
    order: int = 2
    cutoff: float = 0.07
    mode: str = "block_bid"
    block_window: int = 16

    def validate(self):
        if self.order not in (1, 2, 3, 4):
            raise ValueError(f"order {self.order} outside 1..4")
        if not 0.05 <= self.cutoff <= 0.5:
            raise ValueError(f"cutoff {self.cutoff} outside [0.05, 0.5]")
        if self.mode not in MODES:
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.mode == "block_bid" and (self.block_window < 2 or self.block_window % 2):
            raise ValueError("block_window must be even and >= 2")
        return self


@dataclass
class IIRCoefficients:
    """Cascaded biquads, rows (b0, b1, b2, a1, a2) with a0 = 1."""

    sos: np.ndarray
    order: int
    cutoff: float

    def dc_gain(self):
        g = 1.0
        for b0, b1, b2, a1, a2 in self.sos:
            g *= (b0 + b1 + b2) / (1.0 + a1 + a2)
        return g

    def poles(self):
        ps = []
        for _, _, _, a1, a2 in self.sos:
            ps.extend(np.roots([1.0, a1, a2]))
        return np.asarray(ps)

    def validate(self):
        if np.any(np.abs(self.poles()) >= 1.0):
            raise ValueError("unstable design: pole on/outside the unit circle")
        if abs(self.dc_gain() - 1.0) > 1e-9:
            raise ValueError(f"DC gain {self.dc_gain()} != 1")
        return self

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("section,b0,b1,b2,a0,a1,a2\n")
            for k, (b0, b1, b2, a1, a2) in enumerate(self.sos):
                f.write(f"{k},{b0!r},{b1!r},{b2!r},1.0,{a1!r},{a2!r}\n")


def reverse_bessel_poly(n):
    """Coefficients (descending powers) of the degree-n reverse Bessel polynomial."""
    if n < 0:
        raise ValueError("order must be >= 0")
    prev2 = np.array([1.0])            # theta_0
    if n == 0:
        return prev2
    prev1 = np.array([1.0, 1.0])       # theta_1 = s + 1
    for k in range(2, n + 1):
        cur = np.zeros(k + 1)
        cur[1:] += (2 * k - 1) * prev1
        cur[:-2] += prev2              # s^2 * theta_{k-2}
        prev2, prev1 = prev1, cur
    return prev1


def _prototype_3db_freq(poly):
    """Frequency where the all-pole prototype theta(0)/theta(s) is -3 dB."""
    def mag2(w):
        val = np.polyval(poly, 1j * w)
        return (poly[-1] ** 2) / (val.real ** 2 + val.imag ** 2)

    lo, hi = 0.0, 2.0
    while mag2(hi) > 0.5:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mag2(mid) > 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def design_bessel(order, cutoff):
    """Digital Bessel low-pass as unit-DC-gain second-order sections.

    cutoff is a fraction of Nyquist; the digital magnitude response is
    -3 dB there (bilinear transform with prewarping makes this exact).
    """
    FilterSpec(order=order, cutoff=cutoff, mode="forward").validate()
    poly = reverse_bessel_poly(order)
    w3 = _prototype_3db_freq(poly)
    analog_poles = np.roots(poly) / w3
    warped = np.tan(np.pi * cutoff / 2.0)
    analog_poles = analog_poles * warped

    # bilinear s = (z-1)/(z+1): analog pole p -> digital pole (1+p)/(1-p),
    # with all n zeros landing at z = -1
    zpoles = (1.0 + analog_poles) / (1.0 - analog_poles)

    complex_poles = sorted(
        (p for p in zpoles if p.imag > 1e-12),
        key=lambda p: (p.real, p.imag),
    )
    real_poles = sorted(p.real for p in zpoles if abs(p.imag) <= 1e-12)

    sections = []
    for p in complex_poles:
        a1 = -2.0 * p.real
        a2 = abs(p) ** 2
        g = (1.0 + a1 + a2) / 4.0
        sections.append((g, 2.0 * g, g, a1, a2))
    for rp in real_poles:
        a1 = -rp
        g = (1.0 + a1) / 2.0
        sections.append((g, g, 0.0, a1, 0.0))
    sos = np.asarray(sections, dtype=np.float64)
    return IIRCoefficients(sos=sos, order=order, cutoff=cutoff).validate()


def _bid_warmup(order):
    # minimum samples for a meaningful forward-backward pass
    return 3 * (order + 1)


def _bid_1d(sos, x):
    y = _kernels.sos_forward(sos, np.ascontiguousarray(x))
    y = _kernels.sos_forward(sos, np.ascontiguousarray(y[::-1]))
    return y[::-1].copy()


def _block_bid_1d(sos, x, W):
    T = x.shape[0]
    if T < W:
        raise TooShort(f"block_bid needs at least {W} samples, got {T}")
    half = W // 2
    blocks = np.lib.stride_tricks.sliding_window_view(x, W)
    filtered = _kernels.sos_bid_blocks(sos, np.ascontiguousarray(blocks))
    out = np.empty(T, dtype=np.float64)
    # interior: output for sample i sits at position W/2-1 of the block
    # ending at i + W/2, so only samples up to i + W/2 are ever seen
    # (latency of half a window)
    rows = np.arange(T - W + 1)
    out[half - 1 : T - half] = filtered[rows, half - 1]
    # leading edge: grow partial blocks so the i + W/2 horizon still holds
    for i in range(half - 1):
        part = _kernels.sos_bid_blocks(sos, np.ascontiguousarray(x[None, : i + half + 1]))
        out[i] = part[0, i]
    # trailing edge: reuse the last full block's tail positions
    out[T - half :] = filtered[-1, half:]
    return out


def apply_filter(signal, spec, coeffs=None):
    """Filter a velocity series (1-D, or 2-D with one row per axis).

    forward: causal single pass, zero initial state. bid: forward pass,
    time-reverse, forward pass, reverse (zero phase, offline). block_bid:
    bidirectional filtering over a sliding window, output taken at the
    window center, i.e. causal with half-window latency. Output length
    always equals input length.
    """
    spec.validate()
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("signal must be finite")
    if coeffs is None:
        coeffs = design_bessel(spec.order, spec.cutoff)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if spec.mode == "bid" and rows.shape[1] <= _bid_warmup(spec.order):
        raise TooShort(
            f"bid mode needs more than {_bid_warmup(spec.order)} samples, "
            f"got {rows.shape[1]}"
        )
    out = np.empty_like(rows, dtype=np.float64)
    for i, row in enumerate(rows):
        if spec.mode == "forward":
            out[i] = _kernels.sos_forward(coeffs.sos, np.ascontiguousarray(row))
        elif spec.mode == "bid":
            out[i] = _bid_1d(coeffs.sos, row)
        else:
            out[i] = _block_bid_1d(coeffs.sos, row, spec.block_window)
    return out[0] if single else out


def filter_grid_search(preds, labels, orders=DEFAULT_ORDERS,
                       cutoffs=DEFAULT_CUTOFFS, mode="bid", block_window=16):
    """Scan (order, cutoff) pairs, scoring filtered predictions against labels.

    Returns (best FilterSpec, rows) where rows are (order, cutoff, r2) for
    every grid cell. Ties break toward lower order, then lower cutoff.
    """
    from .bench import r2_score

    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    rows = []
    best = None
    best_r2 = -np.inf
    for order in orders:
        for cutoff in cutoffs:
            spec = FilterSpec(order=order, cutoff=cutoff, mode=mode,
                              block_window=block_window)
            r2 = r2_score(apply_filter(preds, spec), labels)
            rows.append((order, cutoff, r2))
            if r2 > best_r2:
                best_r2 = r2
                best = spec
    return best, rows
