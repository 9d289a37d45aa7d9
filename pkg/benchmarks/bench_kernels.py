"""Compare the numba and pure-numpy kernel backends on realistic shapes.

Run:  python3 benchmarks/bench_kernels.py
(The numba path is also selectable at runtime package-wide via the
NDEC_NO_NUMBA environment flag; this script times both directly.)
"""

import time

import numpy as np

from ndec._kernels import numba_impl, numpy_impl
from ndec.filters import design_bessel

REPEATS = 5


def timeit(fn, *args):
    fn(*args)  # warm-up (includes JIT compile for the numba path)
    best = np.inf
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    rows = []

    # spike binning: 96 probes x 30k windows (a 120 s session)
    spikes = np.sort(rng.uniform(0, 120, size=40_000))
    t = np.arange(30_000) * 0.004
    lefts = t - 0.2
    rows.append((
        "bin_counts (40k spikes, 30k windows)",
        timeit(numpy_impl.bin_counts, spikes, lefts, t),
        timeit(numba_impl.bin_counts, spikes, lefts, t),
    ))

    # LIF recurrence: streaming inference over a 120 s session, 48 neurons
    cur = rng.normal(size=(30_000, 1, 48))
    u0 = np.zeros((1, 48))
    s0 = np.zeros((1, 48))
    rows.append((
        "lif_sequence (30k steps, 48 neurons)",
        timeit(numpy_impl.lif_sequence, cur, 0.9, 1.0, 1, 1.0, u0, s0),
        timeit(numba_impl.lif_sequence, cur, 0.9, 1.0, 1, 1.0, u0, s0),
    ))

    # batched LIF: one 512-window training batch, 7 steps, 48 neurons
    cur_b = rng.normal(size=(7, 512, 48))
    u0b = np.zeros((512, 48))
    rows.append((
        "lif_sequence (7 steps, batch 512)",
        timeit(numpy_impl.lif_sequence, cur_b, 0.9, 1.0, 1, 1.0, u0b, u0b),
        timeit(numba_impl.lif_sequence, cur_b, 0.9, 1.0, 1, 1.0, u0b, u0b),
    ))

    sos = design_bessel(4, 0.05).sos

    # causal IIR pass over a full session trace
    x = rng.normal(size=30_000)
    rows.append((
        "sos_forward (order 4, 30k samples)",
        timeit(numpy_impl.sos_forward, sos, x),
        timeit(numba_impl.sos_forward, sos, x),
    ))

    # block-bidirectional filtering: all sliding blocks of that trace
    blocks = np.ascontiguousarray(
        np.lib.stride_tricks.sliding_window_view(x, 16)
    )
    rows.append((
        "sos_bid_blocks (30k blocks of 16)",
        timeit(numpy_impl.sos_bid_blocks, sos, blocks),
        timeit(numba_impl.sos_bid_blocks, sos, blocks),
    ))

    print(f"{'kernel':42s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in rows:
        print(f"{name:42s} {t_np * 1e3:8.2f}ms {t_nb * 1e3:8.2f}ms "
              f"{t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
