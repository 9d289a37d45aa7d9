"""Spike-stream preprocessing: summation, sub-window, and streaming features.

Every mode emits one feature record per label sample (stride = the 4 ms
label period). A record is the per-probe spike count over a trailing bin
window; sub-window mode splits that window into m equal slices, streaming
mode reduces a one-stride window to a binary event flag.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import MAX_BIN_WINDOW_S
from .errors import ConfigMismatch

#: architecture tag -> (mode, bin window seconds, number of sub-windows)
PRESETS = {
    "ann": ("summation", 0.2, 1),
    "ann3d": ("subwindow", 0.2, 7),
    "snn3d": ("subwindow", 0.2, 7),
    "snn_stream": ("streaming", None, 1),
    "lstm": ("summation", 0.032, 1),
}


@dataclass
class FeatureConfig:
    mode: str = "summation"
    window_s: float = 0.2
    n_sub: int = 1
    stride_s: float = 0.004

    def validate(self):
        if self.mode not in ("summation", "subwindow", "streaming"):
            raise ConfigMismatch(f"unknown feature mode {self.mode!r}")
        if self.mode == "streaming":
            if self.window_s != self.stride_s:
                raise ConfigMismatch("streaming mode requires window_s == stride_s")
        elif self.window_s < self.stride_s:
            raise ConfigMismatch("bin window must be at least one stride")
        if self.n_sub < 1:
            raise ConfigMismatch("n_sub must be >= 1")
        if self.mode in ("summation", "streaming") and self.n_sub != 1:
            raise ConfigMismatch(f"{self.mode} mode does not take sub-windows")
        if self.window_s > MAX_BIN_WINDOW_S + 1e-12:
            raise ConfigMismatch(f"bin window above {MAX_BIN_WINDOW_S}s unsupported")
        return self


def preset_config(arch, stride_s=0.004):
    """Feature configuration used by the named architecture."""
    if arch not in PRESETS:
        raise ConfigMismatch(f"unknown architecture {arch!r}")
    mode, window, n_sub = PRESETS[arch]
    if window is None:
        window = stride_s
    return FeatureConfig(mode=mode, window_s=window, n_sub=n_sub, stride_s=stride_s)


@dataclass
class FeatureSeries:
    """Per-sample model inputs aligned to the label grid.

    data is (T, n_probes) for summation/streaming and (T, n_probes, m) for
    sub-window mode; entries are spike counts (or {0,1} event flags).
    """

    mode: str
    data: np.ndarray

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_probes(self):
        return self.data.shape[1]

    def record(self, k):
        return self.data[k]


def firing_rate(session, probe_index, t_k, window):
    """Spike count on one probe over the half-open interval (t_k - window, t_k]."""
    if not 0 <= probe_index < session.n_probes:
        raise IndexError(f"probe {probe_index} out of range [0, {session.n_probes})")
    if window <= 0:
        raise ValueError("window must be positive")
    st = session.spikes[probe_index]
    left = np.asarray([t_k - window], dtype=np.float64)
    right = np.asarray([t_k], dtype=np.float64)
    return int(_kernels.bin_counts(st, left, right)[0])


def extract_features(session, cfg):
    """Compute the full feature series for a session under one config.

    Bin intervals are half-open (t - W, t]; sub-window edges sit at
    t - W*(m-j)/m so the m slices tile the window exactly and their counts
    sum to the summation feature. Windows reaching before the session start
    simply count no spikes there.
    """
    cfg.validate()
    times = session.sample_times
    T = times.size
    P = session.n_probes

    if cfg.mode == "subwindow":
        m = cfg.n_sub
        data = np.empty((T, P, m), dtype=np.float64)
        for j in range(m):
            # first/last edges pinned to t-W and t exactly so the slices
            # tile the summation window bit-for-bit
            lefts = times - (cfg.window_s if j == 0 else cfg.window_s * (m - j) / m)
            rights = times if j == m - 1 else times - cfg.window_s * (m - j - 1) / m
            for p in range(P):
                data[:, p, j] = _kernels.bin_counts(session.spikes[p], lefts, rights)
        return FeatureSeries(mode=cfg.mode, data=data)

    lefts = times - cfg.window_s
    data = np.empty((T, P), dtype=np.float64)
    for p in range(P):
        data[:, p] = _kernels.bin_counts(session.spikes[p], lefts, times)
    if cfg.mode == "streaming":
        # Heaviside with u(0) = 0: an event iff at least one spike this stride
        data = (data > 0).astype(np.float64)
    return FeatureSeries(mode=cfg.mode, data=data)


def write_csv(series, sample_times, path):
    """Dump a feature series as CSV: sample_time, then probe-major values."""
    data = series.data.reshape(series.n_samples, -1)
    header = ["sample_time"]
    if series.data.ndim == 3:
        m = series.data.shape[2]
        header += [f"p{p}_w{j}" for p in range(series.n_probes) for j in range(m)]
    else:
        header += [f"p{p}" for p in range(series.n_probes)]
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for k in range(series.n_samples):
            vals = ",".join(_fmt(v) for v in data[k])
            f.write(f"{sample_times[k]:.6f},{vals}\n")


def _fmt(v):
    return str(int(v)) if v == int(v) else repr(float(v))
