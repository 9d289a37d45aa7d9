"""Parse MATLAB v7.3 (HDF5) primate-reaching recordings.

Expected top-level datasets: ``t`` (label times, 250 Hz), ``target_pos``,
``spikes`` (cell array of per-channel/per-unit timestamp vectors), and
``finger_pos`` (or ``cursor_pos`` as a fallback). MATLAB stores arrays
transposed in HDF5, so everything long comes in as (dims, T).
"""

import warnings
from dataclasses import dataclass, field

import h5py
import numpy as np


class SourceFormatError(Exception):
    pass


@dataclass
class SourceRecording:
    t: np.ndarray                 # (T,) label times, seconds, original clock
    position: np.ndarray          # (2, T) planar position used for velocity
    target_pos: np.ndarray        # (2, T)
    spikes: list                  # per channel, all units merged and sorted
    notes: dict = field(default_factory=dict)


def _orient_time_major(arr):
    """Return (dims, T) with T the long axis."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :]
    if arr.shape[0] > arr.shape[1]:
        return arr.T
    return arr


def _deref_array(f, ref):
    obj = f[ref]
    data = np.asarray(obj)
    if data.size == 0:
        return np.empty(0, dtype=np.float64)
    # MATLAB writes empty cells as a uint64 [0, 0] sentinel
    if obj.attrs.get("MATLAB_empty", 0) or data.dtype.kind in "ui" and data.size == 2 \
            and np.all(data.reshape(-1) == 0):
        return np.empty(0, dtype=np.float64)
    return data.astype(np.float64).reshape(-1)


def _read_spike_cells(f, n_channels_hint=None):
    """Merge all sorted/unsorted units per channel into one spike stream."""
    cells = f["spikes"]
    if isinstance(cells, h5py.Dataset) and cells.dtype == h5py.ref_dtype:
        refs = np.asarray(cells)
        if refs.ndim == 1:
            refs = refs[None, :]
    else:
        raise SourceFormatError("spikes must be a cell array of references")
    # MATLAB cell (n_channels, n_units) arrives transposed: (n_units, n_channels)
    if n_channels_hint is not None and refs.shape[0] == n_channels_hint:
        refs = refs.T
    elif n_channels_hint is None and refs.shape[0] > refs.shape[1]:
        refs = refs.T
    n_units, n_ch = refs.shape
    n_repaired = 0
    streams = []
    for ch in range(n_ch):
        parts = []
        for u in range(n_units):
            arr = _deref_array(f, refs[u, ch])
            if arr.size:
                if np.any(np.diff(arr) < 0):
                    n_repaired += 1
                parts.append(arr)
        merged = np.concatenate(parts) if parts else np.empty(0)
        merged.sort()  # units interleave in time; the merge must re-sort
        streams.append(merged)
    if n_repaired:
        warnings.warn(
            f"{n_repaired} unit stream(s) had non-monotone timestamps; "
            "repaired by sorting", stacklevel=2,
        )
    return streams, n_units, n_repaired


def load_recording(path):
    """Read one source file into a SourceRecording (original time base)."""
    notes = {}
    with h5py.File(path, "r") as f:
        required = [k for k in ("t", "target_pos", "spikes") if k not in f]
        if "finger_pos" not in f and "cursor_pos" not in f:
            required.append("finger_pos (or cursor_pos)")
        if required:
            raise SourceFormatError(
                f"{path}: missing required dataset(s): {', '.join(required)}"
            )

        t = _orient_time_major(f["t"])[0]
        T = t.size
        if T < 2:
            raise SourceFormatError(f"{path}: need at least 2 label samples")

        if "finger_pos" in f:
            fp = _orient_time_major(f["finger_pos"])
            # rows beyond 2 mean (z, -x, -y[, orientation...]): take the
            # planar pair; a bare 2-row array is already (x, y)
            rows = (1, 2) if fp.shape[0] >= 3 else (0, 1)
            position = fp[list(rows)]
            notes["position_source"] = f"finger_pos rows {rows}"
        else:
            position = _orient_time_major(f["cursor_pos"])[:2]
            notes["position_source"] = "cursor_pos"
        target = _orient_time_major(f["target_pos"])[:2]

        n_ch_hint = None
        if "chan_names" in f:
            n_ch_hint = int(np.asarray(f["chan_names"]).size)
        spikes, n_units, n_repaired = _read_spike_cells(f, n_ch_hint)
        notes["n_units_per_channel"] = n_units
        if n_repaired:
            notes["repaired_unit_streams"] = n_repaired

        n = min(T, position.shape[1], target.shape[1])
        if n != T:
            notes["trimmed_to"] = n
        return SourceRecording(
            t=t[:n], position=position[:, :n], target_pos=target[:, :n],
            spikes=spikes, notes=notes,
        )
