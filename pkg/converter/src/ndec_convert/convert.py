"""Source recording -> NDEC v1 session conversion."""

import json
from pathlib import Path

import numpy as np

from .ndec_format import SPIKE_LEAD_S, check_session_invariants, write_ndec
from .reader import SourceFormatError, load_recording


def central_difference_velocity(position, sample_rate):
    """d(position)/dt by central differences, one-sided at the endpoints."""
    pos = np.asarray(position, dtype=np.float64)
    v = np.empty_like(pos)
    v[:, 1:-1] = (pos[:, 2:] - pos[:, :-2]) * (sample_rate / 2.0)
    v[:, 0] = (pos[:, 1] - pos[:, 0]) * sample_rate
    v[:, -1] = (pos[:, -1] - pos[:, -2]) * sample_rate
    return v


def convert_session(source_path, out_path):
    """Convert one recording; writes the NDEC file plus a JSON manifest.

    The label clock is shifted so the first sample sits at t = 0; spikes
    before -0.2 s or after the last label are dropped (counted in the
    manifest). Velocity comes from the planar position by central
    difference at the label rate.
    """
    rec = load_recording(source_path)
    t = rec.t
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise SourceFormatError(f"{source_path}: label times not increasing")
    sample_rate = 1.0 / float(np.median(dt))

    t0 = float(t[0])
    t_end = float(t[-1]) - t0
    velocity = central_difference_velocity(rec.position, sample_rate)

    spikes = []
    dropped = 0
    for st in rec.spikes:
        shifted = st - t0
        keep = (shifted >= -SPIKE_LEAD_S) & (shifted <= t_end)
        dropped += int(st.size - keep.sum())
        spikes.append(shifted[keep])

    check_session_invariants(sample_rate, velocity, rec.target_pos, spikes)
    write_ndec(out_path, sample_rate, velocity, rec.target_pos, spikes)

    manifest = {
        "source": str(source_path),
        "n_probes": len(spikes),
        "n_samples": int(t.size),
        "sample_rate": sample_rate,
        "time_offset_s": t0,
        "dropped_out_of_range_spikes": dropped,
        "velocity": "central difference of planar position, one-sided endpoints",
        **rec.notes,
    }
    manifest_path = str(out_path) + ".json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def convert_tree(source, out_dir):
    """Convert one file or every .mat file in a directory."""
    source = Path(source)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(source.glob("*.mat")) if source.is_dir() else [source]
    if not files:
        raise SourceFormatError(f"no .mat files under {source}")
    manifests = []
    for src in files:
        out = out_dir / (src.stem + ".ndec")
        manifests.append(convert_session(src, out))
    return manifests
