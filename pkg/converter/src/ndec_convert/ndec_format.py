"""NDEC v1 wire format (writer + verification reader).

Layout, little-endian: magic "NDEC" (4 bytes), version u32 = 1,
n_probes u32, sample_rate f64, T u64, then vx/vy/tx/ty as f32[T], then per
probe a u64 spike count followed by f64 timestamps (seconds, sorted).
"""

import struct

import numpy as np

MAGIC = b"NDEC"
VERSION = 1

#: spikes may lead the first label by at most the largest feature window
SPIKE_LEAD_S = 0.2


class FormatError(Exception):
    pass


def write_ndec(path, sample_rate, velocity, target_pos, spikes):
    """velocity/target_pos: (2, T) arrays; spikes: per-probe sorted float64."""
    T = velocity.shape[1]
    parts = [
        MAGIC,
        struct.pack("<IIdQ", VERSION, len(spikes), float(sample_rate), T),
        np.ascontiguousarray(velocity[0], dtype="<f4").tobytes(),
        np.ascontiguousarray(velocity[1], dtype="<f4").tobytes(),
        np.ascontiguousarray(target_pos[0], dtype="<f4").tobytes(),
        np.ascontiguousarray(target_pos[1], dtype="<f4").tobytes(),
    ]
    for st in spikes:
        st = np.ascontiguousarray(st, dtype="<f8")
        parts.append(struct.pack("<Q", st.size))
        parts.append(st.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_ndec(path):
    """Parse an NDEC v1 file back into plain arrays (round-trip checks)."""
    with open(path, "rb") as f:
        buf = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated inside {what}")
        out = buf[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic")
    version, n_probes, rate, T = struct.unpack("<IIdQ", take(24, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    arrays = [
        np.frombuffer(take(4 * T, name), dtype="<f4").astype(np.float64)
        for name in ("vx", "vy", "tx", "ty")
    ]
    spikes = []
    for p in range(n_probes):
        (count,) = struct.unpack("<Q", take(8, f"probe {p} count"))
        spikes.append(np.frombuffer(take(8 * count, f"probe {p}"), dtype="<f8").copy())
    return {
        "sample_rate": rate,
        "velocity": np.stack(arrays[:2]),
        "target_pos": np.stack(arrays[2:]),
        "spikes": spikes,
    }


def check_session_invariants(sample_rate, velocity, target_pos, spikes):
    """Raise FormatError if the arrays violate the session contract."""
    T = velocity.shape[1]
    if T < 1:
        raise FormatError("no samples")
    if velocity.shape != (2, T) or target_pos.shape != (2, T):
        raise FormatError("velocity/target_pos must be (2, T)")
    if len(spikes) < 1:
        raise FormatError("no spike streams")
    t_end = (T - 1) / sample_rate
    for p, st in enumerate(spikes):
        if st.size and np.any(np.diff(st) < 0):
            raise FormatError(f"probe {p}: spikes not sorted")
        if st.size and (st[0] < -SPIKE_LEAD_S or st[-1] > t_end):
            raise FormatError(f"probe {p}: spikes outside the label span")
