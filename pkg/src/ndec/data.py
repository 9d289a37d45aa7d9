"""Session container, reach segmentation, dataset splits, and NDEC v1 file I/O.

A session is a continuous multi-probe spike recording aligned to 250 Hz
velocity labels and piecewise-constant target positions. Reaches (the spans
between target changes) are the unit of dataset splitting.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    InsufficientData,
    InvalidSession,
    TruncatedFile,
    VersionMismatch,
)

LABEL_RATE_HZ = 250.0

# Largest bin window any feature mode uses; spikes may precede the first
# label by at most this much.
MAX_BIN_WINDOW_S = 0.2

_MAGIC = b"NDEC"
_VERSION = 1


@dataclass
class Session:
    """One continuous recording: spike streams plus 250 Hz kinematic labels.

    velocity and target_pos are (2, T) float32 stored exactly as on disk;
    spikes is a list of sorted float64 timestamp arrays, one per probe, in
    seconds on the label clock (label k sits at k / sample_rate).
    """

    n_probes: int
    sample_rate: float
    velocity: np.ndarray
    target_pos: np.ndarray
    spikes: list

    def __post_init__(self):
        self.velocity = np.ascontiguousarray(self.velocity, dtype=np.float32)
        self.target_pos = np.ascontiguousarray(self.target_pos, dtype=np.float32)
        self.spikes = [np.ascontiguousarray(s, dtype=np.float64) for s in self.spikes]

    @property
    def n_samples(self):
        return self.velocity.shape[1]

    @property
    def dt(self):
        return 1.0 / self.sample_rate

    @property
    def sample_times(self):
        return np.arange(self.n_samples, dtype=np.float64) / self.sample_rate

    @property
    def duration(self):
        return self.n_samples / self.sample_rate

    def validate(self):
        """Raise InvalidSession on any structural violation."""
        if self.n_probes <= 0:
            raise InvalidSession("n_probes must be positive")
        if len(self.spikes) != self.n_probes:
            raise InvalidSession(
                f"{len(self.spikes)} spike streams for {self.n_probes} probes"
            )
        if self.velocity.shape != (2, self.n_samples) or self.target_pos.shape != (
            2,
            self.n_samples,
        ):
            raise InvalidSession("velocity/target_pos must both be (2, T)")
        if self.n_samples < 1:
            raise InvalidSession("session has no samples")
        t_end = (self.n_samples - 1) / self.sample_rate
        lead = -MAX_BIN_WINDOW_S
        for p, st in enumerate(self.spikes):
            if st.ndim != 1:
                raise InvalidSession(f"probe {p}: spike array must be 1-D")
            if st.size and np.any(np.diff(st) < 0):
                raise InvalidSession(f"probe {p}: spike times not sorted")
            if st.size and (st[0] < lead or st[-1] > t_end):
                raise InvalidSession(
                    f"probe {p}: spikes outside [{lead:.3f}, {t_end:.3f}]"
                )
        return self


@dataclass
class ReachBoundaries:
    """Half-open [start, end) sample-index spans, chronologically ordered."""

    starts: np.ndarray
    ends: np.ndarray

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.int64)
        self.ends = np.asarray(self.ends, dtype=np.int64)

    def __len__(self):
        return self.starts.size

    def __iter__(self):
        return iter(zip(self.starts.tolist(), self.ends.tolist()))

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return ReachBoundaries(self.starts[idx], self.ends[idx])

    def durations_s(self, sample_rate):
        return (self.ends - self.starts) / sample_rate

    def sample_indices(self):
        """All sample indices covered by these reaches, in order."""
        if len(self) == 0:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(
            [np.arange(s, e, dtype=np.int64) for s, e in zip(self.starts, self.ends)]
        )

    def total_samples(self):
        return int(np.sum(self.ends - self.starts))


@dataclass
class SplitSpec:
    """How reaches are partitioned into train/val/test.

    contiguous mode takes the first floor(train_fraction * R) reaches for
    training, the next floor(val_fraction * R) for validation, the remainder
    for testing. kfold mode cuts the reaches into k contiguous parts, holds
    out part fold_index, and halves it into val/test (first half val).
    """

    train_fraction: float = 0.5
    val_fraction: float = 0.25
    test_fraction: float = 0.25
    mode: str = "contiguous"
    k: int = 5
    fold_index: int = 0
    max_reach_seconds: float | None = 8.0
    remove_long_test: bool = False

    def validate(self):
        if self.mode not in ("contiguous", "kfold"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "contiguous":
            for f in (self.train_fraction, self.val_fraction, self.test_fraction):
                if not 0.0 < f < 1.0:
                    raise ValueError("split fractions must lie in (0, 1)")
            total = self.train_fraction + self.val_fraction + self.test_fraction
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"split fractions sum to {total}, expected 1")
        else:
            if self.k < 2:
                raise ValueError("kfold needs k >= 2")
            if not 0 <= self.fold_index < self.k:
                raise ValueError("fold_index out of range")
        if self.max_reach_seconds is not None and self.max_reach_seconds <= 0:
            raise ValueError("max_reach_seconds must be positive")
        return self


@dataclass
class SplitTriple:
    train: ReachBoundaries
    val: ReachBoundaries
    test: ReachBoundaries


@dataclass
class SynthConfig:
    """Synthetic-session generator settings.

    Probes are cosine-tuned to movement direction: probe i fires at
    max(0, baseline_rate + modulation_depth * speed * cos(heading - pref_i)),
    with spikes drawn from an inhomogeneous Poisson process (rate held
    constant within each 4 ms label bin).
    """

    n_probes: int = 96
    duration: float = 120.0
    baseline_rate: float = 8.0
    modulation_depth: float = 6.0
    preferred_directions: np.ndarray | None = None
    rng_seed: int = 0

    def validate(self):
        if self.n_probes < 1:
            raise ValueError("n_probes must be >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.baseline_rate < 0:
            raise ValueError("baseline_rate must be >= 0")
        if self.preferred_directions is not None:
            pd = np.asarray(self.preferred_directions, dtype=np.float64)
            if pd.shape != (self.n_probes,):
                raise ValueError("preferred_directions must have one entry per probe")
        return self


def segment_reaches(target_pos):
    """Cut the label span into reaches at every change of the target position.

    A boundary sits at each index i > 0 where target_pos[:, i] differs from
    target_pos[:, i-1] (exact comparison; targets are piecewise constant).
    """
    target_pos = np.asarray(target_pos)
    if target_pos.ndim != 2 or target_pos.shape[0] != 2 or target_pos.shape[1] == 0:
        raise InvalidSession("target_pos must be a non-empty (2, T) array")
    T = target_pos.shape[1]
    changed = np.any(target_pos[:, 1:] != target_pos[:, :-1], axis=0)
    cuts = np.flatnonzero(changed) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [T]))
    return ReachBoundaries(starts, ends)


def split_reaches(b, spec):
    """Partition reaches into train/val/test per the split spec.

    Chronological order is preserved in every subset; the three subsets are
    disjoint and their union is the input.
    """
    spec.validate()
    R = len(b)
    if R < 4:
        raise InsufficientData(f"{R} reaches, need at least 4 to split")
    if spec.mode == "contiguous":
        n_train = int(np.floor(spec.train_fraction * R))
        n_val = int(np.floor(spec.val_fraction * R))
        idx = np.arange(R)
        tr, va, te = idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :]
    else:
        parts = np.array_split(np.arange(R), spec.k)
        held = parts[spec.fold_index]
        tr = np.concatenate([p for i, p in enumerate(parts) if i != spec.fold_index])
        n_val = held.size // 2
        va, te = held[:n_val], held[n_val:]
    if min(tr.size, va.size, te.size) == 0:
        raise InsufficientData(
            f"split of {R} reaches leaves an empty subset "
            f"(train {tr.size}, val {va.size}, test {te.size})"
        )
    return SplitTriple(b.take(tr), b.take(va), b.take(te))


def remove_long_reaches(b, session, max_seconds):
    """Drop reaches whose duration exceeds max_seconds; keep the rest as-is."""
    if max_seconds <= 0:
        raise ValueError("max_seconds must be positive")
    keep = b.durations_s(session.sample_rate) <= max_seconds
    return b.take(np.flatnonzero(keep))


def make_splits(session, spec):
    """Segment, split, and apply long-reach removal per the spec.

    Removal applies to the training reaches by default (max_reach_seconds);
    remove_long_test additionally curates the test reaches.
    """
    splits = split_reaches(segment_reaches(session.target_pos), spec)
    train, val, test = splits.train, splits.val, splits.test
    if spec.max_reach_seconds is not None:
        train = remove_long_reaches(train, session, spec.max_reach_seconds)
        if spec.remove_long_test:
            test = remove_long_reaches(test, session, spec.max_reach_seconds)
    return SplitTriple(train, val, test)


def _synth_trajectory(duration, rng):
    """Smooth 2-D reaching trajectory with piecewise-constant targets.

    Second-order pursuit dynamics: the cursor accelerates toward the current
    target with damping; once within capture radius a new target is drawn.
    Returns (velocity (2,T), target_pos (2,T)) at the label rate.
    """
    dt = 1.0 / LABEL_RATE_HZ
    T = int(round(duration * LABEL_RATE_HZ))
    k_p, k_d = 9.0, 6.0
    capture = 0.06
    pos = np.zeros(2)
    vel = np.zeros(2)
    target = rng.uniform(-1.0, 1.0, size=2)
    velocity = np.empty((2, T))
    target_pos = np.empty((2, T))
    for t in range(T):
        acc = k_p * (target - pos) - k_d * vel
        vel = vel + dt * acc
        pos = pos + dt * vel
        if np.hypot(*(target - pos)) < capture:
            nxt = rng.uniform(-1.0, 1.0, size=2)
            # force a detectable jump so consecutive targets always differ
            while np.all(nxt == target):
                nxt = rng.uniform(-1.0, 1.0, size=2)
            target = nxt
        velocity[:, t] = vel
        target_pos[:, t] = target
    return velocity, target_pos


def synth_session(cfg):
    """Generate a cosine-tuned Poisson session; deterministic for a fixed seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    velocity, target_pos = _synth_trajectory(cfg.duration, rng)
    T = velocity.shape[1]
    dt = 1.0 / LABEL_RATE_HZ
    times = np.arange(T) * dt

    if cfg.preferred_directions is None:
        prefs = np.arange(cfg.n_probes) * (2.0 * np.pi / cfg.n_probes)
    else:
        prefs = np.asarray(cfg.preferred_directions, dtype=np.float64)

    speed = np.hypot(velocity[0], velocity[1])
    heading = np.arctan2(velocity[1], velocity[0])
    # rates (T, P), clamped at zero
    rates = cfg.baseline_rate + cfg.modulation_depth * speed[:, None] * np.cos(
        heading[:, None] - prefs[None, :]
    )
    np.maximum(rates, 0.0, out=rates)

    spikes = []
    for p in range(cfg.n_probes):
        counts = rng.poisson(rates[:, p] * dt)
        total = int(counts.sum())
        if total == 0:
            spikes.append(np.empty(0, dtype=np.float64))
            continue
        bin_ends = np.repeat(times, counts)
        st = bin_ends - dt * rng.random(total)
        st.sort()
        spikes.append(st)

    return Session(
        n_probes=cfg.n_probes,
        sample_rate=LABEL_RATE_HZ,
        velocity=velocity,
        target_pos=target_pos,
        spikes=spikes,
    ).validate()


def save_session(session, path, manifest=None):
    """Write a session as an NDEC v1 file (optionally with a JSON sidecar).

    Layout (little-endian): magic "NDEC", version u32, n_probes u32,
    sample_rate f64, T u64, then vx/vy/tx/ty as f32[T], then per probe a
    u64 count followed by f64 timestamps.
    """
    T = session.n_samples
    parts = [
        _MAGIC,
        struct.pack("<IIdQ", _VERSION, session.n_probes, session.sample_rate, T),
        session.velocity[0].astype("<f4").tobytes(),
        session.velocity[1].astype("<f4").tobytes(),
        session.target_pos[0].astype("<f4").tobytes(),
        session.target_pos[1].astype("<f4").tobytes(),
    ]
    for st in session.spikes:
        parts.append(struct.pack("<Q", st.size))
        parts.append(st.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))
    if manifest is not None:
        with open(str(path) + ".json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def raw(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"file ends inside {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.raw(struct.calcsize(fmt), what))

    def array(self, dtype, count, what):
        dtype = np.dtype(dtype)
        data = self.raw(dtype.itemsize * count, what)
        return np.frombuffer(data, dtype=dtype).copy()


def load_session(path):
    """Read an NDEC v1 file back into a Session (exact inverse of save)."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.raw(4, "magic") != _MAGIC:
        raise BadMagic(f"{path}: not an NDEC file")
    (version,) = r.unpack("<I", "version")
    if version != _VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {_VERSION}")
    n_probes, sample_rate, T = r.unpack("<IdQ", "header")
    vx = r.array("<f4", T, "vx")
    vy = r.array("<f4", T, "vy")
    tx = r.array("<f4", T, "tx")
    ty = r.array("<f4", T, "ty")
    spikes = []
    for p in range(n_probes):
        (count,) = r.unpack("<Q", f"probe {p} count")
        spikes.append(r.array("<f8", count, f"probe {p} timestamps"))
    return Session(
        n_probes=n_probes,
        sample_rate=sample_rate,
        velocity=np.stack([vx, vy]),
        target_pos=np.stack([tx, ty]),
        spikes=spikes,
    )
