"""Decoder architectures: parameters, membrane/hidden state, and inference.

Five architectures share a common container:

* ``ann``        dense 3-layer net on summation features (batch norm + ReLU)
* ``ann3d``      same net on the flattened sub-window tensor
* ``snn3d``      layer-normalized sub-window input driven through 3 LIF
                 layers over m internal time steps, state reset per window
* ``snn_stream`` binary 4 ms events through 3 LIF layers, state persists
* ``lstm``       layer-normalized summation input, one recurrent step per
                 stride, linear head, state persists

All parameters live in ``Model.params`` as float64 arrays keyed by name;
batch-norm running statistics live in ``Model.buffers``.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    BadMagic,
    ConfigMismatch,
    NumericalFault,
    TruncatedFile,
    VersionMismatch,
)

ARCHS = ("ann", "ann3d", "snn3d", "snn_stream", "lstm")

RESET_CODES = {
    "none": _kernels.RESET_NONE,
    "to_zero": _kernels.RESET_TO_ZERO,
    "by_subtraction": _kernels.RESET_BY_SUBTRACTION,
}

#: reset mode of each LIF layer: hidden layers zero out on spike, the output
#: layer accumulates freely so its potential can encode velocity
LIF_LAYER_RESETS = ("to_zero", "to_zero", "none")

BN_EPS = 1e-5
LN_EPS = 1e-5

_CKPT_MAGIC = b"NDMC"
_CKPT_VERSION = 1


@dataclass
class LIFParams:
    """Per-layer (or shared) leaky integrate-and-fire constants."""

    beta: float = 0.9
    u_thr: float = 1.0
    reset_mode: str = "to_zero"
    u_sub: float = 1.0

    def validate(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta {self.beta} outside (0, 1)")
        if not np.isfinite(self.u_thr):
            raise ValueError("u_thr must be finite")
        if self.reset_mode not in RESET_CODES:
            raise ValueError(f"unknown reset mode {self.reset_mode!r}")
        return self


@dataclass
class LIFState:
    """Membrane potentials and previous-step output spikes of one layer."""

    u: np.ndarray
    s: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


def lif_step(state, weighted_input, params):
    """Advance one LIF step: returns (new state, output spikes).

    Membrane update: u <- beta*u_prev + input - s_prev*theta, where theta is
    0 / the full pre-reset value / u_sub depending on the reset mode; the
    neuron spikes iff u exceeds the threshold strictly.
    """
    wx = np.asarray(weighted_input, dtype=np.float64)
    if wx.shape != state.u.shape:
        raise ConfigMismatch(f"input shape {wx.shape} != state shape {state.u.shape}")
    if not np.all(np.isfinite(wx)):
        raise NumericalFault("non-finite weighted input to lif_step")
    U, S = _kernels.lif_sequence(
        wx.reshape(1, 1, -1),
        float(params.beta),
        float(params.u_thr),
        RESET_CODES[params.reset_mode],
        float(params.u_sub),
        state.u.reshape(1, -1).astype(np.float64),
        state.s.reshape(1, -1).astype(np.float64),
    )
    u = U[0, 0].reshape(state.u.shape)
    s = S[0, 0].reshape(state.u.shape)
    return LIFState(u, s), s


@dataclass
class Model:
    arch: str
    n_ch: int
    n1: int = 32
    n2: int = 48
    m: int = 7
    n_lstm: int = 40
    dropout: float = 0.5
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_in(self):
        if self.arch == "ann3d":
            return self.n_ch * self.m
        return self.n_ch

    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    def stored_count(self):
        """Parameters plus persistent buffers (what a deployment must ship)."""
        return self.param_count() + int(sum(b.size for b in self.buffers.values()))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(arch, n_ch, n1=32, n2=48, m=7, n_lstm=40, dropout=0.5, seed=0):
    """Build a freshly initialized model (uniform +-1/sqrt(fan_in) weights)."""
    if arch not in ARCHS:
        raise ConfigMismatch(f"unknown architecture {arch!r}")
    if min(n_ch, n1, n2, m, n_lstm) < 1:
        raise ConfigMismatch("all layer sizes must be >= 1")
    rng = np.random.default_rng(seed)
    model = Model(arch=arch, n_ch=n_ch, n1=n1, n2=n2, m=m, n_lstm=n_lstm,
                  dropout=dropout, meta={"seed": int(seed)})
    p = model.params

    if arch == "lstm":
        H = n_lstm
        p["ln_gamma"] = np.ones(n_ch)
        p["ln_beta"] = np.zeros(n_ch)
        p["Wx"] = _uniform(rng, (4 * H, n_ch), n_ch)
        p["Wh"] = _uniform(rng, (4 * H, H), H)
        p["b"] = _uniform(rng, (4 * H,), H)
        p["W_head"] = _uniform(rng, (2, H), H)
        p["b_head"] = _uniform(rng, (2,), H)
        reset_state(model)
        return model

    n_in = n_ch * m if arch == "ann3d" else n_ch
    dims = [n_in, n1, n2, 2]
    for i in range(3):
        p[f"W{i + 1}"] = _uniform(rng, (dims[i + 1], dims[i]), dims[i])
        p[f"b{i + 1}"] = _uniform(rng, (dims[i + 1],), dims[i])

    if arch in ("ann", "ann3d"):
        for i, n in ((1, n1), (2, n2)):
            p[f"bn{i}_gamma"] = np.ones(n)
            p[f"bn{i}_beta"] = np.zeros(n)
            model.buffers[f"bn{i}_mean"] = np.zeros(n)
            model.buffers[f"bn{i}_var"] = np.ones(n)
    elif arch == "snn3d":
        p["ln_gamma"] = np.ones(n_ch * m)
        p["ln_beta"] = np.zeros(n_ch * m)
        p["lif_beta"] = np.asarray(0.9)
        p["lif_u_thr"] = np.asarray(1.0)
        p["out_scale"] = np.asarray(1.0)
    elif arch == "snn_stream":
        for i in range(1, 4):
            p[f"beta{i}"] = np.asarray(0.9)
            p[f"u_thr{i}"] = np.asarray(1.0)
        p["out_scale"] = np.asarray(1.0)
    reset_state(model)
    return model


def reset_state(model):
    """Zero all mutable state (membrane potentials, LSTM h/c); weights untouched."""
    if model.arch == "snn_stream":
        model.state = {
            "u": [np.zeros(model.n1), np.zeros(model.n2), np.zeros(2)],
            "s": [np.zeros(model.n1), np.zeros(model.n2), np.zeros(2)],
        }
    elif model.arch == "lstm":
        model.state = {"h": np.zeros(model.n_lstm), "c": np.zeros(model.n_lstm)}
    else:
        model.state = {}
    return model


def layer_norm(x, gamma, beta):
    """Normalize over the last axis (biased variance), then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gamma + beta


def _bn_eval(x, gamma, beta, mean, var):
    return (x - mean) / np.sqrt(var + BN_EPS) * gamma + beta


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _check_record_shape(model, data):
    want = {
        "ann": (model.n_ch,),
        "lstm": (model.n_ch,),
        "snn_stream": (model.n_ch,),
        "ann3d": (model.n_ch, model.m),
        "snn3d": (model.n_ch, model.m),
    }[model.arch]
    if data.shape[1:] != want:
        raise ConfigMismatch(
            f"{model.arch} expects records of shape {want}, got {data.shape[1:]}"
        )


def _ann_eval(model, X, collect=None):
    p, bufs = model.params, model.buffers
    a = X
    if collect is not None:
        collect["syn_inputs"] = [a]
    for i, n in ((1, model.n1), (2, model.n2)):
        h = a @ p[f"W{i}"].T + p[f"b{i}"]
        h = _bn_eval(h, p[f"bn{i}_gamma"], p[f"bn{i}_beta"],
                     bufs[f"bn{i}_mean"], bufs[f"bn{i}_var"])
        a = np.maximum(h, 0.0)
        if collect is not None:
            collect["syn_inputs"].append(a)
    return a @ p["W3"].T + p["b3"]


def _snn3d_eval(model, X, collect=None):
    """Stateless window prediction: fresh LIF state for every record."""
    p = model.params
    B = X.shape[0]
    flat = X.reshape(B, -1)
    z = layer_norm(flat, p["ln_gamma"], p["ln_beta"]).reshape(B, model.n_ch, model.m)
    beta = float(p["lif_beta"])
    u_thr = float(p["lif_u_thr"])
    # (m, B, n_ch): one LIF step per sub-window
    steps = np.ascontiguousarray(np.moveaxis(z, 2, 0))
    if collect is not None:
        collect["syn_inputs"] = [steps]
    sizes = (model.n1, model.n2, 2)
    act = steps
    u_out = None
    for layer in range(3):
        W, b = p[f"W{layer + 1}"], p[f"b{layer + 1}"]
        cur = act @ W.T + b
        U, S = _kernels.lif_sequence(
            np.ascontiguousarray(cur), beta, u_thr,
            RESET_CODES[LIF_LAYER_RESETS[layer]], 1.0,
            np.zeros((B, sizes[layer])), np.zeros((B, sizes[layer])),
        )
        if layer < 2 and collect is not None:
            collect["syn_inputs"].append(S)
        act = S
        u_out = U
    return float(p["out_scale"]) * u_out[-1]


def _snn_stream_eval(model, X, collect=None):
    """Run a chronological span; model.state carries across calls."""
    p = model.params
    T, B = X.shape[0], 1
    st = model.state
    act = X.reshape(T, B, model.n_ch)
    if collect is not None:
        collect["syn_inputs"] = [act]
    u_out = None
    for layer in range(3):
        W, b = p[f"W{layer + 1}"], p[f"b{layer + 1}"]
        cur = act @ W.T + b
        U, S = _kernels.lif_sequence(
            np.ascontiguousarray(cur),
            float(p[f"beta{layer + 1}"]), float(p[f"u_thr{layer + 1}"]),
            RESET_CODES[LIF_LAYER_RESETS[layer]], 1.0,
            st["u"][layer].reshape(B, -1), st["s"][layer].reshape(B, -1),
        )
        st["u"][layer] = U[-1, 0].copy()
        st["s"][layer] = S[-1, 0].copy()
        if layer < 2 and collect is not None:
            collect["syn_inputs"].append(S)
        act = S
        u_out = U
    return float(p["out_scale"]) * u_out[:, 0, :]


def _lstm_eval(model, X, collect=None):
    p = model.params
    H = model.n_lstm
    h, c = model.state["h"], model.state["c"]
    T = X.shape[0]
    preds = np.empty((T, 2))
    zs = layer_norm(X, p["ln_gamma"], p["ln_beta"])
    if collect is not None:
        collect["syn_inputs"] = [zs, np.empty((T, H))]
    for t in range(T):
        gates = p["Wx"] @ zs[t] + p["Wh"] @ h + p["b"]
        i, f, g, o = np.split(gates, 4)
        i, f, o = _sigmoid(i), _sigmoid(f), _sigmoid(o)
        g = np.tanh(g)
        c = f * c + i * g
        h = o * np.tanh(c)
        if collect is not None:
            collect["syn_inputs"][1][t] = h
        preds[t] = p["W_head"] @ h + p["b_head"]
    model.state["h"], model.state["c"] = h, c
    return preds


def predict_series(model, data, collect=None):
    """Predict (vx, vy) for a stack of feature records.

    data: (T, ...) feature records in chronological order. Stateless
    architectures treat rows as an unordered batch; streaming ones advance
    ``model.state`` across the span (call reset_state first for a fresh
    stream). Pass a dict as ``collect`` to capture per-layer synaptic input
    activations for cost profiling.
    """
    data = np.asarray(data, dtype=np.float64)
    _check_record_shape(model, data)
    if not np.all(np.isfinite(data)):
        raise NumericalFault("non-finite feature record")
    fn = {
        "ann": _ann_eval,
        "ann3d": _ann_eval,
        "snn3d": _snn3d_eval,
        "snn_stream": _snn_stream_eval,
        "lstm": _lstm_eval,
    }[model.arch]
    X = data.reshape(data.shape[0], -1) if model.arch == "ann3d" else data
    preds = fn(model, X, collect)
    if not np.all(np.isfinite(preds)):
        raise NumericalFault("non-finite prediction")
    return preds


def model_forward(model, record):
    """Single-record inference; returns an (vx, vy) float pair."""
    record = np.asarray(record, dtype=np.float64)
    pred = predict_series(model, record[None, ...])
    return float(pred[0, 0]), float(pred[0, 1])


# ---------------------------------------------------------------------------
# checkpoint I/O

def save_model(model, path, extra_meta=None):
    """Write a versioned binary checkpoint plus a JSON metadata sidecar.

    Blobs are stored as f32 in insertion order (params, then buffers).
    """
    chunks = [_CKPT_MAGIC, struct.pack("<I", _CKPT_VERSION)]
    arch_b = model.arch.encode()
    chunks.append(struct.pack("<B", len(arch_b)) + arch_b)
    chunks.append(struct.pack("<6I", model.n_ch, model.n1, model.n2,
                              model.m, model.n_lstm, 0))
    chunks.append(struct.pack("<d", model.dropout))
    entries = [(f"p:{k}", v) for k, v in model.params.items()]
    entries += [(f"b:{k}", v) for k, v in model.buffers.items()]
    chunks.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        nb = name.encode()
        arr = np.atleast_1d(np.asarray(arr, dtype=np.float64))
        chunks.append(struct.pack("<H", len(nb)) + nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    meta = dict(model.meta)
    meta.update(extra_meta or {})
    meta.update(arch=model.arch, n_ch=model.n_ch, n1=model.n1, n2=model.n2,
                m=model.m, n_lstm=model.n_lstm, dropout=model.dropout)
    with open(str(path) + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path):
    with open(path, "rb") as f:
        buf = f.read()

    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedFile(f"checkpoint ends inside {what}")
        out = buf[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != _CKPT_MAGIC:
        raise BadMagic(f"{path}: not a model checkpoint")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != _CKPT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}")
    (alen,) = struct.unpack("<B", take(1, "arch"))
    arch = take(alen, "arch").decode()
    n_ch, n1, n2, m, n_lstm, _ = struct.unpack("<6I", take(24, "dims"))
    (dropout,) = struct.unpack("<d", take(8, "dropout"))
    (n_entries,) = struct.unpack("<I", take(4, "entry count"))
    model = Model(arch=arch, n_ch=n_ch, n1=n1, n2=n2, m=m, n_lstm=n_lstm,
                  dropout=dropout)
    for _ in range(n_entries):
        (nlen,) = struct.unpack("<H", take(2, "entry name"))
        name = take(nlen, "entry name").decode()
        (ndim,) = struct.unpack("<B", take(1, "entry ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "entry shape"))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(4 * count, f"blob {name}"), dtype="<f4")
        arr = arr.reshape(shape).astype(np.float64)
        kind, key = name.split(":", 1)
        if kind == "p":
            model.params[key] = arr
        else:
            model.buffers[key] = arr
    # scalar LIF constants round-trip as shape-(1,) blobs; restore 0-d
    for key, val in model.params.items():
        if val.shape == (1,) and key in ("lif_beta", "lif_u_thr", "out_scale",
                                         "beta1", "beta2", "beta3",
                                         "u_thr1", "u_thr2", "u_thr3"):
            model.params[key] = np.asarray(val[0])
    try:
        with open(str(path) + ".json") as f:
            model.meta = json.load(f)
    except FileNotFoundError:
        pass
    reset_state(model)
    return model
