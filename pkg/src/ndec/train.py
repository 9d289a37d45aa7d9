"""From-scratch supervised training for all five decoder architectures.

Reverse-mode gradients are written out by hand. Spike thresholds use the
arctan surrogate derivative dS/dU = 1 / (1 + pi^2 (U - U_thr)^2); gradients
flow through the LIF recurrence within a window (snn3d) or a whole reach
(snn_stream, lstm). The optimizer is AdamW with decoupled weight decay.

Regularization routing: ``TrainConfig.weight_decay`` acts through AdamW's
decoupled decay. ``backprop_gradients`` also supports an explicit in-loss
L2 term (``l2_penalty``) used by gradient checks; the training loop leaves
it at zero so the decay is not applied twice.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import models as M
from .errors import InsufficientData, NumericalFault, TrainingDiverged
from .features import extract_features
from .models import LIF_LAYER_RESETS, RESET_CODES

BN_MOMENTUM = 0.1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_WEIGHT_KEYS = ("W1", "W2", "W3", "Wx", "Wh", "W_head")

#: architectures trained on shuffled window batches (vs reach sequences)
WINDOW_ARCHS = ("ann", "ann3d", "snn3d")


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.005
    dropout: float = 0.5
    weight_decay: float = 0.01
    batch_size: int = 512
    rng_seed: int = 0
    shuffle: bool = True
    l2_penalty: float = 0.0

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        return self


@dataclass
class AdamWState:
    """First/second moment estimates plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            m={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
            v={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
        )


def mse_loss(pred, label):
    """Mean squared error over all samples and both velocity components."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.size == 0:
        raise InsufficientData("empty batch")
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    return float(np.mean((pred - label) ** 2))


def surrogate_grad(u, u_thr):
    """Arctan surrogate spike derivative, 1 at threshold."""
    d = u - u_thr
    return 1.0 / (1.0 + (np.pi * d) ** 2)


def lr_schedule(epoch, cfg):
    """Cosine annealing from the configured rate down to zero."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return 0.5 * cfg.learning_rate * (1.0 + np.cos(np.pi * epoch / cfg.epochs))


def adamw_update(params, grads, opt, lr, weight_decay):
    """Decoupled weight decay, then bias-corrected Adam moments, in place."""
    opt.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** opt.t
    bc2 = 1.0 - ADAM_BETA2 ** opt.t
    for k, g in grads.items():
        w = params[k]
        if weight_decay:
            w *= 1.0 - lr * weight_decay
        m = opt.m[k]
        v = opt.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        w -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, opt


# ---------------------------------------------------------------------------
# building blocks with cached forward state

def _dropout_mask(rng, shape, d):
    if d <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= d) / (1.0 - d)


def _apply_mask(x, mask):
    return x if mask is None else x * mask


def _ln_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + M.LN_EPS)
    xhat = (x - mu) * ivar
    return gamma * xhat + beta, (xhat, ivar)


def _ln_backward(dout, gamma, cache):
    xhat, ivar = cache
    N = xhat.shape[-1]
    dgamma = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    dbeta = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gamma
    dx = (ivar / N) * (
        N * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _bn_forward_train(x, gamma, beta, buffers, prefix):
    B = x.shape[0]
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    ivar = 1.0 / np.sqrt(var + M.BN_EPS)
    xhat = (x - mu) * ivar
    out = gamma * xhat + beta
    # running stats keep the torch convention: unbiased variance
    buffers[f"{prefix}_mean"] *= 1.0 - BN_MOMENTUM
    buffers[f"{prefix}_mean"] += BN_MOMENTUM * mu
    buffers[f"{prefix}_var"] *= 1.0 - BN_MOMENTUM
    buffers[f"{prefix}_var"] += BN_MOMENTUM * var * B / (B - 1)
    return out, (xhat, ivar)


def _bn_backward(dout, gamma, cache):
    xhat, ivar = cache
    B = dout.shape[0]
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    dx = (ivar / B) * (
        B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )
    return dx, dgamma, dbeta


def _lif_forward(currents, beta, u_thr, reset_mode, u0, s0):
    from . import _kernels

    U, S = _kernels.lif_sequence(
        np.ascontiguousarray(currents), float(beta), float(u_thr),
        RESET_CODES[reset_mode], 1.0, u0, s0,
    )
    return U, S


def _lif_backward(C, U, S, beta, u_thr, reset_mode, dU_ext, dS_ext):
    """BPTT through one LIF layer; initial state is zero (fresh window/reach).

    Returns (dC, dbeta, du_thr). Spike gradients use the arctan surrogate;
    the recurrence contributes through both the carried potential and the
    reset term.
    """
    T = C.shape[0]
    beta = float(beta)
    u_thr = float(u_thr)
    dC = np.empty_like(C)
    carry_u = np.zeros_like(C[0])
    carry_s = np.zeros_like(C[0])
    dbeta = 0.0
    du_thr = 0.0
    for t in range(T - 1, -1, -1):
        gs = carry_s if dS_ext is None else dS_ext[t] + carry_s
        surr = surrogate_grad(U[t], u_thr)
        gsurr = gs * surr
        gu = dU_ext[t] + carry_u + gsurr
        du_thr -= gsurr.sum()
        u_prev = U[t - 1] if t > 0 else np.zeros_like(U[0])
        s_prev = S[t - 1] if t > 0 else np.zeros_like(S[0])
        if reset_mode == "to_zero":
            dh = gu * (1.0 - s_prev)
            h = beta * u_prev + C[t]
            carry_s = -gu * h
        elif reset_mode == "by_subtraction":
            dh = gu
            carry_s = -gu  # times u_sub = 1 (fixed)
        else:
            dh = gu
            carry_s = np.zeros_like(gu)
        dC[t] = dh
        dbeta += (dh * u_prev).sum()
        carry_u = dh * beta
    return dC, dbeta, du_thr


def _l2_terms(model, grads, l2):
    if l2 <= 0:
        return 0.0
    penalty = 0.0
    for k in _WEIGHT_KEYS:
        if k in model.params:
            W = model.params[k]
            penalty += float(np.sum(W * W))
            grads[k] += 2.0 * l2 * W
    return l2 * penalty


# ---------------------------------------------------------------------------
# per-architecture training passes

def _ann_pass(model, X, y, cfg, rng):
    p, bufs = model.params, model.buffers
    d = cfg.dropout if rng is not None else 0.0

    a = X
    caches = []
    for i in (1, 2):
        z = a @ p[f"W{i}"].T + p[f"b{i}"]
        bn_out, bn_cache = _bn_forward_train(
            z, p[f"bn{i}_gamma"], p[f"bn{i}_beta"], bufs, f"bn{i}"
        )
        r = np.maximum(bn_out, 0.0)
        mask = _dropout_mask(rng, r.shape, d)
        out = _apply_mask(r, mask)
        caches.append((a, bn_out, bn_cache, mask))
        a = out
    pred = a @ p["W3"].T + p["b3"]

    loss = mse_loss(pred, y)
    grads = {}
    dpred = 2.0 * (pred - y) / pred.size
    grads["W3"] = dpred.T @ a
    grads["b3"] = dpred.sum(axis=0)
    da = dpred @ p["W3"]
    for i in (2, 1):
        a_in, bn_out, bn_cache, mask = caches[i - 1]
        dr = _apply_mask(da, mask)
        dbn = dr * (bn_out > 0)
        dz, dgamma, dbeta = _bn_backward(dbn, p[f"bn{i}_gamma"], bn_cache)
        grads[f"bn{i}_gamma"] = dgamma
        grads[f"bn{i}_beta"] = dbeta
        grads[f"W{i}"] = dz.T @ a_in
        grads[f"b{i}"] = dz.sum(axis=0)
        da = dz @ p[f"W{i}"]
    loss += _l2_terms(model, grads, cfg.l2_penalty)
    return loss, grads, pred


def _snn3d_pass(model, X, y, cfg, rng):
    p = model.params
    B = X.shape[0]
    d = cfg.dropout if rng is not None else 0.0
    beta = float(p["lif_beta"])
    u_thr = float(p["lif_u_thr"])
    scale = float(p["out_scale"])

    flat = X.reshape(B, -1)
    z, ln_cache = _ln_forward(flat, p["ln_gamma"], p["ln_beta"])
    steps = np.ascontiguousarray(np.moveaxis(z.reshape(B, model.n_ch, model.m), 2, 0))

    sizes = (model.n1, model.n2, 2)
    act = steps
    layers = []
    for li in range(3):
        C = act @ p[f"W{li + 1}"].T + p[f"b{li + 1}"]
        U, S = _lif_forward(C, beta, u_thr, LIF_LAYER_RESETS[li],
                            np.zeros((B, sizes[li])), np.zeros((B, sizes[li])))
        mask = _dropout_mask(rng, S.shape, d) if li < 2 else None
        out = _apply_mask(S, mask)
        layers.append((act, C, U, S, mask))
        act = out
    U3 = layers[2][2]
    pred = scale * U3[-1]

    loss = mse_loss(pred, y)
    grads = {k: np.zeros_like(np.asarray(v, dtype=np.float64))
             for k, v in p.items()}
    dpred = 2.0 * (pred - y) / pred.size
    grads["out_scale"] = np.asarray((dpred * U3[-1]).sum())

    dbeta_tot = 0.0
    du_thr_tot = 0.0
    dU_ext = np.zeros_like(U3)
    dU_ext[-1] = dpred * scale
    dS_ext = None
    for li in (2, 1, 0):
        act_in, C, U, S, mask = layers[li]
        dC, dbeta_l, du_thr_l = _lif_backward(
            C, U, S, beta, u_thr, LIF_LAYER_RESETS[li], dU_ext, dS_ext
        )
        dbeta_tot += dbeta_l
        du_thr_tot += du_thr_l
        grads[f"W{li + 1}"] = np.einsum("tbi,tbj->ij", dC, act_in)
        grads[f"b{li + 1}"] = dC.sum(axis=(0, 1))
        dact = dC @ p[f"W{li + 1}"]
        if li > 0:
            prev_mask = layers[li - 1][4]
            dS_ext = _apply_mask(dact, prev_mask)
            dU_ext = np.zeros_like(dS_ext)
        else:
            dsteps = dact
    grads["lif_beta"] = np.asarray(dbeta_tot)
    grads["lif_u_thr"] = np.asarray(du_thr_tot)

    dz = np.moveaxis(dsteps, 0, 2).reshape(B, -1)
    _, dgamma, dbeta_ln = _ln_backward(dz, p["ln_gamma"], ln_cache)
    grads["ln_gamma"] = dgamma
    grads["ln_beta"] = dbeta_ln
    loss += _l2_terms(model, grads, cfg.l2_penalty)
    return loss, grads, pred


def _snn_stream_pass(model, X, y, cfg, rng):
    """One chronological reach with fresh state; prediction at every step."""
    p = model.params
    T = X.shape[0]
    d = cfg.dropout if rng is not None else 0.0
    scale = float(p["out_scale"])
    sizes = (model.n1, model.n2, 2)

    act = X.reshape(T, 1, model.n_ch)
    layers = []
    for li in range(3):
        C = act @ p[f"W{li + 1}"].T + p[f"b{li + 1}"]
        U, S = _lif_forward(C, p[f"beta{li + 1}"], p[f"u_thr{li + 1}"],
                            LIF_LAYER_RESETS[li],
                            np.zeros((1, sizes[li])), np.zeros((1, sizes[li])))
        mask = _dropout_mask(rng, S.shape, d) if li < 2 else None
        out = _apply_mask(S, mask)
        layers.append((act, C, U, S, mask))
        act = out
    U3 = layers[2][2]
    pred = scale * U3[:, 0, :]

    loss = mse_loss(pred, y)
    grads = {k: np.zeros_like(np.asarray(v, dtype=np.float64))
             for k, v in p.items()}
    dpred = 2.0 * (pred - y) / pred.size
    grads["out_scale"] = np.asarray((dpred * U3[:, 0, :]).sum())

    dU_ext = (dpred * scale).reshape(T, 1, 2)
    dS_ext = None
    for li in (2, 1, 0):
        act_in, C, U, S, mask = layers[li]
        dC, dbeta_l, du_thr_l = _lif_backward(
            C, U, S, p[f"beta{li + 1}"], p[f"u_thr{li + 1}"],
            LIF_LAYER_RESETS[li], dU_ext, dS_ext,
        )
        grads[f"beta{li + 1}"] = np.asarray(dbeta_l)
        grads[f"u_thr{li + 1}"] = np.asarray(du_thr_l)
        grads[f"W{li + 1}"] = np.einsum("tbi,tbj->ij", dC, act_in)
        grads[f"b{li + 1}"] = dC.sum(axis=(0, 1))
        dact = dC @ p[f"W{li + 1}"]
        if li > 0:
            prev_mask = layers[li - 1][4]
            dS_ext = _apply_mask(dact, prev_mask)
            dU_ext = np.zeros_like(dS_ext)
    loss += _l2_terms(model, grads, cfg.l2_penalty)
    return loss, grads, pred


def _lstm_pass(model, X, y, cfg, rng):
    """BPTT over one reach; hidden state starts at zero."""
    p = model.params
    H = model.n_lstm
    T = X.shape[0]
    d = cfg.dropout if rng is not None else 0.0

    z, ln_cache = _ln_forward(X, p["ln_gamma"], p["ln_beta"])
    h = np.zeros(H)
    c = np.zeros(H)
    cache = []
    hd = np.empty((T, H))
    masks = []
    for t in range(T):
        gates = p["Wx"] @ z[t] + p["Wh"] @ h + p["b"]
        i, f, g, o = np.split(gates, 4)
        i = 1.0 / (1.0 + np.exp(-i))
        f = 1.0 / (1.0 + np.exp(-f))
        o = 1.0 / (1.0 + np.exp(-o))
        g = np.tanh(g)
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        mask = _dropout_mask(rng, h.shape, d)
        masks.append(mask)
        hd[t] = _apply_mask(h, mask)
        cache.append((i, f, g, o, c_prev, h_prev, tc))
    pred = hd @ p["W_head"].T + p["b_head"]

    loss = mse_loss(pred, y)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dpred = 2.0 * (pred - y) / pred.size
    grads["W_head"] = dpred.T @ hd
    grads["b_head"] = dpred.sum(axis=0)
    dhd = dpred @ p["W_head"]

    dz = np.zeros_like(z)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i, f, g, o, c_prev, h_prev, tc = cache[t]
        dh = _apply_mask(dhd[t], masks[t]) + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dgates = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        grads["Wx"] += np.outer(dgates, z[t])
        grads["Wh"] += np.outer(dgates, h_prev)
        grads["b"] += dgates
        dz[t] = p["Wx"].T @ dgates
        dh_next = p["Wh"].T @ dgates
    _, dgamma, dbeta = _ln_backward(dz, p["ln_gamma"], ln_cache)
    grads["ln_gamma"] = dgamma
    grads["ln_beta"] = dbeta
    loss += _l2_terms(model, grads, cfg.l2_penalty)
    return loss, grads, pred


_PASSES = {
    "ann": _ann_pass,
    "ann3d": _ann_pass,
    "snn3d": _snn3d_pass,
    "snn_stream": _snn_stream_pass,
    "lstm": _lstm_pass,
}


def backprop_gradients(model, X, y, cfg, rng=None):
    """Training-mode loss and exact reverse-mode gradients for one batch.

    X holds feature records (window batch, or a chronological reach for the
    streaming architectures); pass ``rng`` to activate dropout. Returns
    (loss, grads) with one gradient array per parameter.
    """
    X = np.asarray(X, dtype=np.float64)
    if model.arch == "ann3d":
        X = X.reshape(X.shape[0], -1)
    y = np.asarray(y, dtype=np.float64)
    loss, grads, _ = _PASSES[model.arch](model, X, y, cfg, rng)
    if not np.isfinite(loss):
        raise NumericalFault("non-finite loss")
    return loss, grads


def training_loss(model, X, y, cfg):
    """Deterministic (dropout-free) training-mode loss; finite-difference hook."""
    X = np.asarray(X, dtype=np.float64)
    if model.arch == "ann3d":
        X = X.reshape(X.shape[0], -1)
    buffers = copy.deepcopy(model.buffers)
    loss, _, _ = _PASSES[model.arch](model, X, np.asarray(y, dtype=np.float64),
                                     cfg, None)
    model.buffers = buffers  # loss probes must not advance running stats
    return loss


def _eval_r2(model, feat_data, labels, reaches):
    from .bench import r2_score

    idx = reaches.sample_indices()
    if idx.size < 2:
        return float("nan")
    M.reset_state(model)
    preds = M.predict_series(model, feat_data[idx])
    return r2_score(preds.T, labels[idx].T)


def _clamp_lif_params(model):
    # keep the leak inside the stable range whatever the optimizer did
    for k in ("lif_beta", "beta1", "beta2", "beta3"):
        if k in model.params:
            np.clip(model.params[k], 1e-3, 1.0 - 1e-3, out=model.params[k])


def train(model, session, splits, feat_cfg, cfg):
    """Train on the split's training reaches; returns (best model, history).

    Window architectures shuffle samples into fixed-size batches; streaming
    ones consume whole reaches chronologically with a state reset at each
    reach start. After every epoch the validation span is scored streaming
    (single initial reset) and the checkpoint with the best validation R^2
    is restored into the returned model.

    History rows: (epoch, lr, train_loss, val_r2).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    features = extract_features(session, feat_cfg)
    labels = session.velocity.astype(np.float64).T

    opt = AdamWState.for_params(model.params)
    history = []
    best_r2 = -np.inf
    best_snapshot = None

    train_idx = splits.train.sample_indices()
    if model.arch in WINDOW_ARCHS and train_idx.size < cfg.batch_size // 8:
        raise InsufficientData(f"{train_idx.size} training samples")

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        losses = []
        if model.arch in WINDOW_ARCHS:
            order = rng.permutation(train_idx) if cfg.shuffle else train_idx
            for lo in range(0, order.size, cfg.batch_size):
                batch = order[lo : lo + cfg.batch_size]
                if batch.size < 2:
                    continue
                X = features.data[batch]
                yb = labels[batch]
                try:
                    loss, grads = backprop_gradients(model, X, yb, cfg, rng)
                except NumericalFault as e:
                    raise TrainingDiverged(
                        f"{e} (epoch {epoch}, batch at {lo})", history
                    ) from e
                adamw_update(model.params, grads, opt, lr, cfg.weight_decay)
                _clamp_lif_params(model)
                losses.append(loss)
        else:
            for start, end in splits.train:
                if end - start < 2:
                    continue
                X = features.data[start:end]
                yb = labels[start:end]
                try:
                    loss, grads = backprop_gradients(model, X, yb, cfg, rng)
                except NumericalFault as e:
                    raise TrainingDiverged(
                        f"{e} (epoch {epoch}, reach at {start})", history
                    ) from e
                adamw_update(model.params, grads, opt, lr, cfg.weight_decay)
                _clamp_lif_params(model)
                losses.append(loss)

        val_r2 = _eval_r2(model, features.data, labels, splits.val)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        history.append((epoch, float(lr), train_loss, float(val_r2)))
        if np.isfinite(val_r2) and val_r2 > best_r2:
            best_r2 = val_r2
            best_snapshot = (copy.deepcopy(model.params), copy.deepcopy(model.buffers))

    if best_snapshot is not None:
        model.params, model.buffers = best_snapshot
    M.reset_state(model)
    return model, history


def history_to_csv(history, path):
    with open(path, "w") as f:
        f.write("epoch,lr,train_loss,val_r2\n")
        for epoch, lr, loss, r2 in history:
            f.write(f"{epoch},{lr!r},{loss!r},{r2!r}\n")


def parse_train_config(path):
    """Read a flat ``key = value`` text file into a TrainConfig.

    Known keys: epochs, learning_rate, dropout, weight_decay, batch_size,
    rng_seed, shuffle. Unknown keys raise.
    """
    cfg = TrainConfig()
    casts = {
        "epochs": int, "learning_rate": float, "dropout": float,
        "weight_decay": float, "batch_size": int, "rng_seed": int,
        "shuffle": lambda s: s.strip().lower() in ("1", "true", "yes"),
    }
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in casts:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(cfg, key, casts[key](val))
    return cfg.validate()
