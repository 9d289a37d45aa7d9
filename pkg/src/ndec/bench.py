"""Accuracy and implementation-cost profiling.

Operation counting convention (documented contract; published harnesses
differ in decimals, orderings are what we reproduce):

* a fully-connected synapse contributes one MAC when its input activation
  is nonzero; synapses driven by the streaming model's binary events count
  as ACs instead;
* normalization costs 2 MACs per normalized feature (batch norm folded to
  scale+shift at inference; layer norm likewise normalize+affine);
* each LIF neuron update costs 2 MACs per time step (leak multiply, reset
  apply); ReLU and gate nonlinearities cost 1 per unit; the LSTM cell's
  elementwise update costs 4 per unit; output scaling 1 per output;
* activation sparsity is the fraction of zero entries across all counted
  synaptic-layer inputs.

Memory footprint is 4 bytes per stored value: every learnable parameter
plus batch-norm running statistics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import models as M
from .errors import DegenerateLabels
from .filters import apply_filter

STRIDE_MS = 4.0


def r2_score(pred, label):
    """Coefficient of determination, averaged over axes.

    pred/label: 1-D series or (n_axes, T) with axes first. Per axis,
    R^2 = 1 - SS_res / SS_tot with SS_tot around the label mean.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    if pred.ndim == 1:
        pred = pred[None, :]
        label = label[None, :]
    if pred.shape[1] < 2:
        raise ValueError("need at least 2 samples")
    scores = []
    for axis in range(pred.shape[0]):
        y = label[axis]
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        if ss_tot == 0.0:
            raise DegenerateLabels(f"axis {axis} labels are constant")
        ss_res = float(np.sum((y - pred[axis]) ** 2))
        scores.append(1.0 - ss_res / ss_tot)
    return float(np.mean(scores))


@dataclass
class OpCount:
    macs: float
    acs: float
    act_sparsity: float
    layer_macs: list = field(default_factory=list)
    layer_acs: list = field(default_factory=list)
    layer_nnz_frac: list = field(default_factory=list)
    fixed_macs: float = 0.0


def _nnz_frac(act):
    return float(np.count_nonzero(act)) / act.size


def dense_synapse_count(model):
    """Per-inference synaptic operations with every activation nonzero."""
    p = model.params
    if model.arch == "lstm":
        return (p["Wx"].size + p["Wh"].size) + p["W_head"].size
    total = p["W1"].size + p["W2"].size + p["W3"].size
    if model.arch == "snn3d":
        total *= model.m
    return total


def _fixed_macs(model):
    if model.arch in ("ann", "ann3d"):
        return 2 * (model.n1 + model.n2) + (model.n1 + model.n2)
    if model.arch == "snn3d":
        neurons = model.n1 + model.n2 + 2
        return 2 * (model.n_ch * model.m) + 2 * neurons * model.m + 2
    if model.arch == "snn_stream":
        neurons = model.n1 + model.n2 + 2
        return 2 * neurons + 2
    # lstm: input layer norm, gate nonlinearities, elementwise cell update
    return 2 * model.n_ch + 4 * model.n_lstm + 4 * model.n_lstm


def count_operations(model, feat_data):
    """Effective per-inference operation counts over a feature series.

    Runs the instrumented forward (streaming state freshly reset) and
    averages per-synapse activity across the series.
    """
    feat_data = np.asarray(feat_data, dtype=np.float64)
    n_inf = feat_data.shape[0]
    M.reset_state(model)
    collect = {}
    M.predict_series(model, feat_data, collect=collect)
    acts = collect["syn_inputs"]
    p = model.params

    if model.arch == "lstm":
        H = model.n_lstm
        zs, hs = acts
        h_prev = np.vstack([np.zeros((1, H)), hs[:-1]])
        fracs = [_nnz_frac(zs), _nnz_frac(h_prev), _nnz_frac(hs)]
        sizes = [p["Wx"].size, p["Wh"].size, p["W_head"].size]
        layer_macs = [f * s for f, s in zip(fracs, sizes)]
        layer_acs = [0.0, 0.0, 0.0]
        total_entries = zs.size + h_prev.size + hs.size
        total_nnz = sum(
            np.count_nonzero(a) for a in (zs, h_prev, hs)
        )
    else:
        weights = [p["W1"], p["W2"], p["W3"]]
        fracs = [_nnz_frac(a) for a in acts]
        per_step = [w.size for w in weights]
        if model.arch == "snn3d":
            per_step = [s * model.m for s in per_step]
        effective = [f * s for f, s in zip(fracs, per_step)]
        if model.arch == "snn_stream":
            layer_macs = [0.0, 0.0, 0.0]
            layer_acs = effective
        else:
            layer_macs = effective
            layer_acs = [0.0, 0.0, 0.0]
        total_entries = sum(a.size for a in acts)
        total_nnz = sum(np.count_nonzero(a) for a in acts)

    fixed = float(_fixed_macs(model))
    macs = sum(layer_macs) + fixed
    acs = sum(layer_acs)
    sparsity = 1.0 - total_nnz / total_entries
    return OpCount(
        macs=float(macs),
        acs=float(acs),
        act_sparsity=float(sparsity),
        layer_macs=[float(x) for x in layer_macs],
        layer_acs=[float(x) for x in layer_acs],
        layer_nnz_frac=[float(f) for f in fracs],
        fixed_macs=fixed,
    )


def estimate_memory_access(model, layer_nnz_frac):
    """Weight fetches scaled by input activity, plus auxiliary parameter fetches.

    layer_nnz_frac: nonzero-input fraction per synaptic layer, as measured
    by count_operations.
    """
    p = model.params
    if model.arch == "lstm":
        sizes = [p["Wx"].size, p["Wh"].size, p["W_head"].size]
        weight_keys = ("Wx", "Wh", "W_head")
    else:
        sizes = [p["W1"].size, p["W2"].size, p["W3"].size]
        if model.arch == "snn3d":
            sizes = [s * model.m for s in sizes]
        weight_keys = ("W1", "W2", "W3")
    if len(layer_nnz_frac) != len(sizes):
        raise ValueError("one nonzero fraction per synaptic layer required")
    weight_fetches = sum(f * s for f, s in zip(layer_nnz_frac, sizes))
    aux = sum(v.size for k, v in p.items() if k not in weight_keys)
    aux += sum(b.size for b in model.buffers.values())
    return float(weight_fetches + aux)


def model_size_bytes(model):
    """Deployment footprint: 4 bytes per parameter and per running statistic."""
    return 4 * model.stored_count()


def pareto_front(points):
    """Non-dominated subset of (cost, accuracy[, ...payload]) tuples.

    A point is dominated when another has cost <= and accuracy >= with at
    least one strict. Exact (cost, accuracy) duplicates keep the first
    occurrence. Output is sorted by cost ascending.
    """
    pts = list(points)
    for cost, acc, *_ in pts:
        if not (math.isfinite(cost) and math.isfinite(acc)):
            raise ValueError("pareto points must be finite")
    seen = set()
    unique = []
    for i, pt in enumerate(pts):
        key = (pt[0], pt[1])
        if key not in seen:
            seen.add(key)
            unique.append((i, pt))
    order = sorted(unique, key=lambda ip: (ip[1][0], -ip[1][1], ip[0]))
    out = []
    best_acc = -math.inf
    for _, pt in order:
        if pt[1] > best_acc:
            out.append(pt)
            best_acc = pt[1]
    return out


@dataclass
class LatencyReport:
    """Stride-to-output timing; compute time is taken as negligible."""

    stride_ms: float
    filter_ms: float
    total_ms: float
    realtime: bool


def latency_estimate(filter_spec=None):
    """Output latency for a filter choice (None = raw model output)."""
    if filter_spec is None or filter_spec.mode == "forward":
        return LatencyReport(STRIDE_MS, 0.0, STRIDE_MS, True)
    if filter_spec.mode == "block_bid":
        f_ms = (filter_spec.block_window // 2) * STRIDE_MS
        return LatencyReport(STRIDE_MS, f_ms, STRIDE_MS + f_ms, True)
    # bid needs the whole series first: offline only
    return LatencyReport(STRIDE_MS, math.inf, math.inf, False)


@dataclass
class BenchReport:
    model_id: str
    r2: float
    macs: float
    acs: float
    mem_accesses: float
    act_sparsity: float
    footprint_bytes: int
    latency_ms: float
    realtime: bool
    filter: dict | None = None

    @property
    def footprint_kb(self):
        return self.footprint_bytes / 1000.0

    def as_dict(self):
        return {
            "model_id": self.model_id,
            "r2": self.r2,
            "macs": self.macs,
            "acs": self.acs,
            "total_ops": self.macs + self.acs,
            "mem_accesses": self.mem_accesses,
            "act_sparsity": self.act_sparsity,
            "footprint_bytes": self.footprint_bytes,
            "footprint_kb": self.footprint_kb,
            "latency_ms": self.latency_ms,
            "realtime": self.realtime,
            "filter": self.filter,
        }


def benchmark(model, session, splits, feat_cfg, filter_spec=None, model_id=None):
    """Score a trained model on the test reaches and profile its cost.

    Test samples stream chronologically with a single initial state reset;
    the optional output filter is applied per velocity axis before scoring.
    """
    from .features import extract_features

    features = extract_features(session, feat_cfg)
    labels = session.velocity.astype(np.float64).T
    idx = splits.test.sample_indices()
    feat_test = features.data[idx]

    M.reset_state(model)
    preds = M.predict_series(model, feat_test)
    pred_axes = preds.T
    if filter_spec is not None:
        pred_axes = apply_filter(pred_axes, filter_spec)
    r2 = r2_score(pred_axes, labels[idx].T)

    ops = count_operations(model, feat_test)
    mem = estimate_memory_access(model, ops.layer_nnz_frac)
    lat = latency_estimate(filter_spec)
    return BenchReport(
        model_id=model_id or model.arch,
        r2=float(r2),
        macs=ops.macs,
        acs=ops.acs,
        mem_accesses=mem,
        act_sparsity=ops.act_sparsity,
        footprint_bytes=model_size_bytes(model),
        latency_ms=lat.total_ms,
        realtime=lat.realtime,
        filter=None if filter_spec is None else {
            "mode": filter_spec.mode,
            "order": filter_spec.order,
            "cutoff": filter_spec.cutoff,
            "block_window": filter_spec.block_window,
        },
    )


def size_sweep(arch, grid, session, splits, feat_cfg, train_cfg):
    """Train one model per (n1, n2) grid cell and report R^2 vs parameter count.

    Returns (rows, front): rows are dicts with n1, n2, param_count, r2 and an
    error message when a cell failed; front is the pareto subset over
    (param_count, r2) of the successful cells.
    """
    from .train import train

    rows = []
    points = []
    for n1, n2 in grid:
        row = {"n1": n1, "n2": n2, "param_count": 0,
               "r2": float("nan"), "error": ""}
        try:
            model = M.init_model(arch, session.n_probes, n1=n1, n2=n2,
                                 seed=train_cfg.rng_seed)
            row["param_count"] = model.param_count()
            model, history = train(model, session, splits, feat_cfg, train_cfg)
            row["r2"] = max(h[3] for h in history)
        except Exception as e:  # noqa: BLE001 - annotate and continue per cell
            row["error"] = f"{type(e).__name__}: {e}"
        else:
            points.append((row["param_count"], row["r2"], f"{arch}_{n1}x{n2}"))
        rows.append(row)
    return rows, pareto_front(points)
