"""Command-line front end.

Every run writes its artifacts into a fresh directory under --out (or the
NDEC_OUT environment variable, default ./ndec_runs) together with a
manifest recording the command, resolved configuration, seed, and content
hashes of the input files. File contents are deterministic: rerunning with
identical inputs reproduces them byte for byte.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bench, data, features, filters, models
from .errors import NdecError
from .train import TrainConfig, history_to_csv, parse_train_config, train as run_training

FILTER_FLAGS = {"none": None, "fwd": "forward", "bid": "bid", "blockbid": "block_bid"}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _make_run_dir(args, command):
    root = Path(args.out or os.environ.get("NDEC_OUT", "ndec_runs"))
    if args.run_dir:
        run = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run = root / f"{command}-{stamp}-{os.getpid()}"
    run.mkdir(parents=True, exist_ok=True)
    return run


def _config_snapshot(config):
    out = {}
    for k, v in config.items():
        if k in ("fn", "out", "run_dir"):
            continue
        if isinstance(v, dict):
            v = _config_snapshot(v)
        elif not isinstance(v, (str, int, float, bool, type(None), list)):
            v = str(v)
        out[k] = v
    return out


def _write_manifest(run_dir, command, config, inputs, outputs):
    manifest = {
        "command": command,
        "config": _config_snapshot(config),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(o.name for o in outputs),
        "version": __version__,
    }
    path = run_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _split_spec(args):
    if getattr(args, "kfold", 0):
        return data.SplitSpec(
            mode="kfold", k=args.kfold, fold_index=args.fold,
            max_reach_seconds=args.max_reach_seconds,
            remove_long_test=getattr(args, "remove_long_test", False),
        )
    fractions = {50: (0.5, 0.25, 0.25), 80: (0.8, 0.1, 0.1)}[args.split]
    return data.SplitSpec(
        train_fraction=fractions[0], val_fraction=fractions[1],
        test_fraction=fractions[2],
        max_reach_seconds=args.max_reach_seconds,
        remove_long_test=getattr(args, "remove_long_test", False),
    )


def _add_split_flags(p, with_remove=False):
    p.add_argument("--split", type=int, choices=(50, 80), default=50,
                   help="contiguous split: 50 -> 50/25/25, 80 -> 80/10/10")
    p.add_argument("--kfold", type=int, default=0, help="use k-fold mode with this k")
    p.add_argument("--fold", type=int, default=0, help="fold index for --kfold")
    p.add_argument("--max-reach-seconds", type=float, default=8.0)
    if with_remove:
        p.add_argument("--remove-long-test", action="store_true",
                       help="also drop over-long reaches from the test set")


def _add_common(p):
    p.add_argument("--out", default=None, help="output root (default $NDEC_OUT or ./ndec_runs)")
    p.add_argument("--run-dir", default=None, help="exact run directory (overrides --out)")


def cmd_synth(args):
    run = _make_run_dir(args, "synth")
    cfg = data.SynthConfig(
        n_probes=args.probes, duration=args.duration,
        baseline_rate=args.baseline_rate, modulation_depth=args.mod_depth,
        rng_seed=args.seed,
    )
    session = data.synth_session(cfg)
    out_file = Path(args.out_file) if args.out_file else run / "session.ndec"
    data.save_session(session, out_file, manifest={
        "generator": "synth",
        "seed": args.seed,
        "n_probes": cfg.n_probes,
        "duration": cfg.duration,
        "baseline_rate": cfg.baseline_rate,
        "modulation_depth": cfg.modulation_depth,
    })
    _write_manifest(run, "synth", vars(args), [], [out_file])
    print(f"wrote {out_file} ({session.n_samples} samples, {session.n_probes} probes)")
    return 0


def cmd_segment(args):
    run = _make_run_dir(args, "segment")
    session = data.load_session(args.session)
    reaches = data.segment_reaches(session.target_pos)
    csv_path = run / "reaches.csv"
    with open(csv_path, "w") as f:
        f.write("reach,start,end,duration_s\n")
        for i, (s, e) in enumerate(reaches):
            f.write(f"{i},{s},{e},{(e - s) / session.sample_rate!r}\n")
    report = {
        "session": str(args.session),
        "n_reaches": len(reaches),
        "n_samples": session.n_samples,
        "n_probes": session.n_probes,
    }
    report_path = run / "segment.json"
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(run, "segment", vars(args), [args.session], [csv_path, report_path])
    print(f"{args.session}: {len(reaches)} reaches")
    return 0


def _train_config(args):
    if args.config:
        cfg = parse_train_config(args.config)
    else:
        cfg = TrainConfig()
    for key in ("epochs", "learning_rate", "dropout", "weight_decay",
                "batch_size", "rng_seed"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


def cmd_train(args):
    run = _make_run_dir(args, "train")
    session = data.load_session(args.session)
    splits = data.make_splits(session, _split_spec(args))
    cfg = _train_config(args)
    feat_cfg = features.preset_config(args.arch)
    model = models.init_model(
        args.arch, session.n_probes, n1=args.n1, n2=args.n2,
        n_lstm=args.n_lstm, dropout=cfg.dropout, seed=cfg.rng_seed,
    )
    model, history = run_training(model, session, splits, feat_cfg, cfg)
    ckpt = run / "model.ndm"
    models.save_model(model, ckpt, extra_meta={
        "session_sha256": _sha256(args.session),
        "train_config": vars(cfg),
        "best_val_r2": max((h[3] for h in history), default=float("nan")),
    })
    hist_path = run / "history.csv"
    history_to_csv(history, hist_path)
    _write_manifest(run, "train", {**vars(args), "train_config": vars(cfg)},
                    [args.session], [ckpt, hist_path])
    best = max((h[3] for h in history), default=float("nan"))
    print(f"trained {args.arch}: best val R^2 = {best:.4f} -> {ckpt}")
    return 0


def _filter_spec(args):
    mode = FILTER_FLAGS[args.filter]
    if mode is None:
        return None
    return filters.FilterSpec(order=args.order, cutoff=args.cutoff, mode=mode,
                              block_window=args.block_window)


def _add_filter_flags(p):
    p.add_argument("--filter", choices=tuple(FILTER_FLAGS), default="none")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--cutoff", type=float, default=0.07)
    p.add_argument("--block-window", type=int, default=16)


def cmd_eval(args):
    run = _make_run_dir(args, "eval")
    session = data.load_session(args.session)
    splits = data.make_splits(session, _split_spec(args))
    model = models.load_model(args.model)
    feat_cfg = features.preset_config(model.arch)
    spec = _filter_spec(args)
    report = bench.benchmark(model, session, splits, feat_cfg, spec,
                             model_id=Path(args.model).stem)
    json_path = run / "report.json"
    with open(json_path, "w") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    csv_path = run / "report.csv"
    row = report.as_dict()
    row["filter"] = args.filter
    keys = sorted(row)
    with open(csv_path, "w") as f:
        f.write(",".join(keys) + "\n")
        f.write(",".join(json.dumps(row[k]) for k in keys) + "\n")
    _write_manifest(run, "eval", vars(args), [args.session, args.model],
                    [json_path, csv_path])
    print(f"R^2 = {report.r2:.4f}  ops = {report.macs + report.acs:.1f}  "
          f"latency = {report.latency_ms} ms")
    return 0


def cmd_filtergrid(args):
    run = _make_run_dir(args, "filtergrid")
    session = data.load_session(args.session)
    splits = data.make_splits(session, _split_spec(args))
    model = models.load_model(args.model)
    feat_cfg = features.preset_config(model.arch)
    feats = features.extract_features(session, feat_cfg)
    labels = session.velocity.astype(np.float64).T
    idx = splits.val.sample_indices()
    models.reset_state(model)
    preds = models.predict_series(model, feats.data[idx])
    mode = FILTER_FLAGS[args.mode]
    best, rows = filters.filter_grid_search(
        preds.T, labels[idx].T, mode=mode, block_window=args.block_window
    )
    csv_path = run / "filtergrid.csv"
    with open(csv_path, "w") as f:
        f.write("order,cutoff,r2\n")
        for order, cutoff, r2 in rows:
            f.write(f"{order},{cutoff!r},{r2!r}\n")
    best_path = run / "best.json"
    with open(best_path, "w") as f:
        json.dump({"order": best.order, "cutoff": best.cutoff, "mode": best.mode,
                   "block_window": best.block_window}, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(run, "filtergrid", vars(args), [args.session, args.model],
                    [csv_path, best_path])
    print(f"best: order {best.order}, cutoff {best.cutoff} ({best.mode})")
    return 0


def cmd_pareto(args):
    run = _make_run_dir(args, "pareto")
    report_files = sorted(Path(args.reports).glob("**/report.json"))
    if not report_files:
        raise NdecError(f"no report.json files under {args.reports}")
    used_files = []
    points = []
    for rf in report_files:
        with open(rf) as f:
            rep = json.load(f)
        if "total_ops" not in rep or "r2" not in rep:
            continue  # not an eval report
        used_files.append(rf)
        cost = {
            "ops": rep["total_ops"],
            "memory": rep["mem_accesses"],
            "footprint": rep["footprint_bytes"],
        }[args.cost]
        filt = rep["filter"]["mode"] if rep.get("filter") else "none"
        points.append((cost, rep["r2"], rep["model_id"], filt))
    if not points:
        raise NdecError(f"no eval reports under {args.reports}")
    front = bench.pareto_front(points)
    csv_path = run / "pareto.csv"
    with open(csv_path, "w") as f:
        f.write("cost,r2,label,filter\n")
        for cost, r2, label, filt in front:
            f.write(f"{cost!r},{r2!r},{label},{filt}\n")
    _write_manifest(run, "pareto", vars(args), used_files, [csv_path])
    print(f"{len(front)} of {len(points)} points on the frontier -> {csv_path}")
    return 0


def cmd_sweep(args):
    run = _make_run_dir(args, "sweep")
    session = data.load_session(args.session)
    splits = data.make_splits(session, _split_spec(args))
    cfg = _train_config(args)
    feat_cfg = features.preset_config(args.arch)
    grid = []
    for cell in args.grid.split(","):
        n1, n2 = cell.lower().split("x")
        grid.append((int(n1), int(n2)))
    rows, front = bench.size_sweep(args.arch, grid, session, splits, feat_cfg, cfg)
    csv_path = run / "sweep.csv"
    with open(csv_path, "w") as f:
        f.write("n1,n2,param_count,r2,error\n")
        for r in rows:
            f.write(f"{r['n1']},{r['n2']},{r['param_count']},{r['r2']!r},{r['error']}\n")
    front_path = run / "sweep_pareto.csv"
    with open(front_path, "w") as f:
        f.write("param_count,r2,label\n")
        for cost, r2, label in front:
            f.write(f"{cost},{r2!r},{label}\n")
    _write_manifest(run, "sweep", vars(args), [args.session], [csv_path, front_path])
    print(f"swept {len(rows)} configs -> {csv_path}")
    return 0


def cmd_features(args):
    run = _make_run_dir(args, "features")
    session = data.load_session(args.session)
    feat_cfg = features.preset_config(args.arch)
    series = features.extract_features(session, feat_cfg)
    csv_path = run / "features.csv"
    features.write_csv(series, session.sample_times, csv_path)
    _write_manifest(run, "features", vars(args), [args.session], [csv_path])
    print(f"wrote {csv_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ndec",
        description="Motor-decoder benchmark pipeline: synthesize or convert "
                    "sessions, train decoders, filter outputs, profile cost.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic NDEC session")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=96)
    p.add_argument("--duration", type=float, default=120.0)
    p.add_argument("--baseline-rate", type=float, default=8.0)
    p.add_argument("--mod-depth", type=float, default=6.0)
    p.add_argument("--out-file", default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("segment", help="reach report for a session")
    p.add_argument("--session", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("train", help="train a decoder")
    p.add_argument("--session", required=True)
    p.add_argument("--arch", choices=models.ARCHS, default="ann")
    p.add_argument("--n1", type=int, default=32)
    p.add_argument("--n2", type=int, default=48)
    p.add_argument("--n-lstm", type=int, default=40)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--seed", type=int, default=None, dest="rng_seed")
    p.add_argument("--config", default=None, help="flat key=value training config file")
    _add_split_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="benchmark a checkpoint on the test split")
    p.add_argument("--session", required=True)
    p.add_argument("--model", required=True, help="checkpoint path")
    _add_filter_flags(p)
    _add_split_flags(p, with_remove=True)
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("filtergrid", help="grid-search filter order/cutoff on the val split")
    p.add_argument("--session", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("fwd", "bid", "blockbid"), default="bid")
    p.add_argument("--block-window", type=int, default=16)
    _add_split_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_filtergrid)

    p = sub.add_parser("pareto", help="pareto frontier from a directory of eval reports")
    p.add_argument("--reports", required=True)
    p.add_argument("--cost", choices=("ops", "memory", "footprint"), default="ops")
    _add_common(p)
    p.set_defaults(fn=cmd_pareto)

    p = sub.add_parser("sweep", help="model-size sweep over an n1xn2 grid")
    p.add_argument("--session", required=True)
    p.add_argument("--arch", choices=models.ARCHS, default="ann")
    p.add_argument("--grid", default="16x32,32x48,48x64",
                   help="comma-separated n1xn2 cells")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, dest="rng_seed")
    p.add_argument("--config", default=None)
    _add_split_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("features", help="dump a feature series as CSV")
    p.add_argument("--session", required=True)
    p.add_argument("--arch", choices=models.ARCHS, default="ann")
    _add_common(p)
    p.set_defaults(fn=cmd_features)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (NdecError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
