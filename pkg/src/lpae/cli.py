"""Command-line interface: ``lpae gen|train|eval|bench|export-plots``.

Exit codes: 0 success, 2 usage error, 1 runtime failure.  Every command
writes a ``run-manifest`` (flat key=value text) into its output location.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import PRESETS, export_features_csv, generate_dataset, read_dataset, \
    write_dataset
from .net import load_checkpoint, save_checkpoint
from .trainer import CSV_FIELDS, SWEEP_AXES, TrainConfig, evaluate, \
    load_experiment_config, run_experiment, train, train_eval_split

log = logging.getLogger("lpae")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _flatten(prefix: str, value, out: dict) -> None:
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], out)
    else:
        out[prefix] = json.dumps(value) if isinstance(value, (list, tuple)) else value


def write_manifest(path: Path, command: str, settings: dict) -> None:
    entries = {"command": command, "lpae_version": __version__,
               "python": platform.python_version(), "numpy": np.__version__}
    _flatten("", settings, entries)
    lines = [f"{k}={entries[k]}" for k in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            out[key] = val
    return out


def _load_train_config(path, seed) -> TrainConfig:
    d = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        d = d.get("train", d)
    if seed is not None:
        d["seed"] = seed
    return TrainConfig.from_dict(d)


def cmd_gen(args) -> None:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(args.count, args.seed, args.preset)
    write_dataset(ds, out)
    if args.csv:
        export_features_csv(ds, args.csv)
    write_manifest(out.with_name(out.name + ".run-manifest"), "gen",
                   {"count": args.count, "seed": args.seed, "preset": args.preset,
                    "d": ds.d, "n": ds.n, "m": ds.m})
    print(f"wrote {len(ds)} records (d={ds.d}, n={ds.n}, m={ds.m}) to {out}")


def cmd_train(args) -> None:
    cfg = _load_train_config(args.config, args.seed)
    ds = read_dataset(args.data)
    train_ds, eval_ds = train_eval_split(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(train_ds, cfg, probe=eval_ds)
    save_checkpoint(out / "model.npz", encoder=res.encoder, decoder=res.decoder)
    with open(out / "epochs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lam", "rec", "viol", "obj", "total",
                    "probe_feasibility_pct", "probe_violation"])
        for e in res.logs:
            w.writerow([e.epoch, repr(e.lam), repr(e.loss.rec), repr(e.loss.viol),
                        repr(e.loss.obj), repr(e.loss.total),
                        repr(e.probe_feasibility_pct), repr(e.probe_violation)])
    write_manifest(out / "run-manifest", "train",
                   {"data": str(args.data), "train": asdict(cfg),
                    "train_records": len(train_ds), "eval_records": len(eval_ds)})
    last = res.logs[-1]
    print(f"trained {cfg.epochs} epochs; final lambda={last.lam:g}, "
          f"held-out feasibility={last.probe_feasibility_pct:.1f}%")


def cmd_eval(args) -> None:
    nets = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.data)
    if args.split == "eval":
        ds = train_eval_split(ds)[1]
    m = evaluate(nets["encoder"], nets["decoder"], ds, args.tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(m.as_row(), indent=2, sort_keys=True)
                                      + "\n", encoding="utf-8")
    write_manifest(out / "run-manifest", "eval",
                   {"checkpoint": str(args.checkpoint), "data": str(args.data),
                    "split": args.split, "tol": args.tol})
    print(f"feasibility {m.feasibility_pct:.1f}%  cost gap {m.cost_gap_pct:.2f}%  "
          f"MSE {m.mse:.4g}  time {m.time_ms:.4f} ms")


def cmd_bench(args) -> None:
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "run-manifest", "bench", {k: v for k, v in cfg.items()
                                                   if k != "output_dir"})

    def progress(k, total, row):
        log.info("[%d/%d] %s: %s", k, total, row["cell"], row["status"])

    report = run_experiment(cfg, out, progress)
    sys.stdout.write(report.summary)


def _read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def lambda_feasibility(rows: list[dict], x: str = "lambda_max",
                       y: str = "feasibility_pct") -> list[tuple[float, float]]:
    """Mean of ``y`` over seeds for each value of ``x`` (ok lpae rows, clean)."""
    groups: dict[float, list[float]] = {}
    for r in rows:
        if r.get("status") != "ok" or r.get("method") != "lpae":
            continue
        if r.get("corruption", "clean") != "clean" or r.get(x) in (None, ""):
            continue
        groups.setdefault(float(r[x]), []).append(float(r[y]))
    return [(k, float(np.mean(v))) for k, v in sorted(groups.items())]


def cmd_export_plots(args) -> None:
    rows = _read_rows(args.metrics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve_path = out / "lambda_feasibility.csv"
    selected_path = out / "selected.csv"
    curve = lambda_feasibility(rows, args.x, args.y)
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        if curve:
            w = csv.writer(fh)
            w.writerow([args.x, args.y])
            w.writerows([repr(a), repr(b)] for a, b in curve)
    columns = args.columns.split(",") if args.columns else list(CSV_FIELDS)
    if rows:
        missing = [c for c in columns if c not in rows[0]]
        if missing:
            raise UsageError(f"unknown columns {missing}")
    with open(selected_path, "w", newline="", encoding="utf-8") as fh:
        if rows:
            w = csv.writer(fh)
            w.writerow(columns)
            w.writerows([r[c] for c in columns] for r in rows)
    write_manifest(out / "run-manifest", "export-plots",
                   {"metrics": str(args.metrics), "columns": columns,
                    "x": args.x, "y": args.y})
    print(f"wrote {curve_path} ({len(curve)} points) and {selected_path}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset file")
    g.add_argument("--count", type=_positive_int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=PRESETS, default="hospital")
    g.add_argument("--out", default="data/hospital.txt")
    g.add_argument("--csv", help="also export features as CSV")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train LP-AE on a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file of training options")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="runs/train")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("eval", "all"), default="eval")
    e.add_argument("--tol", type=float, default=1e-6)
    e.add_argument("--out", default="runs/eval")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run an experiment sweep")
    b.add_argument("--config", required=True)
    b.add_argument("--seed", type=int, help="run a single seed instead of the list")
    b.add_argument("--out", default="runs/bench")
    b.set_defaults(func=cmd_bench)

    x = sub.add_parser("export-plots", help="turn metrics.csv into plot data")
    x.add_argument("metrics")
    x.add_argument("--out", default="runs/plots")
    x.add_argument("--columns", help="comma-separated metrics.csv columns to keep")
    x.add_argument("--x", default="lambda_max", choices=SWEEP_AXES)
    x.add_argument("--y", default="feasibility_pct")
    x.set_defaults(func=cmd_export_plots)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"lpae {args.command}: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"lpae {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
