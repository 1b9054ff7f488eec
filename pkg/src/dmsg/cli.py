"""Command-line entry point: ``dmsg synth | run | report``.

Exit codes: 0 success, 2 usage / config / dataset errors, 3 training divergence.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import MODES, ConfigError, TrainConfig, load_config, parse_overrides
from .graph import GraphFormatError, load_graph, save_graph, synth_growing_graph
from .trainer import TrainingDivergence, aa_af, read_accuracy_matrix, run_sequence, save_result

OUTPUT_ROOT_ENV = "DMSG_OUTPUT_ROOT"

log = logging.getLogger("dmsg")


class UsageError(Exception):
    """Bad input from the command line; reported with exit code 2."""


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _probability(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a probability in [0, 1], got {text}")
    return v


def cmd_synth(args):
    src = synth_growing_graph(args.classes, args.per_class, args.feature_dim,
                              args.intra_p, args.inter_p, args.sep, seed=args.seed)
    try:
        save_graph(src, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write dataset to {args.out}: {exc}") from None
    print(f"wrote {src.node_count} nodes, {len(src.edges)} edges, "
          f"{len(np.unique(src.labels))} classes to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _run_id(config_text, dataset, mode, seed):
    h = hashlib.sha1()
    for part in (config_text, str(Path(dataset).resolve()), mode, str(seed),
                 str(time.time_ns()), str(os.getpid())):
        h.update(part.encode())
        h.update(b"\0")
    return h.hexdigest()[:12]


def _make_run_dir(root, mode, seed, run_id):
    d = Path(root) / f"{mode}-seed{seed}-{run_id}"
    d.mkdir(parents=True, exist_ok=False)
    return d


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key] = value
    try:
        return parse_overrides(out)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _load_inputs(args):
    if args.config is not None:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
        config_text = Path(args.config).read_text(encoding="utf-8")
    else:
        cfg, config_text = TrainConfig(), ""
    overrides = _overrides(args.set)
    if overrides:
        try:
            cfg = cfg.replace(**overrides)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        config_text += "\n" + "\n".join(args.set)
    d = Path(args.dataset)
    for name in ("edges.tsv", "features.tsv", "labels.tsv"):
        if not (d / name).is_file():
            raise UsageError(f"missing dataset file: {d / name}")
    try:
        src = load_graph(d, class_order=cfg.class_order)
    except (GraphFormatError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg, config_text, src


def cmd_run(args):
    cfg, config_text, src = _load_inputs(args)
    modes = MODES if args.mode == "all" else (args.mode or cfg.mode,)
    seed = cfg.seed if args.seed is None else args.seed
    root = args.out or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
    for mode in modes:
        try:
            run_cfg = cfg.replace(mode=mode, seed=seed)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        run_id = _run_id(config_text, args.dataset, mode, seed)
        run_dir = _make_run_dir(root, mode, seed, run_id)
        manifest = {
            "run_id": run_id,
            "config_path": None if args.config is None else str(Path(args.config).resolve()),
            "dataset_path": str(Path(args.dataset).resolve()),
            "output_dir": str(run_dir.resolve()),
            "mode": mode,
            "seed": seed,
            "config": run_cfg.to_dict(),
            "version": __version__,
            "started_at": _now(),
            "finished_at": None,
        }
        mpath = run_dir / "manifest.json"
        mpath.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        ckpt = None
        if run_cfg.save_checkpoints:
            ckpt = run_dir / "checkpoints"
            ckpt.mkdir()
        try:
            result = run_sequence(run_cfg, src, checkpoint_dir=ckpt)
        except TrainingDivergence as exc:
            manifest["status"] = "diverged"
            manifest["error"] = str(exc)
            mpath.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
            print(f"error: training diverged in {run_dir}: {exc}", file=sys.stderr)
            return 3
        save_result(result, run_dir)
        manifest["finished_at"] = _now()
        manifest["status"] = "ok"
        mpath.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        af = "n/a" if result.af is None else f"{result.af:.4f}"
        print(f"{run_dir}\tmode={mode}\tseed={seed}\tAA={result.aa:.4f}\tAF={af}")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _read_run(d):
    d = Path(d)
    try:
        metrics = json.loads((d / "metrics.json").read_text(encoding="utf-8"))
        rows = read_accuracy_matrix(d / "accuracy_matrix.csv")
        aa, af = metrics["AA"], metrics["AF"]
        mode, seed = metrics["mode"], metrics["seed"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"malformed run directory {d}: {exc}") from None
    return {"dir": str(d), "mode": mode, "seed": seed, "AA": aa, "AF": af, "rows": rows}


def aa_curve(rows):
    """AA after each task t: the mean of row t of the accuracy matrix."""
    return [aa_af(rows[:t])[0] for t in range(1, len(rows) + 1)]


def cmd_report(args):
    runs = sorted((_read_run(d) for d in args.runs), key=lambda r: (r["mode"], r["seed"], r["dir"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("mode\tseed\tAA\tAF\trun")
    for r in runs:
        af = "n/a" if r["AF"] is None else f"{r['AF']:.4f}"
        print(f"{r['mode']}\t{r['seed']}\t{r['AA']:.4f}\t{af}\t{r['dir']}")
    with open(out / "aa_curve.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "mode", "seed", "task", "AA"])
        for r in runs:
            for t, v in enumerate(aa_curve(r["rows"]), start=1):
                w.writerow([r["dir"], r["mode"], r["seed"], t, repr(v)])
    with open(out / "accuracy_heatmap.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "mode", "seed", "after_task", "on_task", "accuracy"])
        for r in runs:
            for t, row in enumerate(r["rows"], start=1):
                for j, v in enumerate(row, start=1):
                    w.writerow([r["dir"], r["mode"], r["seed"], t, j, repr(v)])
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="dmsg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-task progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic growing-graph dataset")
    s.add_argument("--classes", type=_positive_int, default=6)
    s.add_argument("--per-class", type=_positive_int, default=100)
    s.add_argument("--feature-dim", type=_positive_int, default=16)
    s.add_argument("--intra-p", type=_probability, default=0.05)
    s.add_argument("--inter-p", type=_probability, default=0.005)
    s.add_argument("--sep", type=float, default=4.0, help="class separation (>= 0)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="dataset directory")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="train over the task sequence and write run outputs")
    r.add_argument("--config", help="config file (defaults apply when omitted)")
    r.add_argument("--dataset", required=True, help="dataset directory")
    r.add_argument("--mode", choices=MODES + ("all",), help="overrides the config; 'all' runs every mode")
    r.add_argument("--seed", type=int)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")
    r.add_argument("--out", help=f"output root (default: ${OUTPUT_ROOT_ENV} or ./runs)")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="summarise run directories")
    rp.add_argument("runs", nargs="+", help="run directories")
    rp.add_argument("--out", default=".", help="directory for aa_curve.csv and accuracy_heatmap.csv")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and args.sep < 0:
        parser.error("--sep must be >= 0")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
