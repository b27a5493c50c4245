"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data / I/O error,
4 numeric failure.
"""

import argparse
import csv
import sys
from pathlib import Path

from . import gradcheck
from .config import ConfigError, config_hash, dump_config, load_config, replace_path
from .container import ContainerError
from .dataset import Dataset, DatasetError, make_dataset
from .evaluation import CheckpointMismatch, check_compatible, evaluate, load_checkpoint
from .metrics import write_csv
from .sweep import AXES, run_sweep
from .trainer import NumericError, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _config(args):
    try:
        return load_config(args.config)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"config file not found: {args.config}") from None
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None


def _override(cfg, path, value):
    try:
        return replace_path(cfg, path, value)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid value for {path}: {exc}") from None


def _dataset(cfg, data_dir, out):
    """Open ``data_dir``, or generate the configured dataset under ``out/data``."""
    if data_dir is None:
        data_dir = Path(out) / "data"
        make_dataset(cfg.data, data_dir)
    ds = Dataset(data_dir)
    if ds.num_views != cfg.model.num_views:
        raise CliError(EXIT_DATA, f"dataset has {ds.num_views} views, config expects "
                                  f"{cfg.model.num_views}")
    return ds


def cmd_gen_data(args):
    cfg = _config(args)
    manifest = make_dataset(cfg.data, args.out)
    n_lab = sum(f["labeled"] for f in manifest["frames"] if f["split"] == "train")
    n_train = sum(f["split"] == "train" for f in manifest["frames"])
    print(f"dataset {args.out}: {cfg.data.scenes} scenes x {cfg.data.frames_per_scene} frames x "
          f"{manifest['num_views']} views, grid {cfg.data.grid.h}x{cfg.data.grid.w}, "
          f"{n_lab}/{n_train} training frames labeled, config {manifest['config_hash']}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    if args.mode:
        cfg = _override(cfg, "train.mode", args.mode)
    if args.schedule:
        cfg = _override(cfg, "train.schedule", args.schedule)
    ds = _dataset(cfg, args.data, args.out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(f"# config_hash: {config_hash(cfg)}\n" + dump_config(cfg))
    result = train(cfg, ds, out)
    counts = result.log.branch_counts()
    s = result.report.summary()
    print(f"trained {cfg.train.mode}/{cfg.train.schedule} for {cfg.train.epochs} epochs "
          f"({counts['labeled']} labeled, {counts['unlabeled']} unlabeled, {counts['both']} "
          f"simultaneous steps)")
    print("test " + " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                             for k, v in s.items()))
    print(f"checkpoint {out / 'final.mvct'}  config {config_hash(cfg)}")
    return EXIT_OK


def cmd_eval(args):
    params, meta = load_checkpoint(args.checkpoint)
    ds = Dataset(args.data)
    check_compatible(meta, ds)
    try:
        report = evaluate(params, ds, args.split)
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, str(exc.args[0])) from None
    chash = meta.get("config_hash", "")
    out = args.out or str(Path(args.checkpoint).with_suffix("")) + f"_{args.split}.csv"
    write_csv(report, out, chash)
    s = report.summary()
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in s.items()))
    if report.nae_excluded:
        print(f"note: {len(report.nae_excluded)} zero-count samples excluded from nae")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    ok = gradcheck.main(seed=args.seed, trials=args.trials)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_sweep(args):
    cfg = _config(args)
    ds = _dataset(cfg, args.data, args.out)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_sweep(cfg, args.vary, ds, args.out, seeds)
    for r in rows:
        print(f"{r['axis']}={r['value']:<14s} seed={r['seed']} mae={r['mae']:.4f} "
              f"mse={r['mse']:.4f} nae={r['nae']:.4f}")
    print(f"wrote {Path(args.out) / 'summary.csv'}")
    return EXIT_OK


def cmd_toy(args):
    from .toy import median_mae, run_experiment

    cfg = _config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = ("baseline2", "mvpr", "mvur")
    results = run_experiment(cfg, seeds, modes, out,
                             progress=lambda r: print(f"seed {r.seed}: " + " ".join(
                                 f"{m}={r.mae[m]:.4f}" for m in modes), flush=True))
    with open(out / "toy_summary.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", *[f"mae_{m}" for m in modes], "calibration", "config_hash"])
        for r in results:
            wr.writerow([r.seed, *[repr(r.mae[m]) for m in modes], repr(r.calibration),
                         config_hash(cfg)])
    print("median " + " ".join(f"{m}={median_mae(results, m):.4f}" for m in modes))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mvrank", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic multi-view dataset")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None)
    t.add_argument("--data", default=None, help="dataset dir (default: generate under OUT/data)")
    t.add_argument("--mode", choices=["baseline1", "baseline2", "mvpr", "mvur"])
    t.add_argument("--schedule", choices=["random", "fixed", "simultaneous"])
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", default=None, help="CSV path (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=3)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="single-axis ablation sweep")
    s.add_argument("--config", default=None)
    s.add_argument("--data", default=None)
    s.add_argument("--vary", required=True, choices=sorted(AXES))
    s.add_argument("--seeds", default="0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    y = sub.add_parser("toy", help="multi-seed Baseline2 / MVPR / MVUR comparison")
    y.add_argument("--config", default=None)
    y.add_argument("--seeds", default="0,1,2,3,4")
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_toy)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, ContainerError, CheckpointMismatch, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
