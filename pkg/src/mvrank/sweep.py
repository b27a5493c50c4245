"""Single-axis ablation sweeps over an experiment config."""

import csv
from dataclasses import replace
from pathlib import Path

from .config import config_hash, replace_path
from .trainer import train

AXES = {
    "beta": [0.0, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2],
    # (eta, gamma)
    "weights": [(0.0, 1e-3), (1e-3, 0.0), (1e-1, 1e-3), (1e-2, 1e-3), (1e-3, 1e-1),
                (1e-3, 1e-2), (1e-3, 1e-3)],
    "schedule": ["random", "fixed", "simultaneous"],
    "fusion": ["add", "max", "concat"],
    "rate": [5.0, 10.0, 20.0],
}
SUMMARY_COLUMNS = ["axis", "value", "seed", "mode", "n", "mae", "mse", "nae",
                   "game0", "game1", "game2", "config_hash"]
PLOT_METRICS = ("mae", "mse", "nae", "game0", "game1", "game2")


def cell_config(config, axis, value):
    """Config for one sweep cell."""
    if axis == "beta":
        cfg = replace_path(config, "train.weights.beta", float(value))
        return replace_path(cfg, "train.mode", "mvpr")
    if axis == "weights":
        eta, gamma = value
        cfg = replace_path(config, "train.weights.eta", float(eta))
        cfg = replace_path(cfg, "train.weights.gamma", float(gamma))
        return replace_path(cfg, "train.mode", "mvur")
    if axis == "schedule":
        return replace_path(config, "train.schedule", value)
    if axis == "fusion":
        return replace_path(config, "model.fusion", value)
    if axis == "rate":
        return replace_path(config, "train.label_rate", float(value))
    raise KeyError(f"unknown sweep axis {axis!r}; expected one of {sorted(AXES)}")


def value_label(value):
    if isinstance(value, tuple):
        return "/".join(repr(v) for v in value)
    return value if isinstance(value, str) else repr(value)


def run_sweep(config, axis, dataset, out_dir, seeds=(0,), values=None):
    """Train every (value, seed) cell; writes ``summary.csv`` and one
    ``plot_<metric>.csv`` per metric. Returns the summary rows."""
    if axis not in AXES:
        raise KeyError(f"unknown sweep axis {axis!r}; expected one of {sorted(AXES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in AXES[axis] if values is None else values:
        for seed in seeds:
            cfg = cell_config(config, axis, value)
            cfg = replace(cfg, train=replace(cfg.train, init_seed=seed, schedule_seed=seed,
                                             split_seed=seed))
            result = train(cfg, dataset)
            row = {"axis": axis, "value": value_label(value), "seed": seed,
                   "mode": cfg.train.mode, "config_hash": config_hash(cfg)}
            row.update(result.report.summary())
            rows.append(row)
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, SUMMARY_COLUMNS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    for metric in PLOT_METRICS:
        with open(out / f"plot_{metric}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y", "seed"])
            for r in rows:
                wr.writerow([r["value"], repr(r[metric]), r["seed"]])
    return rows
