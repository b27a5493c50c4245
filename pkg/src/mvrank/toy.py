"""Multi-seed direction-of-effect experiment comparing training modes."""

import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import replace_path
from .dataset import Dataset, make_dataset
from .evaluation import uncertainty_error_correlation
from .trainer import train


def seeded(config, seed):
    """Copy of ``config`` with every seed (data, split, init, schedule) set to ``seed``."""
    cfg = replace_path(config, "data.seed", seed)
    return replace(cfg, train=replace(cfg.train, split_seed=seed, init_seed=seed,
                                      schedule_seed=seed))


@dataclass
class SeedResult:
    seed: int
    mae: dict = field(default_factory=dict)  # mode -> final test MAE
    probe_warmup: dict = field(default_factory=dict)  # mode -> {pair key: rate}
    probe_final: dict = field(default_factory=dict)
    calibration: float | None = None  # median per-sample corr(U_k, |S_k - gt|)
    seconds: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)  # mode -> final test metrics


def _probe(epoch_row, mode):
    prefix = "probe_un_violation_rate_pair_" if mode == "mvur" else "probe_violation_rate_pair_"
    return {k[len(prefix):]: v for k, v in epoch_row.items() if k.startswith(prefix)}


def run_seed(config, seed, modes, root):
    cfg = seeded(config, seed)
    data_dir = Path(root) / f"data_{seed}"
    make_dataset(cfg.data, data_dir)
    ds = Dataset(data_dir)
    res = SeedResult(seed)
    warm = cfg.train.warmup_epochs
    for mode in modes:
        t0 = time.process_time()
        run = train(replace_path(cfg, "train.mode", mode), ds)
        res.seconds[mode] = time.process_time() - t0
        res.mae[mode] = run.report.mae
        res.summary[mode] = run.report.summary()
        by_epoch = {e["epoch"]: e for e in run.log.epochs}
        if warm in by_epoch:
            res.probe_warmup[mode] = _probe(by_epoch[warm], mode)
        res.probe_final[mode] = _probe(by_epoch[cfg.train.epochs], mode)
        if mode == "mvur":
            held_out = [ds.sample(f) for f in ds.split("test")]
            res.calibration = statistics.median(
                uncertainty_error_correlation(run.params, held_out))
    return res


def run_experiment(config, seeds, modes=("baseline2", "mvpr", "mvur"), root="toy_runs",
                   progress=None):
    """Train every mode at every seed; returns a list of :class:`SeedResult`."""
    out = []
    for seed in seeds:
        res = run_seed(config, seed, modes, root)
        if progress is not None:
            progress(res)
        out.append(res)
    return out


def median_mae(results, mode):
    return statistics.median(r.mae[mode] for r in results)
