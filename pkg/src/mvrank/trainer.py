"""Semi-supervised training loop: labeled warm-up, then one of three
labeled/unlabeled schedules, with per-epoch evaluation and checkpoints."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tape, adam_step
from .config import ExperimentConfig, to_dict
from .dataset import split_labels
from .evaluation import evaluate, probe_violations, save_checkpoint
from .losses import LossReport, total_loss
from .model import forward_all, init_model

LABELED, UNLABELED, BOTH = "labeled", "unlabeled", "both"
LOSS_COLUMNS = ("l_label", "l_pre_rank", "l_un_label", "l_un_rank", "total")


class NumericError(FloatingPointError):
    """A loss or gradient became non-finite during training."""


@dataclass
class TrainState:
    epoch: int = 0  # zero-based epoch currently running
    iteration: int = 0
    warmup_epochs: int = 0
    has_unlabeled: bool = True
    calls: int = 0  # post-warm-up branch decisions made so far


def next_branch(state, schedule, rng):
    """Which data the next step consumes.

    A coin is tossed on every call so the random stream advances identically
    whatever the schedule or phase.
    """
    coin = rng.random()
    if state.epoch < state.warmup_epochs or not state.has_unlabeled:
        return LABELED
    n = state.calls
    state.calls += 1
    if schedule == "random":
        return LABELED if coin < 0.5 else UNLABELED
    if schedule == "fixed":
        return LABELED if n % 2 == 0 else UNLABELED
    if schedule == "simultaneous":
        return BOTH
    raise ValueError(f"unknown schedule {schedule!r}")


def _check_finite(rep):
    values = [getattr(rep, c) for c in LOSS_COLUMNS]
    if not all(math.isfinite(v) for v in values):
        raise NumericError("non-finite loss: " + ", ".join(
            f"{c}={v!r}" for c, v in zip(LOSS_COLUMNS, values)))


def train_step(params, opt_state, samples, train_cfg, permutations):
    """One optimizer step over ``samples`` (losses summed).

    Unlabeled samples are skipped outright for the baselines. Returns the
    combined :class:`LossReport`; parameters are left untouched when the
    objective has no differentiable term.
    """
    mode = train_cfg.mode
    rep = LossReport()
    with Tape() as tape:
        for sample, perm in zip(samples, permutations):
            if not sample.labeled and mode in ("baseline1", "baseline2"):
                continue
            cache = forward_all(params, sample, perm, uncertainty=mode == "mvur")
            rep = rep + total_loss(cache, sample, train_cfg.weights, mode)
    _check_finite(rep)
    if rep.has_gradient:
        grads = tape.backward(rep.objective).for_params(params.tensors)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
        adam_step(params.tensors, grads, opt_state)
    return rep


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # one dict per iteration
    epochs: list = field(default_factory=list)  # one dict per epoch
    config_hash: str = ""
    labeled: list = field(default_factory=list)
    unlabeled: list = field(default_factory=list)
    probe: list = field(default_factory=list)

    def branch_counts(self):
        out = {LABELED: 0, UNLABELED: 0, BOTH: 0}
        for r in self.rows:
            out[r["branch"]] += 1
        return out


@dataclass
class TrainResult:
    params: object
    log: TrainLog
    report: object  # final test MetricsReport


def _row_columns(pairs, mode):
    cols = ["iter", "epoch", "branch", *LOSS_COLUMNS]
    cols += [f"violation_rate_pair_{a}_{b}" for a, b in pairs]
    if mode == "mvur":
        cols += [f"un_violation_rate_pair_{a}_{b}" for a, b in pairs]
    return cols + ["config_hash"]


def _epoch_columns(pairs, mode):
    cols = ["epoch", "mae", "mse", "nae", "game0", "game1", "game2"]
    cols += [f"probe_violation_rate_pair_{a}_{b}" for a, b in pairs]
    if mode == "mvur":
        cols += [f"probe_un_violation_rate_pair_{a}_{b}" for a, b in pairs]
    return cols + ["config_hash"]


class _CsvLog:
    def __init__(self, path, columns):
        self.columns = columns
        self.fh = open(path, "w", newline="")
        self.wr = csv.DictWriter(self.fh, columns, restval="", extrasaction="ignore")
        self.wr.writeheader()

    def write(self, row):
        self.wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        self.fh.flush()

    def close(self):
        self.fh.close()


def resolve_split(config, dataset):
    """(labeled ids, unlabeled ids) of the training split."""
    rate = config.train.label_rate
    if rate is None:
        return dataset.split("labeled"), _maybe(dataset, "unlabeled")
    return split_labels(dataset.frames_by_scene("train"), rate, config.train.split_seed)


def _maybe(dataset, name):
    try:
        return dataset.split(name)
    except KeyError:
        return []


def _probe_ids(unlabeled, size, seed):
    if not unlabeled:
        return []
    rng = np.random.default_rng([int(seed), 21])
    pick = rng.choice(len(unlabeled), size=min(size, len(unlabeled)), replace=False)
    return sorted(unlabeled[i] for i in pick)


def _check_dataset(config, dataset):
    if config.model.num_views != dataset.num_views:
        raise ValueError(f"model expects {config.model.num_views} views, "
                         f"dataset has {dataset.num_views}")


def train(config: ExperimentConfig, dataset, out_dir=None, epoch_callback=None):
    """Train a model end to end; returns a :class:`TrainResult`.

    With ``out_dir`` the iteration log, epoch log and checkpoints are written
    as training proceeds, so a failure leaves the partial log on disk.
    """
    _check_dataset(config, dataset)
    tc = config.train
    k = config.model.num_views
    _, pairs = tc.weights.resolve(k)
    chash = config.hash()
    labeled, unlabeled = resolve_split(config, dataset)
    if not labeled:
        raise ValueError("training split has no labeled frames")
    probe = _probe_ids(unlabeled, tc.probe_size, tc.split_seed)
    log = TrainLog(config_hash=chash, labeled=list(labeled), unlabeled=list(unlabeled),
                   probe=probe)
    lab_set = set(labeled)

    params = init_model(config.model, tc.init_seed)
    opt = AdamState(lr=tc.lr)
    # separate streams so branch choice, sample choice and view order never
    # perturb one another
    branch_rng = np.random.default_rng([tc.schedule_seed, 11])
    pick_rng = np.random.default_rng([tc.schedule_seed, 12])
    perm_rng = np.random.default_rng([tc.schedule_seed, 13])
    state = TrainState(warmup_epochs=tc.warmup_epochs, has_unlabeled=bool(unlabeled))
    iters_per_epoch = len(labeled) + len(unlabeled)

    out = Path(out_dir) if out_dir is not None else None
    logs = None
    meta = {"grid": to_dict(dataset.grid), "image_size": list(dataset.image_size),
            "config_hash": chash, "dataset_hash": dataset.config_hash, "mode": tc.mode}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logs = (_CsvLog(out / "train_log.csv", _row_columns(pairs, tc.mode)),
                _CsvLog(out / "epoch_log.csv", _epoch_columns(pairs, tc.mode)))
    report = None
    try:
        for epoch in range(tc.epochs):
            state.epoch = epoch
            for _ in range(iters_per_epoch):
                branch = next_branch(state, tc.schedule, branch_rng)
                li = labeled[pick_rng.integers(len(labeled))]
                ui = unlabeled[pick_rng.integers(len(unlabeled))] if unlabeled else None
                perms = (perm_rng.permutation(k), perm_rng.permutation(k))
                chosen = {LABELED: [li], UNLABELED: [ui], BOTH: [li, ui]}[branch]
                samples = [dataset.sample(fid, labeled=fid in lab_set) for fid in chosen]
                rep = train_step(params, opt, samples, tc, perms)
                state.iteration += 1
                row = {"iter": state.iteration, "epoch": epoch + 1, "branch": branch,
                       "config_hash": chash}
                row.update({c: getattr(rep, c) for c in LOSS_COLUMNS})
                for a, b in pairs:
                    if f"pre_{a}_{b}" in rep.violations:
                        row[f"violation_rate_pair_{a}_{b}"] = rep.violations[f"pre_{a}_{b}"]
                    if f"un_{a}_{b}" in rep.violations:
                        row[f"un_violation_rate_pair_{a}_{b}"] = rep.violations[f"un_{a}_{b}"]
                log.rows.append(row)
                if logs:
                    logs[0].write(row)
            last = epoch + 1 == tc.epochs
            ep = {"epoch": epoch + 1, "config_hash": chash}
            if last or (tc.eval_every and (epoch + 1) % tc.eval_every == 0):
                report = evaluate(params, dataset, "test")
                ep.update(report.summary())
                ep["report"] = report
            if probe and (last or epoch + 1 == tc.warmup_epochs
                          or (tc.eval_every and (epoch + 1) % tc.eval_every == 0)):
                rates = probe_violations(params, [dataset.sample(f, labeled=False) for f in probe],
                                         pairs, uncertainty=tc.mode == "mvur")
                for a, b in pairs:
                    ep[f"probe_violation_rate_pair_{a}_{b}"] = rates[f"pre_{a}_{b}"]
                    if f"un_{a}_{b}" in rates:
                        ep[f"probe_un_violation_rate_pair_{a}_{b}"] = rates[f"un_{a}_{b}"]
            log.epochs.append(ep)
            if logs:
                logs[1].write({c: v for c, v in ep.items() if c != "report"})
                if tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
                    save_checkpoint(out / f"epoch_{epoch + 1:03d}.mvct", params,
                                    dict(meta, epoch=epoch + 1))
            if epoch_callback is not None:
                epoch_callback(epoch + 1, params, ep)
        if out is not None:
            save_checkpoint(out / "final.mvct", params, dict(meta, epoch=tc.epochs))
    finally:
        if logs:
            for lg in logs:
                lg.close()
    return TrainResult(params, log, report)
