"""Counting metrics: MAE, MSE (root mean square), NAE and GAME(L)."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

GAME_LEVELS = (0, 1, 2)


def _edges(n, level):
    # Halve every interval level times; odd remainders go to the later half so
    # patches nest across levels and equal a uniform split when 2^L divides n.
    edges = [0, n]
    for _ in range(level):
        nxt = [0]
        for a, b in zip(edges[:-1], edges[1:]):
            nxt += [a + (b - a) // 2, b]
        edges = nxt
    return edges


def game(pred, gt, level):
    """Sum over a 2^L x 2^L patch grid of |patch count(pred) - patch count(gt)|."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"game needs two equal 2-d maps, got {pred.shape} and {gt.shape}")
    if level < 0:
        raise ValueError("GAME level must be nonnegative")
    parts = 2 ** level
    h, w = pred.shape
    if parts > min(h, w):
        raise ValueError(f"GAME level {level} needs at least {parts} cells per side, map is {h}x{w}")
    if level == 0:
        return abs(float(pred.sum()) - float(gt.sum()))
    re, ce = _edges(h, level), _edges(w, level)
    total = 0.0
    for a in range(parts):
        for b in range(parts):
            sl = (slice(re[a], re[a + 1]), slice(ce[b], ce[b + 1]))
            total += abs(float(pred[sl].sum()) - float(gt[sl].sum()))
    return total


@dataclass
class MetricsReport:
    n: int
    mae: float
    mse: float
    nae: float
    game: dict
    rows: list = field(default_factory=list)  # (predicted count, true count, game0, game1, ...)
    nae_excluded: list = field(default_factory=list)

    def summary(self):
        out = {"n": self.n, "mae": self.mae, "mse": self.mse, "nae": self.nae}
        for lvl in sorted(self.game):
            out[f"game{lvl}"] = self.game[lvl]
        return out


def aggregate(samples, levels=GAME_LEVELS):
    """Metrics over ``(pred map, gt map)`` pairs; counts are map sums."""
    samples = list(samples)
    if not samples:
        raise ValueError("aggregate needs at least one sample")
    rows, excluded = [], []
    abs_err, sq_err, rel_err = 0.0, 0.0, []
    games = {lvl: 0.0 for lvl in levels}
    for i, (pred, gt) in enumerate(samples):
        c = float(np.asarray(pred, dtype=np.float64).sum())
        c_hat = float(np.asarray(gt, dtype=np.float64).sum())
        g = {lvl: game(pred, gt, lvl) for lvl in levels}
        # sharing the GAME(0) value keeps game[0] == mae exactly
        err = g[0] if 0 in g else abs(c - c_hat)
        abs_err += err
        sq_err += (c - c_hat) ** 2
        if c_hat == 0:
            excluded.append(i)
        else:
            rel_err.append(err / c_hat)
        for lvl in levels:
            games[lvl] += g[lvl]
        rows.append((c, c_hat) + tuple(g[lvl] for lvl in levels))
    n = len(samples)
    nae = sum(rel_err) / len(rel_err) if rel_err else float("nan")
    return MetricsReport(n, abs_err / n, math.sqrt(sq_err / n), nae,
                         {lvl: games[lvl] / n for lvl in levels}, rows, excluded)


def write_csv(report, path, config_hash=""):
    """Summary row followed by per-sample rows."""
    levels = sorted(report.game)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["row", "n", "mae", "mse", "nae"] + [f"game{lvl}" for lvl in levels]
                    + ["pred_count", "true_count", "config_hash"])
        wr.writerow(["summary", report.n, repr(report.mae), repr(report.mse), repr(report.nae)]
                    + [repr(report.game[lvl]) for lvl in levels] + ["", "", config_hash])
        for i, row in enumerate(report.rows):
            c, c_hat, *g = row
            nae = "" if c_hat == 0 else repr(g[0] / c_hat)
            wr.writerow([f"sample{i}", 1, repr(g[0]), repr(g[0]), nae] + [repr(x) for x in g]
                        + [repr(c), repr(c_hat), config_hash])
