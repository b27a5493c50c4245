"""Regenerate the shipped test fixtures.

    python3 tests/fixtures/build_fixtures.py

Writes ``data/`` (tiny dataset), ``checkpoint.mvct`` (short MVPR run) and
``eval_test.csv`` (golden evaluation of that checkpoint on the test split).
"""

import shutil
import tempfile
from pathlib import Path

from mvrank.config import load_config
from mvrank.dataset import Dataset, make_dataset
from mvrank.evaluation import evaluate, load_checkpoint
from mvrank.metrics import write_csv
from mvrank.trainer import train

HERE = Path(__file__).resolve().parent


def build(dest=HERE):
    dest = Path(dest)
    cfg = load_config(HERE / "tiny.yaml")
    data = dest / "data"
    if data.exists():
        shutil.rmtree(data)
    make_dataset(cfg.data, data)
    ds = Dataset(data)
    with tempfile.TemporaryDirectory() as tmp:
        train(cfg, ds, tmp)
        shutil.copy(Path(tmp) / "final.mvct", dest / "checkpoint.mvct")
    params, meta = load_checkpoint(dest / "checkpoint.mvct")
    write_csv(evaluate(params, ds, "test"), dest / "eval_test.csv", meta["config_hash"])


if __name__ == "__main__":
    build()
    print(f"fixtures written to {HERE}")
