"""Checkpoint I/O and evaluation of trained models on dataset splits."""

import json

import numpy as np

from . import container
from .autodiff import Tensor
from .config import from_dict, to_dict
from .losses import prediction_violations, uncertainty_violations
from .metrics import aggregate
from .model import ModelConfig, ModelParams, forward_all

META = "__meta__"


class CheckpointMismatch(ValueError):
    """Checkpoint and dataset disagree on geometry or view count."""


def save_checkpoint(path, params, meta=None):
    entries = {name: t.data for name, t in params.items()}
    info = {"model": to_dict(params.config)}
    info.update(meta or {})
    entries[META] = np.frombuffer(json.dumps(info, sort_keys=True).encode(), dtype=np.uint8)
    container.write(path, entries)


def load_checkpoint(path):
    """Returns (params, meta dict)."""
    entries = container.read(path)
    if META not in entries:
        raise container.ContainerError(f"{path}: checkpoint has no metadata entry")
    meta = json.loads(entries.pop(META).tobytes().decode())
    cfg = from_dict(ModelConfig, meta["model"])
    expected = cfg.layer_shapes()
    tensors = {}
    for name, shape in expected.items():
        for part, shp in (("weight", shape), ("bias", (shape[0],))):
            key = f"{name}.{part}"
            if key not in entries or entries[key].shape != shp:
                raise container.ContainerError(f"{path}: missing or misshapen tensor {key}")
            tensors[key] = Tensor(entries[key].astype(cfg.dtype), requires_grad=True, name=key)
    return ModelParams(cfg, tensors), meta


def check_compatible(meta, dataset):
    model = meta["model"]
    if model["num_views"] != dataset.num_views:
        raise CheckpointMismatch(f"checkpoint expects {model['num_views']} views, "
                                 f"dataset has {dataset.num_views}")
    grid = meta.get("grid")
    if grid is not None and grid != to_dict(dataset.grid):
        raise CheckpointMismatch(f"checkpoint grid {grid} differs from dataset grid "
                                 f"{to_dict(dataset.grid)}")
    size = meta.get("image_size")
    if size is not None and list(size) != list(dataset.image_size):
        raise CheckpointMismatch(f"checkpoint image size {size} differs from dataset "
                                 f"{list(dataset.image_size)}")


def predict(params, sample):
    """All-view density map under the identity view order."""
    k = params.config.num_views
    cache = forward_all(params, sample, None, cardinalities=(k,), uncertainty=False)
    return cache.density[k].data


def evaluate(params, dataset, split="test"):
    """Metrics of the all-view prediction over a split."""
    pairs = [(predict(params, dataset.sample(fid)), dataset.sample(fid).gt_density)
             for fid in dataset.split(split)]
    return aggregate(pairs)


def probe_violations(params, samples, pairs, uncertainty=False):
    """Mean ranking-violation rates over probe samples (identity view order)."""
    sums = {}
    for s in samples:
        cache = forward_all(params, s, None, uncertainty=uncertainty)
        rates = prediction_violations(cache, pairs)
        if uncertainty:
            rates.update(uncertainty_violations(cache, s.coverage, pairs))
        for key, v in rates.items():
            sums[key] = sums.get(key, 0.0) + v
    return {key: v / len(samples) for key, v in sums.items()} if samples else {}


def uncertainty_error_correlation(params, samples):
    """Per-sample Pearson correlation between the all-view uncertainty map and
    the all-view absolute error map."""
    k = params.config.num_views
    out = []
    for s in samples:
        cache = forward_all(params, s, None, cardinalities=(k,), uncertainty=True)
        u = cache.uncertainty[k].data.ravel()
        err = np.abs(cache.density[k].data - s.gt_density).ravel()
        if u.std() == 0 or err.std() == 0:
            out.append(0.0)
        else:
            out.append(float(np.corrcoef(u, err)[0, 1]))
    return out
