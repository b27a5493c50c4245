"""On-disk multi-view datasets: ``manifest.json`` plus one container per frame."""

import json
import math
from pathlib import Path

import numpy as np

from . import container
from .config import DataConfig, config_hash, to_dict
from .scene import CameraModel, GridSpec, MultiViewSample, generate_scene, make_rig, make_sample

MANIFEST = "manifest.json"


class DatasetError(RuntimeError):
    """Missing, unreadable, or inconsistent dataset."""


def labeled_count(n, rate):
    return int(math.ceil(round(rate * n / 100.0, 9)))


def split_labels(frames_by_scene, rate, seed):
    """Per-scene seeded shuffle; the first ceil(rate% * n) frames are labeled.

    ``frames_by_scene`` maps scene id -> list of frame ids. Returns sorted
    (labeled, unlabeled) id lists.
    """
    if not 0 < rate <= 100:
        raise ValueError(f"label rate must lie in (0, 100], got {rate}")
    labeled, unlabeled = [], []
    for scene_id in sorted(frames_by_scene):
        ids = list(frames_by_scene[scene_id])
        n_lab = labeled_count(len(ids), rate)
        if ids and n_lab == 0:
            raise ValueError(f"label rate {rate}% leaves scene {scene_id} without labeled frames")
        order = np.random.default_rng([int(seed), 3, int(scene_id)]).permutation(len(ids))
        chosen = set(order[:n_lab].tolist())
        for pos, fid in enumerate(ids):
            (labeled if pos in chosen else unlabeled).append(fid)
    return sorted(labeled), sorted(unlabeled)


def _frame_name(scene_id, frame):
    return f"s{scene_id:02d}_f{frame:03d}.mvct"


def make_dataset(config: DataConfig, out_dir):
    """Generate a full dataset under ``out_dir``; returns the manifest dict."""
    out = Path(out_dir)
    try:
        (out / "frames").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {out}: {exc}") from None
    grid = config.grid
    n_test = int(round(config.frames_per_scene * config.test_fraction))
    n_train = config.frames_per_scene - n_test
    if n_train < 1:
        raise ValueError("test_fraction leaves no training frames")
    scenes, frames = [], []
    train_by_scene = {}
    for s in range(config.scenes):
        cams = make_rig(config.rig, grid, [config.seed, 1, s])
        scenes.append({"id": s, "cameras": [c.to_dict() for c in cams]})
        train_by_scene[s] = []
        for f in range(config.frames_per_scene):
            fid = len(frames)
            scene = generate_scene(config.scene, grid, [config.seed, 2, s, f])
            sample = make_sample(scene, cams, grid, config.render, False, s, f)
            name = _frame_name(s, f)
            entries = {
                "views": sample.views.astype(np.float32),
                "gt_density": sample.gt_density,
                "coverage": sample.coverage.astype(np.uint8),
                "people": scene.people,
            }
            try:
                container.write(out / "frames" / name, entries)
            except OSError as exc:
                raise DatasetError(f"cannot write {out / 'frames' / name}: {exc}") from None
            split = "train" if f < n_train else "test"
            if split == "train":
                train_by_scene[s].append(fid)
            frames.append({"id": fid, "scene": s, "frame": f, "file": f"frames/{name}",
                           "split": split, "labeled": split == "test",
                           "count": sample.extras["count"], "total": sample.extras["total"]})
    labeled, _ = split_labels(train_by_scene, config.label_rate, config.seed)
    for fid in labeled:
        frames[fid]["labeled"] = True
    manifest = {
        "format": "mvrank-dataset",
        "version": 1,
        "config_hash": config_hash(config),
        "config": to_dict(config),
        "grid": to_dict(grid),
        "num_views": config.rig.num_views,
        "image_size": list(config.rig.image_size),
        "label_rate": config.label_rate,
        "scenes": scenes,
        "frames": frames,
    }
    try:
        (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write manifest: {exc}") from None
    return manifest


class Dataset:
    """Read access to a generated dataset; frames are loaded lazily and cached."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST
        try:
            self.manifest = json.loads(path.read_text())
        except FileNotFoundError:
            raise DatasetError(f"no dataset manifest at {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"unreadable manifest {path}: {exc}") from None
        if self.manifest.get("format") != "mvrank-dataset":
            raise DatasetError(f"{path} is not an mvrank dataset manifest")
        self.grid = GridSpec(**self.manifest["grid"])
        self.num_views = int(self.manifest["num_views"])
        self.image_size = tuple(self.manifest["image_size"])
        self.cameras = {sc["id"]: [CameraModel.from_dict(c) for c in sc["cameras"]]
                        for sc in self.manifest["scenes"]}
        self.frames = self.manifest["frames"]
        self._cache = {}

    @property
    def config_hash(self):
        return self.manifest["config_hash"]

    def split(self, name):
        if name == "all":
            return [f["id"] for f in self.frames]
        if name in ("labeled", "unlabeled"):
            want = name == "labeled"
            return [f["id"] for f in self.frames if f["split"] == "train" and f["labeled"] == want]
        ids = [f["id"] for f in self.frames if f["split"] == name]
        if not ids:
            raise KeyError(f"dataset has no split {name!r}")
        return ids

    def frames_by_scene(self, split="train"):
        out = {}
        for fid in self.split(split):
            out.setdefault(self.frames[fid]["scene"], []).append(fid)
        return out

    def sample(self, fid, labeled=None):
        """The frame as a :class:`MultiViewSample`; ``labeled`` overrides the manifest flag."""
        rec = self.frames[fid]
        entries = self._cache.get(fid)
        if entries is None:
            try:
                entries = container.read(self.root / rec["file"])
            except FileNotFoundError:
                raise DatasetError(f"missing frame file {rec['file']}") from None
            self._cache[fid] = entries
        flag = rec["labeled"] if labeled is None else labeled
        return MultiViewSample(entries["views"], self.cameras[rec["scene"]], entries["gt_density"],
                               entries["coverage"].astype(np.float64), bool(flag), rec["scene"],
                               rec["frame"], self.grid, {"count": rec["count"], "id": fid})

    def __len__(self):
        return len(self.frames)
