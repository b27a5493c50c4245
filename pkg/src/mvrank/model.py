"""Multi-view counting network.

A shared per-view extractor, projection onto the ground plane, fusion of
view-subset prefixes, one decoder per subset cardinality, and a single
uncertainty head applied to every decoder's first hidden activation.
"""

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .projection import build_sampling_grid, ground_to_image_homography, project_feature

FUSIONS = ("concat", "add", "max")
ACTIVATIONS = ("linear", "relu")


@dataclass(frozen=True)
class ModelConfig:
    extractor_channels: tuple = (16, 16, 32)
    pool_after: int = 2  # pool once, after this many extractor convs
    in_channels: int = 1
    use_pyramid: bool = False
    base_channels: int = 32
    fusion: str = "concat"
    num_views: int = 3
    decoder_depth: int = 4
    uncertainty_depth: int = 3
    density_activation: str = "linear"
    uncertainty_activation: str = "linear"
    dtype: str = "float64"

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        for act in (self.density_activation, self.uncertainty_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"activation must be one of {ACTIVATIONS}, got {act!r}")
        if self.extractor_channels[-1] != self.base_channels:
            raise ValueError("the last extractor width must equal base_channels")
        if not 0 < self.pool_after < len(self.extractor_channels) + 1:
            raise ValueError("pool_after must fall inside the extractor")
        if self.decoder_depth < 2 or self.uncertainty_depth < 2:
            raise ValueError("decoder and uncertainty head need at least two layers")
        if self.base_channels >> (max(self.decoder_depth, self.uncertainty_depth) - 2) < 1:
            raise ValueError("base_channels too small for the requested depth")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.num_views < 1:
            raise ValueError("num_views must be positive")

    @property
    def feature_stride(self):
        return 2

    def decoder_in_channels(self, j):
        return self.base_channels * j if self.fusion == "concat" else self.base_channels

    def layer_shapes(self):
        """Ordered ``name -> weight shape`` for every conv layer."""
        shapes = {}
        cin = self.in_channels
        for i, cout in enumerate(self.extractor_channels, start=1):
            shapes[f"extractor.conv{i}"] = (cout, cin, 3, 3)
            cin = cout
        if self.use_pyramid:
            shapes["extractor.reduce"] = (self.base_channels, 2 * self.base_channels, 1, 1)
        c = self.base_channels
        for j in range(1, self.num_views + 1):
            cin = self.decoder_in_channels(j)
            widths = [c >> i for i in range(self.decoder_depth - 1)]
            for i, cout in enumerate(widths, start=1):
                shapes[f"decoder{j}.conv{i}"] = (cout, cin, 3, 3)
                cin = cout
            shapes[f"decoder{j}.conv{self.decoder_depth}"] = (1, cin, 1, 1)
        cin = c
        widths = [c >> i for i in range(1, self.uncertainty_depth)]
        for i, cout in enumerate(widths, start=1):
            shapes[f"uncertainty.conv{i}"] = (cout, cin, 3, 3)
            cin = cout
        shapes[f"uncertainty.conv{self.uncertainty_depth}"] = (1, cin, 1, 1)
        return shapes

    def to_dict(self):
        return asdict(self)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def group(self, prefix):
        """Parameters whose name starts with ``prefix + '.'``."""
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}

    def count(self):
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self):
        return ModelParams(self.config, {
            k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()})


def init_model(config, seed):
    """Fan-in scaled uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    tensors = {}
    for name, shape in config.layer_shapes().items():
        fan_in = shape[1] * shape[2] * shape[3]
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        tensors[f"{name}.weight"] = Tensor(w, requires_grad=True, name=f"{name}.weight")
        tensors[f"{name}.bias"] = Tensor(np.zeros(shape[0], dtype=dtype), requires_grad=True,
                                         name=f"{name}.bias")
    return ModelParams(config, tensors)


def _conv(params, name, x):
    return ad.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"])


def extract_features(params, image):
    """Shared extractor: 3x3 conv + relu stack with one 2x2 pool."""
    cfg = params.config
    x = image if isinstance(image, Tensor) else Tensor(image, dtype=cfg.dtype)
    for i in range(1, len(cfg.extractor_channels) + 1):
        x = ad.relu(_conv(params, f"extractor.conv{i}", x))
        if i == cfg.pool_after:
            x = ad.maxpool2x2(x)
    if cfg.use_pyramid:
        _, h, w = x.shape
        if h % 4 == 0 and w % 4 == 0:
            coarse = ad.maxpool2x2(x)
            up = ad.bilinear_grid_sample(coarse, ad.ops.upsample_grid(h // 2, w // 2, 2))
        else:
            up = x
        x = ad.relu(_conv(params, "extractor.reduce", ad.concat([x, up], axis=0)))
    return x


@lru_cache(maxsize=512)
def sampling_grid_for(camera, grid, stride):
    H = ground_to_image_homography(camera, grid)
    return build_sampling_grid(H, grid, camera.image_size, stride)


def fuse(projected, mode):
    if mode == "concat":
        return ad.concat(projected, axis=0) if len(projected) > 1 else projected[0]
    out = projected[0]
    for p in projected[1:]:
        out = ad.add(out, p) if mode == "add" else ad.maximum(out, p)
    return out


def _head_out(x, activation):
    x = ad.reshape(x, x.shape[1:])
    return ad.relu(x) if activation == "relu" else x


def decode(params, j, fused):
    """Run decoder ``j``; returns (density map, first hidden activation)."""
    cfg = params.config
    hidden = ad.relu(_conv(params, f"decoder{j}.conv1", fused))
    x = hidden
    for i in range(2, cfg.decoder_depth):
        x = ad.relu(_conv(params, f"decoder{j}.conv{i}", x))
    x = _conv(params, f"decoder{j}.conv{cfg.decoder_depth}", x)
    return _head_out(x, cfg.density_activation), hidden


def estimate_uncertainty(params, hidden):
    cfg = params.config
    x = hidden
    for i in range(1, cfg.uncertainty_depth):
        x = ad.relu(_conv(params, f"uncertainty.conv{i}", x))
    x = _conv(params, f"uncertainty.conv{cfg.uncertainty_depth}", x)
    return _head_out(x, cfg.uncertainty_activation)


@dataclass
class ForwardCache:
    permutation: tuple
    subsets: dict  # j -> tuple of view indices (prefix of the permutation)
    features: list
    projected: list
    fused: dict
    hidden: dict
    density: dict
    uncertainty: dict


def forward_all(params, sample, permutation=None, cardinalities=None, uncertainty=True):
    """Predict density (and uncertainty) maps for every prefix of ``permutation``."""
    cfg = params.config
    k = cfg.num_views
    if sample.num_views != k:
        raise ValueError(f"model expects {k} views, sample has {sample.num_views}")
    perm = tuple(range(k)) if permutation is None else tuple(int(i) for i in permutation)
    if sorted(perm) != list(range(k)):
        raise ValueError(f"{perm} is not a permutation of {k} views")
    js = tuple(range(1, k + 1)) if cardinalities is None else tuple(cardinalities)
    need = max(js)
    grid = sample.grid
    features, projected = [None] * k, [None] * k
    for i in perm[:need]:
        features[i] = extract_features(params, Tensor(sample.views[i], dtype=cfg.dtype))
        sg = sampling_grid_for(sample.cameras[i], grid, cfg.feature_stride)
        projected[i] = project_feature(features[i], sg)
    cache = ForwardCache(perm, {}, features, projected, {}, {}, {}, {})
    for j in js:
        subset = perm[:j]
        cache.subsets[j] = subset
        cache.fused[j] = fuse([projected[i] for i in subset], cfg.fusion)
        cache.density[j], cache.hidden[j] = decode(params, j, cache.fused[j])
        if uncertainty:
            cache.uncertainty[j] = estimate_uncertainty(params, cache.hidden[j])
    return cache


def count(density):
    """People count of a density map: the sum over all cells."""
    data = density.data if isinstance(density, Tensor) else np.asarray(density)
    return float(data.sum())
