"""Synthetic multi-view crowd scenes.

People stand on a ground plane observed by a ring of pinhole cameras with
limited fields of view. Each camera therefore sees only part of the crowd,
which is what makes fewer-view fusions see fewer people.
"""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Ground-plane density grid of ``h x w`` cells, origin at world (0, 0)."""

    h: int = 32
    w: int = 32
    meters_per_cell: float = 0.625
    plane_height: float = 1.75

    def __post_init__(self):
        if self.h < 8 or self.w < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.h}x{self.w}")
        if not self.meters_per_cell > 0:
            raise ValueError("meters_per_cell must be positive")

    @property
    def extent(self):
        """(width, height) of the covered ground in meters."""
        return self.w * self.meters_per_cell, self.h * self.meters_per_cell

    def cell_centers(self):
        """World (x, y) of every cell center, arrays shaped ``[h, w]``."""
        xs = (np.arange(self.w) + 0.5) * self.meters_per_cell
        ys = (np.arange(self.h) + 0.5) * self.meters_per_cell
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        return xx, yy

    def cell_of(self, xy):
        """Integer (row, col) cell for each world point in ``xy[N, 2]``."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        col = np.clip(np.floor(xy[:, 0] / self.meters_per_cell), 0, self.w - 1).astype(int)
        row = np.clip(np.floor(xy[:, 1] / self.meters_per_cell), 0, self.h - 1).astype(int)
        return row, col


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera. ``rotation`` maps world axes to camera axes (x right,
    y down, z forward); pixel centers sit at integer (col, row) coordinates."""

    position: tuple
    rotation: tuple
    focal: float
    principal_point: tuple
    image_size: tuple  # (H_img, W_img)

    @classmethod
    def look_at(cls, position, target, focal, image_size, up=(0.0, 0.0, 1.0)):
        pos = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        h_img, w_img = image_size
        pp = ((w_img - 1) / 2.0, (h_img - 1) / 2.0)
        return cls(tuple(pos.tolist()), tuple(map(tuple, rot.tolist())), float(focal),
                   pp, (int(h_img), int(w_img)))

    @property
    def R(self):
        return np.asarray(self.rotation, dtype=np.float64)

    @property
    def K(self):
        cx, cy = self.principal_point
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    @property
    def P(self):
        """3x4 projection matrix K [R | -R c]."""
        R = self.R
        t = -R @ np.asarray(self.position)
        return self.K @ np.hstack([R, t[:, None]])

    def project(self, points):
        """Project world ``points[N, 3]``; returns (col, row, depth) arrays."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = (pts - np.asarray(self.position)) @ self.R.T
        depth = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.focal * cam[:, 0] / depth + self.principal_point[0]
            v = self.focal * cam[:, 1] / depth + self.principal_point[1]
        return u, v, depth

    def sees(self, u, v, depth):
        """True where a projection lands inside the image in front of the camera."""
        h_img, w_img = self.image_size
        with np.errstate(invalid="ignore"):
            return (depth > 0) & (u >= 0) & (u <= w_img - 1) & (v >= 0) & (v <= h_img - 1)

    def to_dict(self):
        return {"position": list(self.position), "rotation": [list(r) for r in self.rotation],
                "focal": self.focal, "principal_point": list(self.principal_point),
                "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["position"]), tuple(tuple(r) for r in d["rotation"]),
                   float(d["focal"]), tuple(d["principal_point"]), tuple(d["image_size"]))


@dataclass(frozen=True)
class SceneConfig:
    count_range: tuple = (10, 40)
    clusters: int = 3
    cluster_sigma: float = 2.5
    cluster_centers: tuple | None = None  # fixed (x, y) centers; None draws them per frame
    person_height: float | None = None  # None: stand exactly at the grid plane height
    height_jitter: float = 0.0
    area_per_person: float = 0.25


@dataclass(frozen=True)
class RigConfig:
    num_views: int = 3
    image_size: tuple = (48, 64)
    ring_radius: float = 0.8  # fraction of the extent's larger side, from its center
    height_range: tuple = (6.0, 9.0)
    coverage_range: tuple = (0.5, 0.7)
    angle_jitter: float = 0.3
    aim_offset: float = 0.15  # look-at point shifted toward the camera, fraction of extent


@dataclass(frozen=True)
class RenderConfig:
    amplitude: float = 1.0
    blob_size: float = 0.35  # meters; blob sigma in pixels = blob_size * focal / depth
    dropout: float = 0.1
    density_sigma: float = 1.0  # ground kernel sigma, cells


@dataclass
class Scene:
    extent: tuple
    people: np.ndarray  # [N, 2] world (x, y)
    heights: np.ndarray  # [N]
    seed: object = None

    def __len__(self):
        return len(self.people)

    def head_points(self):
        return np.column_stack([self.people, self.heights])


@dataclass
class MultiViewSample:
    views: np.ndarray  # [k, 1, H, W]
    cameras: list
    gt_density: np.ndarray  # [h, w]
    coverage: np.ndarray  # [k, h, w] in {0, 1}
    labeled: bool = False
    scene_id: int = 0
    frame_id: int = 0
    grid: GridSpec | None = None
    extras: dict = field(default_factory=dict)

    @property
    def num_views(self):
        return len(self.views)


def generate_scene(config, grid, seed):
    """Sample a crowd from a mixture of isotropic Gaussian clusters."""
    lo, hi = config.count_range
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid count range {config.count_range}")
    ex, ey = grid.extent
    if ex * ey < hi * config.area_per_person:
        raise ValueError(f"extent {ex:g}x{ey:g} m is too small for {hi} people")
    if hi > 0 and config.clusters < 1:
        raise ValueError("need at least one cluster")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(lo, hi + 1))
    if config.cluster_centers is not None:
        centers = np.asarray(config.cluster_centers, dtype=np.float64).reshape(-1, 2)
    else:
        centers = rng.uniform([0, 0], [ex, ey], size=(max(config.clusters, 1), 2))
    people = np.empty((n, 2))
    filled, tries = 0, 0
    while filled < n:
        tries += 1
        if tries > 1000:
            raise ValueError("rejection sampling failed; clusters lie too far outside the extent")
        m = n - filled
        which = rng.integers(0, len(centers), size=m)
        cand = centers[which] + rng.normal(0.0, config.cluster_sigma, size=(m, 2))
        ok = (cand[:, 0] >= 0) & (cand[:, 0] < ex) & (cand[:, 1] >= 0) & (cand[:, 1] < ey)
        cand = cand[ok]
        people[filled:filled + len(cand)] = cand
        filled += len(cand)
    base = grid.plane_height if config.person_height is None else config.person_height
    heights = np.full(n, base)
    if config.height_jitter > 0:
        heights = heights + rng.uniform(-config.height_jitter, config.height_jitter, size=n)
    return Scene((ex, ey), people, heights, seed)


def _coverage_fraction(camera, grid):
    return float(compute_coverage_mask(camera, grid).mean())


def make_rig(rig, grid, seed):
    """Ring of cameras around the extent, each zoomed to cover a target fraction."""
    rng = np.random.default_rng(seed)
    ex, ey = grid.extent
    center = np.array([ex / 2, ey / 2])
    span = max(ex, ey)
    cameras = []
    for i in range(rig.num_views):
        theta = 2 * math.pi * i / rig.num_views + rng.uniform(-rig.angle_jitter, rig.angle_jitter)
        direction = np.array([math.cos(theta), math.sin(theta)])
        pos = np.append(center + rig.ring_radius * span * direction, rng.uniform(*rig.height_range))
        target = np.append(center + rig.aim_offset * span * direction, 0.0)
        goal = rng.uniform(*rig.coverage_range)
        lo, hi = math.log(2.0), math.log(5000.0)
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            cam = CameraModel.look_at(pos, target, math.exp(mid), rig.image_size)
            if _coverage_fraction(cam, grid) > goal:
                lo = mid
            else:
                hi = mid
        cameras.append(CameraModel.look_at(pos, target, math.exp(lo), rig.image_size))
    return cameras


def dropout_mask(seed, view_index, n, q):
    """Persons hidden from one view (simulated occlusion); pure in (seed, view)."""
    if q <= 0 or n == 0:
        return np.zeros(n, dtype=bool)
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    rng = np.random.default_rng(entropy + [1000003, int(view_index)])
    return rng.random(n) < q


def visible_in_view(scene, camera, render_cfg, view_index):
    u, v, depth = camera.project(scene.head_points())
    seen = camera.sees(u, v, depth)
    return seen & ~dropout_mask(scene.seed, view_index, len(scene), render_cfg.dropout)


def splat(scene, camera, render_cfg, view_index=0):
    """Unclamped sum of Gaussian blobs, one per person drawn in this view."""
    h_img, w_img = camera.image_size
    img = np.zeros((h_img, w_img))
    if len(scene) == 0:
        return img
    u, v, depth = camera.project(scene.head_points())
    drawn = visible_in_view(scene, camera, render_cfg, view_index)
    rows = np.arange(h_img)[:, None]
    cols = np.arange(w_img)[None, :]
    for uc, vc, d in zip(u[drawn], v[drawn], depth[drawn]):
        sigma = render_cfg.blob_size * camera.focal / d
        img += render_cfg.amplitude * np.exp(
            -((cols - uc) ** 2 + (rows - vc) ** 2) / (2.0 * sigma * sigma))
    return img


def render_view(scene, camera, render_cfg, view_index=0):
    """Grayscale image ``[1, H_img, W_img]`` with intensities clamped to [0, 1]."""
    return np.clip(splat(scene, camera, render_cfg, view_index), 0.0, 1.0)[None]


def rasterize_ground_density(scene, grid, visible, sigma=1.0):
    """Ground density with one unit-mass Gaussian kernel per visible person.

    Kernels are truncated at the grid border and renormalized, so the map
    sums to the number of visible people.
    """
    out = np.zeros((grid.h, grid.w))
    visible = np.asarray(visible)
    if visible.dtype == bool:
        visible = np.flatnonzero(visible)
    if len(visible) == 0:
        return out
    rows, cols = grid.cell_of(scene.people[visible])
    rad = max(1, int(math.ceil(3 * sigma)))
    offs = np.arange(-rad, rad + 1)
    for r, c in zip(rows, cols):
        rr = r + offs
        cc = c + offs
        rr = rr[(rr >= 0) & (rr < grid.h)]
        cc = cc[(cc >= 0) & (cc < grid.w)]
        k = np.exp(-((rr[:, None] - r) ** 2 + (cc[None, :] - c) ** 2) / (2.0 * sigma * sigma))
        out[rr[0]:rr[-1] + 1, cc[0]:cc[-1] + 1] += k / k.sum()
    return out


def compute_coverage_mask(camera, grid):
    """1 where a cell center on the plane projects inside the image, else 0."""
    xx, yy = grid.cell_centers()
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, grid.plane_height)])
    u, v, depth = camera.project(pts)
    return camera.sees(u, v, depth).reshape(grid.h, grid.w).astype(np.float64)


def subset_mask(coverage, subset):
    """Union (elementwise max) of the coverage masks of the views in ``subset``."""
    subset = list(subset)
    if not subset:
        raise ValueError("subset_mask needs a non-empty view subset")
    return np.max(np.asarray(coverage)[subset], axis=0)


def make_sample(scene, cameras, grid, render_cfg, labeled=False, scene_id=0, frame_id=0):
    """Render one multi-view frame of ``scene`` with its ground truth."""
    views = np.stack([render_view(scene, cam, render_cfg, i) for i, cam in enumerate(cameras)])
    per_view = np.stack([visible_in_view(scene, cam, render_cfg, i)
                         for i, cam in enumerate(cameras)])
    visible = per_view.any(axis=0)
    gt = rasterize_ground_density(scene, grid, visible, render_cfg.density_sigma)
    coverage = np.stack([compute_coverage_mask(cam, grid) for cam in cameras])
    return MultiViewSample(views, list(cameras), gt, coverage, labeled, scene_id, frame_id, grid,
                           {"count": int(visible.sum()), "total": len(scene)})
