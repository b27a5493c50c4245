"""Ground-plane homographies and the sampling grids that warp feature maps
from image space onto the average-height plane."""

from dataclasses import dataclass

import numpy as np

from .autodiff import bilinear_grid_sample

SENTINEL = -1.0  # out-of-bounds coordinate for cells the camera cannot see


@dataclass(frozen=True)
class Homography:
    """Maps homogeneous ground coordinates (x, y, 1) on the plane to image
    pixels (col, row, 1) up to scale."""

    matrix: np.ndarray

    def __post_init__(self):
        if abs(np.linalg.det(self.matrix)) <= 1e-12:
            raise ValueError("homography is singular")

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, xy):
        """Map points ``xy[N, 2]`` and dehomogenize; returns ``[N, 2]`` and the
        homogeneous scale (positive in front of the camera)."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        hom = np.column_stack([xy, np.ones(len(xy))]) @ self.matrix.T
        with np.errstate(divide="ignore", invalid="ignore"):
            return hom[:, :2] / hom[:, 2:3], hom[:, 2]


def ground_to_image_homography(camera, grid):
    """Restriction of the camera's 3x4 projection to the plane z = plane height."""
    z = grid.plane_height
    if abs(camera.position[2] - z) < 1e-9:
        raise ValueError("degenerate camera: the projection plane passes through the optical center")
    P = camera.P
    H = np.column_stack([P[:, 0], P[:, 1], P[:, 2] * z + P[:, 3]])
    return Homography(H)


def build_sampling_grid(H, grid, image_size, stride=1):
    """Feature-map (row, col) coordinates to sample for every ground cell.

    Cells behind the camera, or projecting absurdly far outside the image,
    get sentinel coordinates so that bilinear sampling returns 0.
    """
    xx, yy = grid.cell_centers()
    uv, scale = H.apply(np.column_stack([xx.ravel(), yy.ravel()]))
    h_img, w_img = image_size
    far = 4.0 * max(h_img, w_img)
    with np.errstate(invalid="ignore"):
        bad = ~(scale > 0) | ~np.isfinite(uv).all(axis=1) | (np.abs(uv) > far).any(axis=1)
    out = np.empty((grid.h * grid.w, 2))
    out[:, 0] = uv[:, 1] / stride
    out[:, 1] = uv[:, 0] / stride
    out[bad] = SENTINEL
    return out.reshape(grid.h, grid.w, 2)


def grid_in_bounds(sampling_grid, feature_shape):
    """Boolean ``[h, w]``: which ground cells sample inside a ``(Hf, Wf)`` map."""
    hf, wf = feature_shape
    r, c = sampling_grid[..., 0], sampling_grid[..., 1]
    return (r >= 0) & (r <= hf - 1) & (c >= 0) & (c <= wf - 1)


def project_feature(feature, sampling_grid):
    """Warp ``feature[C, Hf, Wf]`` onto the ground grid; differentiable in the feature."""
    return bilinear_grid_sample(feature, sampling_grid)
