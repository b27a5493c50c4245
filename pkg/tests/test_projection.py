import numpy as np
import pytest

from mvrank.autodiff import Tensor
from mvrank.projection import (SENTINEL, Homography, build_sampling_grid, grid_in_bounds,
                               ground_to_image_homography, project_feature)
from mvrank.scene import CameraModel, GridSpec, RigConfig, compute_coverage_mask, make_rig


@pytest.fixture(scope="module")
def grid():
    return GridSpec()


@pytest.fixture(scope="module")
def cams(grid):
    return make_rig(RigConfig(), grid, [0, 1, 0])


class TestHomography:
    def test_agrees_with_full_projection(self, grid, cams):
        rng = np.random.default_rng(0)
        xy = rng.uniform(0, 20, (200, 2))
        for cam in cams:
            H = ground_to_image_homography(cam, grid)
            uv, scale = H.apply(xy)
            u, v, d = cam.project(np.column_stack([xy, np.full(200, grid.plane_height)]))
            np.testing.assert_allclose(uv[:, 0], u, atol=1e-9)
            np.testing.assert_allclose(uv[:, 1], v, atol=1e-9)
            # homogeneous scale equals depth for a K with unit bottom row
            np.testing.assert_allclose(scale, d, rtol=1e-12)

    def test_inverse_round_trip(self, grid, cams):
        H = ground_to_image_homography(cams[1], grid)
        xy = np.random.default_rng(1).uniform(0, 20, (50, 2))
        uv, _ = H.apply(xy)
        back, _ = H.inverse().apply(uv)
        np.testing.assert_allclose(back, xy, atol=1e-9)

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            Homography(np.zeros((3, 3)))

    def test_camera_on_plane_rejected(self, grid):
        cam = CameraModel.look_at((0, 0, grid.plane_height), (5, 5, 0), 50, (48, 64))
        with pytest.raises(ValueError):
            ground_to_image_homography(cam, grid)


class TestSamplingGrid:
    def test_in_bounds_matches_coverage_mask(self, grid, cams):
        for cam in cams:
            H = ground_to_image_homography(cam, grid)
            sg = build_sampling_grid(H, grid, cam.image_size, stride=1)
            np.testing.assert_array_equal(grid_in_bounds(sg, cam.image_size),
                                          compute_coverage_mask(cam, grid) > 0)

    def test_stride_scales_coordinates(self, grid, cams):
        H = ground_to_image_homography(cams[0], grid)
        g1 = build_sampling_grid(H, grid, cams[0].image_size, 1)
        g2 = build_sampling_grid(H, grid, cams[0].image_size, 2)
        ok = g1[..., 0] != SENTINEL
        np.testing.assert_allclose(g2[ok], g1[ok] / 2)

    def test_behind_camera_gets_sentinel(self, grid):
        # camera inside the grid looking along +x: cells behind it have negative depth
        cam = CameraModel.look_at((10, 10, 6), (20, 10, 0), 40, (48, 64))
        H = ground_to_image_homography(cam, grid)
        sg = build_sampling_grid(H, grid, cam.image_size)
        xx, _ = grid.cell_centers()
        behind = xx < 10 - 6.0
        assert (sg[behind] == SENTINEL).all()

    def test_outside_frustum_samples_zero(self, grid, cams):
        cam = cams[2]
        sg = build_sampling_grid(ground_to_image_homography(cam, grid), grid, cam.image_size)
        feat = Tensor(np.ones((2,) + cam.image_size))
        out = project_feature(feat, sg).data
        cov = compute_coverage_mask(cam, grid) > 0
        assert (out[:, ~cov] == 0).all()
        np.testing.assert_allclose(out[:, cov], 1.0)

    def test_projected_feature_reads_pixel_under_cell(self, grid, cams):
        cam = cams[0]
        H = ground_to_image_homography(cam, grid)
        sg = build_sampling_grid(H, grid, cam.image_size)
        h_img, w_img = cam.image_size
        rows, cols = np.mgrid[0:h_img, 0:w_img].astype(np.float64)
        feat = np.stack([rows, cols])  # linear maps are reproduced exactly by bilinear sampling
        out = project_feature(Tensor(feat), sg).data
        ok = grid_in_bounds(sg, cam.image_size)
        np.testing.assert_allclose(out[0][ok], sg[..., 0][ok], atol=1e-9)
        np.testing.assert_allclose(out[1][ok], sg[..., 1][ok], atol=1e-9)
