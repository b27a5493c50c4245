import numpy as np
import pytest

from mvrank.scene import (CameraModel, GridSpec, RenderConfig, RigConfig, Scene, SceneConfig,
                          compute_coverage_mask, dropout_mask, generate_scene, make_rig,
                          make_sample, rasterize_ground_density, render_view, splat, subset_mask)


@pytest.fixture(scope="module")
def grid():
    return GridSpec()


@pytest.fixture(scope="module")
def rig(grid):
    return make_rig(RigConfig(), grid, [0, 1, 0])


class TestGridSpec:
    def test_extent_and_centers(self):
        g = GridSpec(8, 10, meters_per_cell=0.5)
        assert g.extent == (5.0, 4.0)
        xx, yy = g.cell_centers()
        assert xx.shape == (8, 10)
        assert xx[0, 0] == 0.25 and yy[0, 0] == 0.25
        assert xx[0, 9] == pytest.approx(4.75) and yy[7, 0] == pytest.approx(3.75)

    def test_cell_of_round_trips_centers(self):
        g = GridSpec(9, 11)
        xx, yy = g.cell_centers()
        rows, cols = g.cell_of(np.column_stack([xx.ravel(), yy.ravel()]))
        np.testing.assert_array_equal(rows.reshape(9, 11), np.arange(9)[:, None].repeat(11, 1))
        np.testing.assert_array_equal(cols.reshape(9, 11), np.arange(11)[None, :].repeat(9, 0))

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            GridSpec(4, 16)


class TestCamera:
    def test_look_at_rotation_orthonormal(self):
        cam = CameraModel.look_at((0, -10, 8), (0, 0, 0), 50, (48, 64))
        np.testing.assert_allclose(cam.R @ cam.R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(cam.R) == pytest.approx(1.0)

    def test_target_projects_to_principal_point(self):
        cam = CameraModel.look_at((3, -7, 6), (1, 2, 0.5), 80, (48, 64))
        u, v, d = cam.project([[1, 2, 0.5]])
        np.testing.assert_allclose([u[0], v[0]], [31.5, 23.5], atol=1e-9)
        assert d[0] > 0

    def test_projection_matrix_agrees_with_project(self):
        cam = CameraModel.look_at((3, -7, 6), (1, 2, 0.5), 80, (48, 64))
        pts = np.random.default_rng(0).uniform(0, 5, (20, 3))
        u, v, _ = cam.project(pts)
        hom = np.column_stack([pts, np.ones(20)]) @ cam.P.T
        np.testing.assert_allclose(hom[:, 0] / hom[:, 2], u, atol=1e-9)
        np.testing.assert_allclose(hom[:, 1] / hom[:, 2], v, atol=1e-9)

    def test_behind_camera_not_seen(self):
        cam = CameraModel.look_at((0, 0, 5), (0, 10, 0), 50, (48, 64))
        u, v, d = cam.project([[0, -10, 0]])
        assert not cam.sees(u, v, d)[0]

    def test_dict_round_trip(self):
        cam = CameraModel.look_at((3, -7, 6), (1, 2, 0.5), 80, (48, 64))
        assert CameraModel.from_dict(cam.to_dict()) == cam


class TestScene:
    def test_count_range_and_bounds(self, grid):
        cfg = SceneConfig(count_range=(10, 40))
        for s in range(20):
            sc = generate_scene(cfg, grid, s)
            assert 10 <= len(sc) <= 40
            ex, ey = grid.extent
            assert (sc.people >= 0).all() and (sc.people[:, 0] < ex).all() and (sc.people[:, 1] < ey).all()

    def test_deterministic(self, grid):
        a = generate_scene(SceneConfig(), grid, [3, 4])
        b = generate_scene(SceneConfig(), grid, [3, 4])
        np.testing.assert_array_equal(a.people, b.people)

    def test_infeasible_density_rejected(self):
        with pytest.raises(ValueError):
            generate_scene(SceneConfig(count_range=(10, 1000)), GridSpec(8, 8, 0.5), 0)

    def test_heights_default_to_plane(self, grid):
        sc = generate_scene(SceneConfig(), grid, 0)
        np.testing.assert_array_equal(sc.heights, grid.plane_height)


class TestRig:
    def test_coverage_within_target_range(self, grid, rig):
        lo, hi = RigConfig().coverage_range
        for cam in rig:
            frac = compute_coverage_mask(cam, grid).mean()
            # bisection converges from above to within one cell of the target
            assert lo - 1.0 / (grid.h * grid.w) <= frac <= hi + 1.0 / (grid.h * grid.w)

    def test_views_partially_overlap(self, grid, rig):
        cov = np.stack([compute_coverage_mask(c, grid) for c in rig])
        assert cov.max(axis=0).mean() > cov.mean(axis=(1, 2)).max()
        assert (cov.sum(axis=0) >= 2).any()

    def test_deterministic(self, grid):
        assert make_rig(RigConfig(), grid, [5]) == make_rig(RigConfig(), grid, [5])


class TestRendering:
    def test_single_blob_peak_at_projection(self, grid, rig):
        cam = rig[0]
        xx, yy = grid.cell_centers()
        cov = compute_coverage_mask(cam, grid)
        r, c = np.argwhere(cov > 0)[len(np.argwhere(cov > 0)) // 2]
        sc = Scene(grid.extent, np.array([[xx[r, c], yy[r, c]]]), np.array([grid.plane_height]), 0)
        img = splat(sc, cam, RenderConfig(dropout=0.0))
        u, v, _ = cam.project(sc.head_points())
        pr, pc = np.unravel_index(img.argmax(), img.shape)
        assert abs(pr - v[0]) <= 0.5 + 1e-9 and abs(pc - u[0]) <= 0.5 + 1e-9

    def test_render_clamped(self, grid, rig):
        sc = generate_scene(SceneConfig(count_range=(40, 40), clusters=1, cluster_sigma=0.5), grid, 1)
        img = render_view(sc, rig[0], RenderConfig(dropout=0.0))
        assert img.shape == (1, 48, 64)
        assert img.max() <= 1.0 and img.min() >= 0.0

    def test_dropout_pure_and_rate(self):
        a = dropout_mask([1, 2], 0, 10000, 0.1)
        np.testing.assert_array_equal(a, dropout_mask([1, 2], 0, 10000, 0.1))
        assert not np.array_equal(a, dropout_mask([1, 2], 1, 10000, 0.1))
        assert abs(a.mean() - 0.1) < 0.01
        assert not dropout_mask(0, 0, 5, 0.0).any()


class TestDensity:
    def test_sums_to_visible_count(self, grid):
        sc = generate_scene(SceneConfig(), grid, 2)
        vis = np.zeros(len(sc), dtype=bool)
        vis[::2] = True
        d = rasterize_ground_density(sc, grid, vis, sigma=1.5)
        assert d.sum() == pytest.approx(vis.sum(), abs=1e-9)

    def test_corner_person_keeps_unit_mass(self, grid):
        sc = Scene(grid.extent, np.array([[0.01, 0.01]]), np.array([1.75]))
        d = rasterize_ground_density(sc, grid, [0])
        assert d.sum() == pytest.approx(1.0, abs=1e-12)
        assert d[0, 0] == d.max()

    def test_empty(self, grid):
        sc = Scene(grid.extent, np.zeros((0, 2)), np.zeros(0))
        assert rasterize_ground_density(sc, grid, np.zeros(0, bool)).sum() == 0


class TestMasks:
    def test_subset_mask_union_and_nesting(self, grid, rig):
        cov = np.stack([compute_coverage_mask(c, grid) for c in rig])
        np.testing.assert_array_equal(subset_mask(cov, [0, 2]), np.maximum(cov[0], cov[2]))
        assert (subset_mask(cov, [1]) <= subset_mask(cov, [1, 0])).all()
        with pytest.raises(ValueError):
            subset_mask(cov, [])

    def test_sample_fields(self, grid, rig):
        sc = generate_scene(SceneConfig(), grid, 3)
        s = make_sample(sc, rig, grid, RenderConfig(), labeled=True)
        assert s.views.shape == (3, 1, 48, 64)
        assert s.gt_density.shape == (32, 32) and s.coverage.shape == (3, 32, 32)
        assert s.gt_density.sum() == pytest.approx(s.extras["count"], abs=1e-9)
        assert s.extras["count"] <= s.extras["total"] == len(sc)
