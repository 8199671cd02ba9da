"""Tests for synth module."""
import numpy as np
import pytest

from camera import Intrinsics
from config import SynthConfig
from errors import DataError, ParameterError
from io_formats import save_depths
from synth import (Family, bend_cylinder, evaluate, flat_grid, fold_hinge, generate_cylinder_bend,
                   generate_hinge_fold, generate_scene, grid_edges, load_scene_bundle, save_scene_bundle)
from tracks import DepthField, Reconstruction


class TestGrid:
    """Test the flat template grid."""

    def test_centered(self):
        """Test that the grid is centered on the origin."""
        grid = flat_grid(4, 5, 0.1)
        assert grid.shape == (20, 2)
        np.testing.assert_allclose(grid.mean(axis=0), 0.0, atol=1e-15)
        np.testing.assert_allclose(grid[1] - grid[0], [0.1, 0.0])
        np.testing.assert_allclose(grid[5] - grid[0], [0.0, 0.1])

    def test_edges(self):
        """Test the 4-connected edge count."""
        edges = grid_edges(4, 5)
        assert len(edges) == 4 * 4 + 3 * 5
        assert np.all(edges[:, 0] < edges[:, 1])


class TestDeformations:
    """Test bending and folding of the grid."""

    def test_flat_cylinder(self):
        """Test that an infinite radius keeps the grid flat."""
        grid = flat_grid(3, 4, 0.05)
        bent = bend_cylinder(grid, np.inf)
        np.testing.assert_array_equal(bent[:, :2], grid)
        np.testing.assert_array_equal(bent[:, 2], 0.0)

    def test_chord(self):
        """Test the chord 2 r sin(w / 2r) between the grid's ends."""
        grid = flat_grid(1, 11, 0.05)
        r = 0.4
        bent = bend_cylinder(grid, r)
        w = 0.5
        assert np.linalg.norm(bent[-1] - bent[0]) == pytest.approx(2 * r * np.sin(w / (2 * r)), rel=1e-12)

    def test_unfolded_hinge(self):
        """Test that a zero fold is flat."""
        grid = flat_grid(3, 4, 0.05)
        np.testing.assert_allclose(fold_hinge(grid, 0.0)[:, :2], grid, atol=1e-15)

    def test_hinge_keeps_lengths(self):
        """Test that the fold preserves distances from the hinge line."""
        grid = flat_grid(3, 5, 0.05)
        folded = fold_hinge(grid, 70.0)
        np.testing.assert_allclose(np.hypot(folded[:, 0], folded[:, 2]), np.abs(grid[:, 0]), atol=1e-15)


class TestGenerateScenes:
    """Test the scene generators."""

    def test_exact_projection(self, cylinder):
        """Test noise-free pixels against projecting the ground truth."""
        scene, tracks, _ = cylinder
        np.testing.assert_allclose(scene.intrinsics.project(scene.points), tracks.pixels, atol=1e-9)
        assert tracks.visible.all()

    def test_isometric(self, cylinder):
        """Test that every view unrolls back onto the template."""
        scene, _, _ = cylinder
        assert scene.isometry_error() < 1e-9
        np.testing.assert_allclose(scene.unroll(2), scene.grid, atol=1e-12)

    def test_template_is_all_pairs(self, cylinder):
        """Test the returned template covers every point pair with grid distances."""
        scene, _, template = cylinder
        n = scene.num_points
        assert len(template.edges) == n * (n - 1) // 2
        assert template.lookup(0, 1) == pytest.approx(0.05)

    def test_flat_plane_depth(self, flat_scene):
        """Test a fronto-parallel plane at the requested depth."""
        scene, _, _ = flat_scene
        np.testing.assert_allclose(scene.depths, 1.5)

    def test_hinge(self, camera):
        """Test an isometric folded scene."""
        scene, tracks, _ = generate_hinge_fold(4, 5, 0.05, [0.0, 30.0, 60.0], camera, seed=1)
        assert scene.family is Family.HINGE
        assert scene.isometry_error() < 1e-9
        assert tracks.num_views == 3

    def test_noise(self, camera):
        """Test the pixel noise level."""
        scene, tracks, _ = generate_cylinder_bend(10, 15, 0.05, [0.6] * 5, camera, noise=1.0, seed=2)
        residual = tracks.pixels - camera.project(scene.points)
        assert np.std(residual) == pytest.approx(1.0, rel=0.1)

    def test_drop_rate(self, camera):
        """Test dropped observations, keeping every point seen somewhere."""
        _, tracks, _ = generate_cylinder_bend(10, 15, 0.05, [0.6] * 5, camera, drop_rate=0.3, seed=2)
        assert (~tracks.visible).mean() == pytest.approx(0.3, abs=0.05)
        assert tracks.visible.any(axis=0).all()

    def test_seeded(self, camera):
        """Test identical scenes for identical seeds."""
        _, a, _ = generate_cylinder_bend(4, 5, 0.05, [0.5, 0.7], camera, noise=0.5, seed=9)
        _, b, _ = generate_cylinder_bend(4, 5, 0.05, [0.5, 0.7], camera, noise=0.5, seed=9)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_default_scene(self):
        """Test the default benchmark scene."""
        scene, tracks, _ = generate_scene(SynthConfig(), seed=0)
        assert tracks.pixels.shape == (10, 150, 2)
        np.testing.assert_allclose(scene.deformation, np.linspace(0.4, 2.0, 10))
        assert scene.intrinsics.focal == 500.0

    def test_hinge_config(self):
        """Test the hinge family from a config."""
        scene, _, _ = generate_scene(SynthConfig(family="hinge", rows=4, cols=5, views=3), seed=0)
        assert scene.family is Family.HINGE
        np.testing.assert_allclose(scene.deformation, [10.0, 35.0, 60.0])


class TestParameterErrors:
    """Test refused scene parameters."""

    def test_radius_too_tight(self, camera):
        """Test a radius that wraps past half a turn."""
        with pytest.raises(ParameterError, match="view 1"):
            generate_cylinder_bend(4, 5, 0.05, [0.5, 0.05], camera)

    def test_fold_angle(self, camera):
        """Test a fold angle of 180 degrees."""
        with pytest.raises(ParameterError):
            generate_hinge_fold(4, 5, 0.05, [180.0], camera)

    def test_pose_count(self, camera):
        """Test one pose per view."""
        pose = (np.eye(3), np.array([0.0, 0.0, 1.5]))
        with pytest.raises(ParameterError):
            generate_cylinder_bend(4, 5, 0.05, [0.5, 0.6], camera, poses=[pose])

    def test_outside_image(self, camera):
        """Test a surface too close to fit the image."""
        with pytest.raises(ParameterError, match="outside"):
            generate_cylinder_bend(10, 15, 0.05, [np.inf], camera, depth=0.2, poses=[(np.eye(3), [0, 0, 0.2])])

    def test_behind_camera(self, camera):
        """Test a surface behind the camera."""
        with pytest.raises(ParameterError, match="behind"):
            generate_cylinder_bend(4, 5, 0.05, [np.inf], camera, poses=[(np.eye(3), [0, 0, -1.0])])


class TestEvaluate:
    """Test evaluation against the ground truth."""

    def test_identity(self, cylinder):
        """Test zero error for the ground truth itself."""
        scene, tracks, _ = cylinder
        report = evaluate(scene.reconstruction(tracks), scene, "none")
        assert report.rmse == pytest.approx(0.0, abs=1e-12)
        assert report.focal_error_pct == 0.0 and report.pp_error == 0.0
        assert len(report.per_view) == tracks.num_views

    def test_global_scale(self, cylinder):
        """Test that a doubled reconstruction is scaled back."""
        scene, tracks, _ = cylinder
        doubled = Reconstruction(tracks, scene.depth_field(tracks).scaled(2.0))
        report = evaluate(doubled, scene, "globalScale")
        assert report.scale == pytest.approx(0.5, rel=1e-12)
        assert report.rmse == pytest.approx(0.0, abs=1e-12)
        assert evaluate(doubled, scene, "none").relative_error > 0.5

    def test_displaced_point(self, cylinder):
        """Test RMSE delta / sqrt(N V) for a single moved point."""
        scene, tracks, _ = cylinder
        depth = scene.depths.copy()
        depth[1, 4] += 0.01
        recon = Reconstruction(tracks, DepthField.from_depths(depth, tracks, scene.intrinsics))
        delta = 0.01 * float(np.linalg.norm(tracks.rays(scene.intrinsics)[1, 4]))
        report = evaluate(recon, scene, "none")
        assert report.rmse == pytest.approx(delta / np.sqrt(tracks.visible.size), rel=1e-9)
        assert report.per_view[1].mean_error == pytest.approx(delta / tracks.num_points, rel=1e-9)

    def test_intrinsics_errors(self, cylinder):
        """Test focal and principal point errors of the reconstruction's camera."""
        scene, tracks, _ = cylinder
        K = Intrinsics(fx=550.0, fy=550.0, cx=350.0, cy=280.0)
        recon = Reconstruction(tracks, DepthField.from_depths(scene.depths, tracks, K))
        report = evaluate(recon, scene)
        assert report.focal_error_pct == pytest.approx(10.0)
        assert report.pp_error == pytest.approx(50.0 / 800.0)

    def test_shape_mismatch(self, cylinder):
        """Test that the reconstruction must index the scene's views and points."""
        scene, tracks, _ = cylinder
        one = tracks.subset_views([0])
        recon = Reconstruction(one, scene.depth_field(tracks).subset_views([0]))
        with pytest.raises(DataError):
            evaluate(recon, scene)

    def test_unknown_alignment(self, cylinder):
        """Test an invalid alignment name."""
        scene, tracks, _ = cylinder
        with pytest.raises(ValueError):
            evaluate(scene.reconstruction(tracks), scene, "procrustes")


class TestSceneBundle:
    """Test writing and reading scene bundles."""

    def test_round_trip(self, cylinder, tmp_path):
        """Test that a bundle reloads to the same scene."""
        scene, tracks, template = cylinder
        save_scene_bundle(tmp_path, scene, tracks, template)
        again, tracks2, template2 = load_scene_bundle(tmp_path)
        np.testing.assert_array_equal(tracks2.pixels, tracks.pixels)
        np.testing.assert_allclose(again.points, scene.points, rtol=1e-12)
        np.testing.assert_array_equal(template2.edges, template.edges)
        assert again.intrinsics == scene.intrinsics

    def test_missing_manifest(self, tmp_path):
        """Test a directory that is not a bundle."""
        with pytest.raises(DataError, match="not a scene bundle"):
            load_scene_bundle(tmp_path)

    def test_tampered_depths(self, cylinder, tmp_path):
        """Test that stored depths must agree with the manifest."""
        scene, tracks, template = cylinder
        paths = save_scene_bundle(tmp_path, scene, tracks, template)
        save_depths(paths["depths"], scene.depth_field(tracks).scaled(1.01))
        with pytest.raises(DataError, match="disagree"):
            load_scene_bundle(tmp_path)
