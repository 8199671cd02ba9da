"""Tests for tracks module."""
import numpy as np
import pytest

from camera import Intrinsics
from errors import DataError, TrackError
from tracks import DepthField, Reconstruction, TrackSet


def _tracks(pixels, visible=None):
    pixels = np.asarray(pixels, dtype=float)
    if visible is None:
        visible = np.ones(pixels.shape[:2], dtype=bool)
    return TrackSet(pixels, visible)


class TestTrackSet:
    """Test observation validation."""

    def test_shapes(self):
        """Test view and point counts."""
        tracks = _tracks(np.zeros((3, 4, 2)) + np.arange(4)[None, :, None])
        assert tracks.num_views == 3
        assert tracks.num_points == 4

    def test_invisible_pixels_become_nan(self):
        """Test that invisible entries are masked."""
        pixels = np.arange(12, dtype=float).reshape(2, 3, 2)
        visible = np.array([[True, True, False], [True, True, True]])
        tracks = _tracks(pixels, visible)
        assert np.all(np.isnan(tracks.pixels[0, 2]))
        assert tracks.pixels[1, 2, 0] == 10.0

    def test_view_with_one_point_rejected(self):
        """Test that a view needs two visible points."""
        visible = np.array([[True, False, False], [True, True, True]])
        with pytest.raises(TrackError, match="view 0"):
            _tracks(np.zeros((2, 3, 2)), visible)

    def test_never_visible_point_rejected(self):
        """Test that every point must be seen somewhere."""
        visible = np.array([[True, True, False], [True, True, False]])
        with pytest.raises(TrackError, match="point 2"):
            _tracks(np.zeros((2, 3, 2)), visible)

    def test_non_finite_visible_pixel_rejected(self):
        """Test that a visible pixel must be finite."""
        pixels = np.zeros((1, 3, 2))
        pixels[0, 1, 0] = np.inf
        with pytest.raises(TrackError, match="point 1"):
            _tracks(pixels)

    def test_bad_shape_rejected(self):
        """Test that pixels must be (V, N, 2)."""
        with pytest.raises(TrackError):
            TrackSet(np.zeros((2, 3)), np.ones((2, 3), dtype=bool))

    def test_default_ref_view(self):
        """Test the view with most visible points, lowest index on ties."""
        visible = np.array([[True, True, False], [True, True, True], [True, True, True]])
        assert _tracks(np.zeros((3, 3, 2)), visible).default_ref_view() == 1

    def test_subsets(self):
        """Test point and view subsets."""
        tracks = _tracks(np.random.default_rng(0).random((3, 5, 2)))
        sub = tracks.subset_points([4, 0, 2]).subset_views([2, 0])
        np.testing.assert_array_equal(sub.pixels, tracks.pixels[[2, 0]][:, [4, 0, 2]])


class TestDepthField:
    """Test depths and ranges."""

    def test_ranges_follow_ray_norms(self):
        """Test a = lambda ||K^-1 u||."""
        K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)
        tracks = _tracks([[[820.0, 240.0], [320.0, 240.0]]])
        field = DepthField.from_depths(np.array([[10.0, 10.0]]), tracks, K)
        np.testing.assert_allclose(field.ranges, [[10.0 * np.sqrt(2.0), 10.0]])
        assert field.check_ranges(tracks) <= 1e-12

    def test_from_ranges_inverse(self):
        """Test building from ranges reproduces the depths."""
        K = Intrinsics(fx=400.0, fy=450.0, cx=300.0, cy=200.0)
        tracks = _tracks([[[10.0, 20.0], [500.0, 300.0], [30.0, 400.0]]])
        depth = np.array([[1.0, 2.0, 3.0]])
        field = DepthField.from_ranges(DepthField.from_depths(depth, tracks, K).ranges, tracks, K)
        np.testing.assert_allclose(field.depth, depth, rtol=1e-12)

    def test_scaled_per_view(self):
        """Test per-view scaling of depths and ranges."""
        K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)
        tracks = _tracks(np.full((2, 2, 2), 100.0) + np.arange(2)[None, :, None])
        field = DepthField.from_depths(np.ones((2, 2)), tracks, K).scaled([2.0, 3.0])
        np.testing.assert_allclose(field.depth, [[2.0, 2.0], [3.0, 3.0]])
        assert field.check_ranges(tracks) <= 1e-12

    def test_check_ranges_detects_mismatch(self):
        """Test that inconsistent ranges raise."""
        K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)
        tracks = _tracks([[[0.0, 0.0], [1.0, 1.0]]])
        field = DepthField(np.ones((1, 2)), np.ones((1, 2)), tracks.visible, K)
        with pytest.raises(DataError):
            field.check_ranges(tracks)


class TestReconstruction:
    """Test derived points."""

    def test_ground_truth_reprojects(self, cylinder):
        """Test that ground-truth depths reproduce the pixels."""
        scene, tracks, _ = cylinder
        recon = scene.reconstruction(tracks)
        assert recon.reprojection_error() < 1e-9
        np.testing.assert_allclose(recon.points(), scene.points, atol=1e-12)

    def test_edge_lengths_nan_when_invisible(self):
        """Test NaN edge lengths with an invisible endpoint."""
        K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)
        visible = np.array([[True, True, True], [True, True, False]])
        tracks = _tracks(np.full((2, 3, 2), 300.0) + np.arange(3)[None, :, None], visible)
        recon = Reconstruction(tracks, DepthField.from_depths(np.ones((2, 3)), tracks, K))
        lengths = recon.edge_lengths_per_view(np.array([[0, 1], [1, 2]]))
        assert np.isfinite(lengths[1, 0])
        assert np.isnan(lengths[1, 1])

    def test_shape_mismatch_rejected(self):
        """Test that depths must match the tracks."""
        K = Intrinsics(fx=500.0, fy=500.0)
        tracks = _tracks(np.zeros((1, 2, 2)) + np.arange(2)[None, :, None])
        other = _tracks(np.zeros((1, 3, 2)) + np.arange(3)[None, :, None])
        with pytest.raises(DataError):
            Reconstruction(tracks, DepthField.from_depths(np.ones((1, 3)), other, K))
