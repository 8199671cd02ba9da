"""Tests for io_formats module."""
import json

import numpy as np
import pytest

from camera import Intrinsics
from errors import DataError, SingularIntrinsicsError, TrackError
from graph import EdgeLengths
from io_formats import (array_hash, blob_hash, input_hash, load_depths, load_intrinsics, load_template,
                        load_tracks, parse_depths, parse_intrinsics, parse_template, parse_tracks, read_json,
                        read_ply, save_depths, save_intrinsics, save_reconstruction_ply, save_template,
                        save_tracks, to_json, write_json, write_ply)
from tracks import DepthField, TrackSet

TRACKS_CSV = """view,point,x,y,visible
0,0,10.5,20.0,1
0,1,30.0,40.0,1
1,0,11.0,21.0,1
1,1,0,0,0
1,2,50.0,60.0,1
0,2,52.0,61.0,1
"""


class TestTracks:
    """Test the tracks CSV."""

    def test_parse(self):
        """Test shapes, pixels and visibility."""
        tracks = parse_tracks(TRACKS_CSV)
        assert tracks.pixels.shape == (2, 3, 2)
        np.testing.assert_array_equal(tracks.visible, [[True, True, True], [True, False, True]])
        np.testing.assert_array_equal(tracks.pixels[0, 0], [10.5, 20.0])
        assert np.isnan(tracks.pixels[1, 1]).all()

    def test_omitted_rows(self):
        """Test that invisible points may be left out."""
        text = "view,point,x,y,visible\n0,0,1,1,1\n0,1,2,2,1\n1,0,3,3,1\n1,1,4,4,1\n0,2,5,5,1\n"
        tracks = parse_tracks(text, num_views=2)
        assert not tracks.visible[1, 2]

    def test_explicit_counts(self):
        """Test counts larger than the indices seen."""
        with pytest.raises(TrackError, match="point 3"):
            parse_tracks(TRACKS_CSV, num_points=4)

    def test_bad_header(self):
        """Test a wrong header line."""
        with pytest.raises(DataError, match=":1:"):
            parse_tracks("v,p,x,y,visible\n0,0,1,1,1\n")

    def test_bad_number(self):
        """Test that the offending line is named."""
        text = "view,point,x,y,visible\n0,0,1,1,1\n0,1,abc,1,1\n"
        with pytest.raises(DataError, match=":3: field 'x'"):
            parse_tracks(text, source="t.csv")

    def test_duplicate(self):
        """Test a repeated observation."""
        text = "view,point,x,y,visible\n0,0,1,1,1\n0,0,1,1,1\n"
        with pytest.raises(DataError, match="duplicate"):
            parse_tracks(text)

    def test_visible_flag(self):
        """Test that visible is 0 or 1."""
        text = "view,point,x,y,visible\n0,0,1,1,2\n"
        with pytest.raises(DataError, match="visible"):
            parse_tracks(text)

    def test_field_count(self):
        """Test a short row."""
        with pytest.raises(DataError, match="expected 5 fields"):
            parse_tracks("view,point,x,y,visible\n0,0,1,1\n")

    def test_empty(self):
        """Test an empty file and a file with only a header."""
        with pytest.raises(DataError, match="empty"):
            parse_tracks("")
        with pytest.raises(TrackError, match="no observations"):
            parse_tracks("view,point,x,y,visible\n")

    def test_view_with_one_point(self):
        """Test that the TrackSet check is reported with the file name."""
        text = "view,point,x,y,visible\n0,0,1,1,1\n0,1,2,2,1\n1,0,3,3,1\n"
        with pytest.raises(TrackError, match="t.csv: .*view 1"):
            parse_tracks(text, source="t.csv")

    def test_file_round_trip(self, cylinder, tmp_path):
        """Test that saved tracks load back exactly."""
        _, tracks, _ = cylinder
        path = tmp_path / "tracks.csv"
        save_tracks(path, tracks)
        again = load_tracks(path)
        np.testing.assert_array_equal(again.pixels, tracks.pixels)
        np.testing.assert_array_equal(again.visible, tracks.visible)


class TestIntrinsics:
    """Test the intrinsics JSON."""

    def test_parse(self):
        """Test a complete mapping with default skew."""
        K = parse_intrinsics({"fx": 500, "fy": 510, "cx": 320, "cy": 240, "width": 640, "height": 480})
        assert K == Intrinsics(fx=500.0, fy=510.0, cx=320.0, cy=240.0, width=640.0, height=480.0)

    def test_missing_key(self):
        """Test that the image size is required."""
        with pytest.raises(DataError, match="height"):
            parse_intrinsics({"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640})

    def test_unknown_key(self):
        """Test a misspelled key."""
        with pytest.raises(DataError, match="focal"):
            parse_intrinsics({"focal": 500, "fx": 500, "fy": 500, "cx": 0, "cy": 0, "width": 1, "height": 1})

    def test_non_numeric(self):
        """Test a string value."""
        with pytest.raises(DataError):
            parse_intrinsics({"fx": "a", "fy": 500, "cx": 0, "cy": 0, "width": 1, "height": 1})

    def test_non_positive_focal(self):
        """Test that the camera itself rejects a zero focal length."""
        with pytest.raises(SingularIntrinsicsError):
            parse_intrinsics({"fx": 0, "fy": 500, "cx": 0, "cy": 0, "width": 1, "height": 1})

    def test_file_round_trip(self, camera, tmp_path):
        """Test save then load."""
        path = tmp_path / "K.json"
        save_intrinsics(path, camera)
        assert load_intrinsics(path) == camera

    def test_invalid_json(self, tmp_path):
        """Test a malformed file."""
        path = tmp_path / "K.json"
        path.write_text("{fx: 1")
        with pytest.raises(DataError, match="invalid JSON"):
            load_intrinsics(path)


class TestTemplate:
    """Test the template CSV."""

    def test_parse_orders_edges(self):
        """Test that (j, i) rows are stored as (i, j)."""
        template = parse_template("i,j,d\n2,0,0.5\n0,1,0.25\n")
        assert template.lookup(0, 2) == 0.5
        assert template.lookup(0, 1) == 0.25

    def test_negative_length(self):
        """Test a negative length."""
        with pytest.raises(DataError, match=":2:"):
            parse_template("i,j,d\n0,1,-1\n")

    def test_duplicate_edge(self):
        """Test an edge given in both directions."""
        with pytest.raises(DataError, match="twice"):
            parse_template("i,j,d\n0,1,1\n1,0,1\n")

    def test_self_edge(self):
        """Test an edge from a point to itself."""
        with pytest.raises(DataError, match="self edge"):
            parse_template("i,j,d\n3,3,1\n")

    def test_file_round_trip(self, tmp_path):
        """Test save then load."""
        template = EdgeLengths.from_mapping({(0, 1): 0.1, (1, 4): 1.0 / 3.0})
        path = tmp_path / "template.csv"
        save_template(path, template)
        again = load_template(path)
        np.testing.assert_array_equal(again.edges, template.edges)
        np.testing.assert_array_equal(again.lengths, template.lengths)


class TestDepths:
    """Test the depths CSV."""

    def _tracks(self):
        return TrackSet(np.arange(12, dtype=float).reshape(2, 3, 2),
                        np.array([[True, True, True], [True, False, True]]))

    def test_parse(self):
        """Test depths for the visible entries."""
        tracks = self._tracks()
        text = "view,point,lambda\n0,0,1\n0,1,2\n0,2,3\n1,0,4\n1,2,6\n"
        depths = parse_depths(text, tracks, Intrinsics(fx=100.0, fy=100.0))
        assert depths.depth[1, 2] == 6.0
        assert np.isnan(depths.depth[1, 1])

    def test_missing_visible_depth(self):
        """Test that every visible point needs a depth."""
        tracks = self._tracks()
        with pytest.raises(DataError, match="point 2 in view 1"):
            parse_depths("view,point,lambda\n0,0,1\n0,1,2\n0,2,3\n1,0,4\n", tracks, Intrinsics(fx=1.0, fy=1.0))

    def test_depth_for_invisible_point(self):
        """Test a depth given where the point is not seen."""
        tracks = self._tracks()
        with pytest.raises(DataError, match="not visible"):
            parse_depths("view,point,lambda\n1,1,2\n", tracks, Intrinsics(fx=1.0, fy=1.0))

    def test_file_round_trip(self, cylinder, tmp_path):
        """Test save then load."""
        scene, tracks, _ = cylinder
        depths = scene.depth_field(tracks)
        path = tmp_path / "depths.csv"
        save_depths(path, depths)
        np.testing.assert_array_equal(load_depths(path, tracks, scene.intrinsics).depth, depths.depth)


class TestPly:
    """Test PLY geometry output."""

    def test_write_read(self, tmp_path):
        """Test the vertex block."""
        points = np.array([[0.0, 1.0, 2.0], [0.1, 0.2, 0.3]])
        path = tmp_path / "p.ply"
        write_ply(path, points)
        assert path.read_text().startswith("ply\nformat ascii 1.0\nelement vertex 2\n")
        np.testing.assert_array_equal(read_ply(path), points)

    def test_not_ply(self, tmp_path):
        """Test a file that is not PLY."""
        path = tmp_path / "p.ply"
        path.write_text("hello\n")
        with pytest.raises(DataError):
            read_ply(path)

    def test_one_file_per_view(self, cylinder, tmp_path):
        """Test the per-view PLY set."""
        scene, tracks, _ = cylinder
        paths = save_reconstruction_ply(tmp_path / "ply", scene.reconstruction(tracks))
        assert [p.name for p in paths] == [f"view_{v:03d}.ply" for v in range(tracks.num_views)]
        np.testing.assert_allclose(read_ply(paths[1]), scene.points[1], atol=1e-12)


class TestJsonAndHashes:
    """Test JSON reports and content hashes."""

    def test_numpy_values(self, tmp_path):
        """Test that numpy scalars and arrays serialize."""
        path = tmp_path / "r.json"
        write_json(path, {"a": np.float64(1.5), "b": np.arange(3), "c": tmp_path})
        data = read_json(path)
        assert data == {"a": 1.5, "b": [0, 1, 2], "c": str(tmp_path)}

    def test_sorted_keys(self):
        """Test deterministic key order."""
        assert list(json.loads(to_json({"b": 1, "a": 2}))) == ["a", "b"]

    def test_unserializable(self):
        """Test that unknown objects are refused."""
        with pytest.raises(TypeError):
            to_json({"x": object()})

    def test_blob_hash(self):
        """Test the git blob hash of a known string."""
        assert blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"

    def test_input_hash(self, tmp_path):
        """Test per-file hashes and the combined hash."""
        a = tmp_path / "a.txt"
        a.write_bytes(b"hello\n")
        hashes = input_hash([a, None])
        assert hashes[str(a)] == blob_hash(b"hello\n")
        assert set(hashes) == {str(a), "inputs"}

    def test_array_hash(self):
        """Test that equal arrays hash equal and NaN is handled."""
        x = np.array([1.0, np.nan])
        assert array_hash(x) == array_hash(x.copy())
        assert array_hash(x) != array_hash(np.array([1.0, 2.0]))
        assert array_hash(x) != array_hash(x.astype(np.float32))
