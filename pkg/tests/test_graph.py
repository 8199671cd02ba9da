"""Tests for graph module."""
import numpy as np
import pytest

from errors import DataError, GraphConstructionError, UnreachableError
from graph import (EdgeLengths, NeighborGraph, build_neighbor_graph, geodesics, neighbor_pixel_spread,
                   view_components)
from tracks import TrackSet


def _grid_tracks(rows, cols, views=1):
    c, r = np.meshgrid(np.arange(cols), np.arange(rows))
    xy = np.stack([c.ravel(), r.ravel()], axis=1).astype(float)
    pixels = np.repeat(xy[None], views, axis=0)
    return TrackSet(pixels, np.ones(pixels.shape[:2], dtype=bool))


def _floyd_warshall(n, edges, lengths):
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for (i, j), d in zip(edges, lengths):
        dist[i, j] = dist[j, i] = min(dist[i, j], d)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    return dist


class TestBuildNeighborGraph:
    """Test k-nearest-neighbor graph construction."""

    def test_two_points(self):
        """Test that two points are each other's neighbor."""
        tracks = TrackSet(np.array([[[0.0, 0.0], [5.0, 0.0]]]), np.ones((1, 2), dtype=bool))
        graph = build_neighbor_graph(tracks, k=1)
        assert graph.adjacency == ((1,), (0,))

    def test_interior_grid_point(self):
        """Test that an interior point gets its four axis-aligned neighbors."""
        graph = build_neighbor_graph(_grid_tracks(3, 3), k=4)
        assert graph.neighbors(4)[:4] == (1, 3, 5, 7)

    def test_corner_tie_broken_by_index(self):
        """Test distances 1, 1, sqrt 2, then the lowest-index point at distance 2."""
        graph = build_neighbor_graph(_grid_tracks(3, 3), k=4)
        assert graph.neighbors(0)[:4] == (1, 3, 4, 2)

    def test_line_closure(self):
        """Test union closure on equally spaced points with k = 1."""
        tracks = TrackSet(np.array([[[float(x), 0.0] for x in range(5)]]), np.ones((1, 5), dtype=bool))
        graph = build_neighbor_graph(tracks, k=1)
        assert graph.adjacency == ((1,), (0, 2), (1, 3), (2, 4), (3,))

    def test_symmetric_with_minimum_degree(self, cylinder_graph):
        """Test symmetry and degree at least k after closure."""
        for i in range(cylinder_graph.num_points):
            assert len(cylinder_graph.neighbors(i)) >= cylinder_graph.k
            for j in cylinder_graph.neighbors(i):
                assert i in cylinder_graph.neighbors(j)

    def test_point_missing_from_reference_view(self):
        """Test attaching a point invisible in the reference view."""
        tracks = _grid_tracks(2, 3, views=2)
        visible = np.ones((2, 6), dtype=bool)
        visible[0, 5] = False
        tracks = TrackSet(tracks.pixels, visible)
        graph = build_neighbor_graph(tracks, k=2, ref_view=0)
        assert graph.neighbors(5)[:2] == (2, 4)
        assert 5 in graph.neighbors(2)

    def test_missing_point_prefers_shared_views(self):
        """Test attaching in the view whose neighbors share more views, not the most populated one."""
        nan = np.nan
        # points: 0 and 1 candidates, 2 filler, 3 missing from the reference view
        pixels = np.array([
            [[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [nan, nan]],
            [[1.0, 0.0], [5.0, 0.0], [10.0, 0.0], [0.0, 0.0]],
            [[nan, nan], [1.0, 0.0], [nan, nan], [0.0, 0.0]],
        ])
        visible = np.array([[True, True, True, False],
                            [True, True, True, True],
                            [False, True, False, True]])
        graph = build_neighbor_graph(TrackSet(pixels, visible), k=1, ref_view=0)
        # view 1 sees more points and would pick 0, seen with 3 in one view only
        assert graph.neighbors(3) == (1,)
        assert 3 in graph.neighbors(1)

    def test_default_reference_view(self):
        """Test that the view with most visible points is the default."""
        tracks = _grid_tracks(2, 3, views=2)
        visible = np.ones((2, 6), dtype=bool)
        visible[0, 5] = False
        graph = build_neighbor_graph(TrackSet(tracks.pixels, visible), k=2)
        assert graph.ref_view == 1

    def test_too_few_points(self):
        """Test k larger than the reference view allows."""
        with pytest.raises(GraphConstructionError):
            build_neighbor_graph(_grid_tracks(2, 2), k=4)

    def test_invalid_k(self):
        """Test that k must be positive."""
        with pytest.raises(GraphConstructionError):
            build_neighbor_graph(_grid_tracks(2, 2), k=0)

    def test_asymmetric_adjacency_rejected(self):
        """Test the symmetry invariant of NeighborGraph."""
        with pytest.raises(GraphConstructionError):
            NeighborGraph(((1,), ()), k=1, ref_view=0)


class TestNeighborGraph:
    """Test graph accessors."""

    def test_edges_sorted(self):
        """Test lexicographic undirected edges."""
        graph = NeighborGraph.from_edges(4, [(3, 1), (0, 2), (1, 0)])
        np.testing.assert_array_equal(graph.edges(), [[0, 1], [0, 2], [1, 3]])
        assert len(graph.directed_pairs()) == 6

    def test_subgraph(self):
        """Test induced subgraph reindexing."""
        graph = NeighborGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
        sub = graph.subgraph([3, 2, 0])
        np.testing.assert_array_equal(sub.edges(), [[0, 1]])

    def test_view_components(self):
        """Test components of the visible part of a chain."""
        graph = NeighborGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
        comps = view_components(graph, np.array([True, True, False, True]))
        assert sorted(c.tolist() for c in comps) == [[0, 1], [3]]


class TestEdgeLengths:
    """Test per-edge length tables."""

    def test_from_mapping_orders_edges(self):
        """Test that keys are normalized to i < j."""
        lengths = EdgeLengths.from_mapping({(2, 0): 1.5, (0, 1): 0.5})
        np.testing.assert_array_equal(lengths.edges, [[0, 1], [0, 2]])
        assert lengths.lookup(2, 0) == 1.5

    def test_directed_sum(self):
        """Test that each edge counts twice."""
        assert EdgeLengths.from_mapping({(0, 1): 1.0, (1, 2): 2.0}).directed_sum() == 6.0

    def test_negative_length_rejected(self):
        """Test that lengths must be non-negative."""
        with pytest.raises(DataError):
            EdgeLengths(np.array([[0, 1]]), np.array([-1.0]))

    def test_unordered_edge_rejected(self):
        """Test that edges are stored with i < j."""
        with pytest.raises(DataError):
            EdgeLengths(np.array([[1, 0]]), np.array([1.0]))

    def test_restricted_to_missing_edge(self):
        """Test restriction to a graph with an unknown edge."""
        lengths = EdgeLengths.from_mapping({(0, 1): 1.0})
        graph = NeighborGraph.from_edges(3, [(0, 1), (1, 2)])
        with pytest.raises(DataError, match=r"\(1, 2\)"):
            lengths.restricted_to(graph)

    def test_lookup_missing(self):
        """Test lookup of an absent edge."""
        with pytest.raises(DataError):
            EdgeLengths.from_mapping({(0, 1): 1.0}).lookup(0, 2)


class TestGeodesics:
    """Test shortest paths over edge lengths."""

    def test_chain(self):
        """Test the unique path of a chain."""
        graph = NeighborGraph.from_edges(3, [(0, 1), (1, 2)])
        table = geodesics(graph, EdgeLengths(graph.edges(), np.array([1.0, 2.0])))
        assert table.get(0, 2) == pytest.approx(3.0)
        assert table.get(2, 0) == pytest.approx(3.0)
        assert table.get(1, 1) == 0.0

    def test_direct_edge_shorter_than_detour(self):
        """Test that a short direct edge is the geodesic."""
        graph = NeighborGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        table = geodesics(graph, EdgeLengths.from_mapping({(0, 1): 1.0, (1, 2): 1.0, (0, 2): 1.5}))
        assert table.get(0, 2) == pytest.approx(1.5)

    def test_unreachable(self):
        """Test that disconnected pairs are reported, not zero."""
        graph = NeighborGraph.from_edges(4, [(0, 1), (2, 3)])
        table = geodesics(graph, EdgeLengths.from_mapping({(0, 1): 0.0, (2, 3): 1.0}))
        assert table.reachable(0, 1)
        assert table.get(0, 1) == pytest.approx(0.0)
        assert not table.reachable(0, 2)
        with pytest.raises(UnreachableError):
            table.get(0, 2)

    def test_sources_subset(self):
        """Test queries from a subset of sources."""
        graph = NeighborGraph.from_edges(3, [(0, 1), (1, 2)])
        table = geodesics(graph, EdgeLengths(graph.edges(), np.array([1.0, 2.0])), sources=[2])
        assert table.distances.shape == (1, 3)
        with pytest.raises(DataError):
            table.get(0, 2)

    def test_random_graph_matches_floyd_warshall(self):
        """Test all pairs on a random 20-node graph."""
        rng = np.random.default_rng(7)
        n = 20
        pairs = {tuple(sorted(rng.choice(n, 2, replace=False))) for _ in range(45)}
        pairs |= {(i, i + 1) for i in range(n - 1)}
        mapping = {p: float(rng.uniform(0.1, 2.0)) for p in pairs}
        graph = NeighborGraph.from_edges(n, mapping.keys())
        lengths = EdgeLengths.from_mapping(mapping)
        table = geodesics(graph, lengths)
        expected = _floyd_warshall(n, lengths.edges, lengths.lengths)
        np.testing.assert_allclose(table.distances, expected, rtol=1e-12)

    def test_geodesic_dominates_chord(self, cylinder, cylinder_graph):
        """Test that path lengths over true chords are at least the straight line."""
        scene, _, _ = cylinder
        edges = cylinder_graph.edges()
        X = scene.points[0]
        chords = np.linalg.norm(X[edges[:, 0]] - X[edges[:, 1]], axis=1)
        table = geodesics(cylinder_graph, EdgeLengths(edges, chords))
        straight = np.linalg.norm(X[:, None] - X[None], axis=2)
        assert np.all(table.distances >= straight - 1e-12)


class TestNeighborPixelSpread:
    """Test the neighbor pixel-distance diagnostic."""

    def test_per_view_distances(self):
        """Test distances per view with NaN for an invisible endpoint."""
        view0 = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 0.0]])
        pixels = np.stack([view0, 2.0 * view0])
        visible = np.array([[True, True, True], [True, True, False]])
        graph = NeighborGraph.from_edges(3, [(0, 1), (1, 2)])
        spread = neighbor_pixel_spread(TrackSet(pixels, visible), graph)
        assert spread.shape == (2, 2)
        np.testing.assert_allclose(spread[0], [5.0, 4.0])
        assert spread[1, 0] == pytest.approx(10.0)
        assert np.isnan(spread[1, 1])
