"""
Nearest-neighbor graphs over tracked points, per-edge length tables and
shortest-path geodesics on them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial.distance import cdist

from errors import DataError, GraphConstructionError, UnreachableError
from tracks import TrackSet

logger = logging.getLogger(__name__)

DEFAULT_K = 8


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """
    Symmetric neighbor lists N(i) over the points of a TrackSet.

    adjacency[i] lists the k nearest neighbors of i first (by pixel
    distance in ref_view), followed by neighbors added by the symmetric
    closure, in increasing index order.
    """

    adjacency: Tuple[Tuple[int, ...], ...]
    k: int
    ref_view: int

    def __post_init__(self):
        adjacency = tuple(tuple(int(j) for j in nbrs) for nbrs in self.adjacency)
        for i, nbrs in enumerate(adjacency):
            if i in nbrs:
                raise GraphConstructionError(f"point {i} lists itself as a neighbor")
            if len(set(nbrs)) != len(nbrs):
                raise GraphConstructionError(f"point {i} has duplicate neighbors")
            for j in nbrs:
                if not 0 <= j < len(adjacency) or i not in adjacency[j]:
                    raise GraphConstructionError(f"edge ({i}, {j}) is not symmetric")
        object.__setattr__(self, "adjacency", adjacency)

    @property
    def num_points(self) -> int:
        return len(self.adjacency)

    def neighbors(self, i: int) -> Tuple[int, ...]:
        return self.adjacency[i]

    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.adjacency], dtype=int)

    def mean_degree(self) -> float:
        return float(self.degrees().mean()) if self.num_points else 0.0

    def edges(self) -> np.ndarray:
        """(E, 2) undirected edges with i < j, in lexicographic order."""
        pairs = sorted((i, j) for i, nbrs in enumerate(self.adjacency) for j in nbrs if i < j)
        return np.array(pairs, dtype=int).reshape(-1, 2)

    def directed_pairs(self) -> np.ndarray:
        """(2E, 2) pairs (i, j) for every j in N(i)."""
        return np.array([(i, j) for i, nbrs in enumerate(self.adjacency) for j in nbrs],
                        dtype=int).reshape(-1, 2)

    def subgraph(self, points: Sequence[int]) -> "NeighborGraph":
        """Induced subgraph, reindexed to positions in `points`."""
        index = {int(p): n for n, p in enumerate(points)}
        adjacency = [tuple(index[j] for j in self.adjacency[p] if j in index) for p in points]
        return NeighborGraph(tuple(adjacency), self.k, self.ref_view)

    @classmethod
    def from_edges(cls, num_points: int, edges: Iterable[Tuple[int, int]], k: int = 0,
                   ref_view: int = 0) -> "NeighborGraph":
        nbrs: List[List[int]] = [[] for _ in range(num_points)]
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                continue
            if j not in nbrs[i]:
                nbrs[i].append(j)
            if i not in nbrs[j]:
                nbrs[j].append(i)
        return cls(tuple(tuple(sorted(n)) for n in nbrs), k, ref_view)


@dataclass(frozen=True, eq=False)
class EdgeLengths:
    """Non-negative length per undirected edge (i < j, lexicographic)."""

    edges: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        lengths = np.asarray(self.lengths, dtype=float).reshape(-1)
        if len(edges) != len(lengths):
            raise DataError(f"{len(edges)} edges but {len(lengths)} lengths")
        if np.any(edges[:, 0] >= edges[:, 1]):
            raise DataError("edges must be stored with i < j")
        negative = np.flatnonzero(~(lengths >= 0))
        if len(negative):
            i, j = edges[negative[0]]
            raise DataError(f"edge ({i}, {j}) has invalid length {lengths[negative[0]]}")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def from_mapping(cls, mapping: Dict[Tuple[int, int], float]) -> "EdgeLengths":
        items = sorted(((min(i, j), max(i, j)), float(d)) for (i, j), d in mapping.items())
        edges = np.array([e for e, _ in items], dtype=int).reshape(-1, 2)
        return cls(edges, np.array([d for _, d in items]))

    def as_dict(self) -> Dict[Tuple[int, int], float]:
        return {(int(i), int(j)): float(d) for (i, j), d in zip(self.edges, self.lengths)}

    def lookup(self, i: int, j: int) -> float:
        key = (min(i, j), max(i, j))
        try:
            return self.as_dict()[key]
        except KeyError:
            raise DataError(f"no length stored for edge {key}") from None

    def directed_sum(self) -> float:
        """Sum over directed pairs (i, j in N(i)): each edge counted twice."""
        return float(2.0 * self.lengths.sum())

    def scaled(self, factor: float) -> "EdgeLengths":
        return EdgeLengths(self.edges, self.lengths * factor)

    def matches(self, graph: NeighborGraph) -> bool:
        other = graph.edges()
        return other.shape == self.edges.shape and bool(np.all(other == self.edges))

    def restricted_to(self, graph: NeighborGraph) -> "EdgeLengths":
        """Lengths on exactly the edges of `graph`."""
        table = self.as_dict()
        edges = graph.edges()
        missing = [tuple(e) for e in edges if tuple(e) not in table]
        if missing:
            raise DataError(f"template has no length for edge {missing[0]} ({len(missing)} missing)")
        return EdgeLengths(edges, np.array([table[tuple(e)] for e in edges]))


def _knn(dist: np.ndarray, k: int) -> np.ndarray:
    # Stable sort keeps the lowest index first among equal distances
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def _attach_missing_point(tracks: TrackSet, p: int, k: int) -> Optional[Tuple[int, List[int]]]:
    """
    k nearest neighbors of p in each view that sees it, scored by the number
    of views shared between p and those neighbors. Ties go to the view with
    more visible points, then the lower index.
    """
    visible = tracks.visible
    counts = visible.sum(axis=1)
    best = None
    for view in np.flatnonzero(visible[:, p]):
        candidates = tracks.visible_points(view)
        candidates = candidates[candidates != p]
        if len(candidates) == 0:
            continue
        d = np.linalg.norm(tracks.pixels[view, candidates] - tracks.pixels[view, p], axis=1)
        chosen = candidates[np.argsort(d, kind="stable")[:k]]
        shared = int((visible[:, [p]] & visible[:, chosen]).sum())
        key = (shared, int(counts[view]))
        if best is None or key > best[0]:
            best = (key, int(view), [int(c) for c in chosen])
    return None if best is None else (best[1], best[2])


def build_neighbor_graph(tracks: TrackSet, k: int = DEFAULT_K, ref_view: Optional[int] = None) -> NeighborGraph:
    """
    Build a symmetric k-nearest-neighbor graph in the pixel space of one view.

    Args:
        tracks: Observations
        k: Neighbors per point
        ref_view: View whose pixels define distances (default: most visible points)

    Returns:
        NeighborGraph after union closure

    Raises:
        GraphConstructionError: if a point has no co-visible candidate neighbor
    """
    if k < 1:
        raise GraphConstructionError(f"k must be at least 1, got {k}")
    if ref_view is None:
        ref_view = tracks.default_ref_view()
    if not 0 <= ref_view < tracks.num_views:
        raise GraphConstructionError(f"reference view {ref_view} out of range")

    ref_points = tracks.visible_points(ref_view)
    if len(ref_points) < k + 1:
        raise GraphConstructionError(
            f"reference view {ref_view} has {len(ref_points)} visible points, need at least {k + 1}")

    nbrs: List[List[int]] = [[] for _ in range(tracks.num_points)]

    # k-NN among the points visible in the reference view
    xy = tracks.pixels[ref_view, ref_points]
    dist = cdist(xy, xy)
    np.fill_diagonal(dist, np.inf)
    for row, nn in zip(ref_points, _knn(dist, k)):
        nbrs[row] = [int(ref_points[n]) for n in nn]

    # Points missing from the reference view: attach in the view whose
    # nearest neighbors share the most views with the point
    for p in np.flatnonzero(~tracks.visible[ref_view]):
        chosen = _attach_missing_point(tracks, int(p), k)
        if chosen is None:
            raise GraphConstructionError(f"point {p} has no co-visible point in any view")
        view, nbrs[p] = chosen
        if len(nbrs[p]) < k:
            logger.warning("point %d attached with only %d neighbors (view %d)", p, len(nbrs[p]), view)

    # Union closure
    closed = [list(n) for n in nbrs]
    for i, n in enumerate(nbrs):
        for j in n:
            if i not in closed[j]:
                closed[j].append(i)
    adjacency = tuple(tuple(n[:len(nbrs[i])] + sorted(n[len(nbrs[i]):])) for i, n in enumerate(closed))
    graph = NeighborGraph(adjacency, k, ref_view)
    logger.debug("neighbor graph: %d points, %d edges, k=%d, ref view %d",
                 graph.num_points, len(graph.edges()), k, ref_view)
    return graph


def neighbor_pixel_spread(tracks: TrackSet, graph: NeighborGraph) -> np.ndarray:
    """
    Pixel distance between graph neighbors in every view.

    Returns:
        (V, E) array; NaN where an endpoint is invisible
    """
    edges = graph.edges()
    diff = tracks.pixels[:, edges[:, 0]] - tracks.pixels[:, edges[:, 1]]
    return np.linalg.norm(diff, axis=2)


def view_components(graph: NeighborGraph, visible: np.ndarray) -> List[np.ndarray]:
    """Connected components of the graph restricted to visible points."""
    points = np.flatnonzero(visible)
    edges = graph.edges()
    keep = visible[edges[:, 0]] & visible[edges[:, 1]]
    e = edges[keep]
    n = graph.num_points
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    groups: Dict[int, List[int]] = {}
    for p in points:
        groups.setdefault(int(labels[p]), []).append(int(p))
    return [np.array(g) for g in groups.values()]


@dataclass(frozen=True, eq=False)
class GeodesicTable:
    """Shortest-path distances from each source to every point (inf if unreachable)."""

    sources: np.ndarray
    distances: np.ndarray

    def reachable(self, i: int, j: int) -> bool:
        return bool(np.isfinite(self._row(i)[j]))

    def get(self, i: int, j: int) -> float:
        value = float(self._row(i)[j])
        if not np.isfinite(value):
            raise UnreachableError(f"points {i} and {j} are not connected")
        return value

    def _row(self, i: int) -> np.ndarray:
        hits = np.flatnonzero(self.sources == i)
        if len(hits) == 0:
            raise DataError(f"point {i} is not a geodesic source")
        return self.distances[hits[0]]


def length_matrix(num_points: int, lengths: EdgeLengths, mask: Optional[np.ndarray] = None) -> csr_matrix:
    """Symmetric sparse weight matrix of the given edges."""
    edges, w = lengths.edges, lengths.lengths
    if mask is not None:
        edges, w = edges[mask], w[mask]
    # csgraph drops explicit zeros; a zero-length edge becomes the smallest positive weight
    w = np.where(w > 0, w, np.finfo(float).tiny)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(num_points, num_points))


def geodesics(graph: NeighborGraph, lengths: EdgeLengths,
              sources: Optional[Sequence[int]] = None) -> GeodesicTable:
    """
    Dijkstra shortest paths over the graph weighted by `lengths`.

    Args:
        graph: Neighbor graph
        lengths: Lengths on the graph edges
        sources: Source points (default: all)

    Returns:
        GeodesicTable; unreachable pairs hold inf
    """
    if not lengths.matches(graph):
        lengths = lengths.restricted_to(graph)
    if sources is None:
        sources = np.arange(graph.num_points)
    sources = np.asarray(sources, dtype=int)
    W = length_matrix(graph.num_points, lengths)
    dist = dijkstra(W, directed=False, indices=sources)
    dist = np.atleast_2d(dist)
    dist[np.arange(len(sources)), sources] = 0.0
    return GeodesicTable(sources=sources, distances=dist)
