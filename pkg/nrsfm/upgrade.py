"""
Transport of a reconstruction between intrinsics, and the per-view scale
normalization used when comparing reconstructions across views.

Ranges a = lambda ||K^-1 u|| do not depend on K, so depths computed under a
guess K_hat move to any other K by lambda = a / ||K^-1 u||.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from scipy.sparse.csgraph import dijkstra

from camera import Intrinsics
from errors import ConfigError, DataError
from graph import EdgeLengths, NeighborGraph, length_matrix
from tracks import DepthField, Reconstruction, TrackSet

logger = logging.getLogger(__name__)

SPARSE_MEAN_DEGREE = 6.0


class DistanceMode(Enum):
    EUCLIDEAN = "euclidean"
    GEODESIC = "geodesic"


def resolve_distance_mode(mode: Union[str, DistanceMode, None], graph: NeighborGraph) -> DistanceMode:
    """'auto' (or None) picks geodesics for sparse graphs (mean degree below 6)."""
    if isinstance(mode, DistanceMode):
        return mode
    if mode in (None, "auto"):
        chosen = DistanceMode.GEODESIC if graph.mean_degree() < SPARSE_MEAN_DEGREE else DistanceMode.EUCLIDEAN
        logger.debug("distance mode auto -> %s (mean degree %.2f)", chosen.value, graph.mean_degree())
        return chosen
    try:
        return DistanceMode(mode)
    except ValueError:
        raise ConfigError(f"unknown distance mode '{mode}'") from None


@dataclass(frozen=True, eq=False)
class UpgradeContext:
    """Depths produced under depths.intrinsics, to be moved to `target`."""

    depths: DepthField
    target: Intrinsics
    tracks: TrackSet
    source: Optional[Intrinsics] = None

    def __post_init__(self):
        if self.source is not None and self.source != self.depths.intrinsics:
            raise DataError(f"depths were computed under {self.depths.intrinsics}, not {self.source}")
        if self.depths.depth.shape != self.tracks.visible.shape:
            raise DataError(f"depth field shape {self.depths.depth.shape} does not match tracks")


def upgrade_depths(ctx: UpgradeContext) -> DepthField:
    """
    lambda = lambda_hat ||K_hat^-1 u|| / ||K^-1 u|| for every visible entry.

    The returned field keeps the source ranges and records the target
    intrinsics as its provenance.
    """
    source = ctx.depths
    if ctx.target == source.intrinsics:
        return DepthField(depth=source.depth.copy(), ranges=source.ranges.copy(), visible=source.visible,
                          intrinsics=source.intrinsics, stats=dict(source.stats))
    norms = ctx.tracks.ray_norms(ctx.target)
    depth = source.ranges / norms
    stats = dict(source.stats)
    stats["upgraded_from"] = source.intrinsics.to_dict()
    return DepthField(depth=depth, ranges=source.ranges.copy(), visible=source.visible,
                      intrinsics=ctx.target, stats=stats)


def upgrade(depths: DepthField, tracks: TrackSet, target: Intrinsics) -> DepthField:
    return upgrade_depths(UpgradeContext(depths, target, tracks))


def upgraded_points(ranges: np.ndarray, tracks: TrackSet, intrinsics: Intrinsics) -> np.ndarray:
    """(V, N, 3) points at the given ranges along the unit sightlines of K."""
    rays = tracks.rays(intrinsics)
    unit = rays / np.linalg.norm(rays, axis=2, keepdims=True)
    return ranges[..., None] * unit


def upgraded_edge_lengths(ranges: np.ndarray, tracks: TrackSet, intrinsics: Intrinsics,
                          edges: np.ndarray) -> np.ndarray:
    """(V, E) upgraded neighbor distances; NaN where an endpoint is invisible."""
    P = upgraded_points(ranges, tracks, intrinsics)
    return np.linalg.norm(P[:, edges[:, 0]] - P[:, edges[:, 1]], axis=2)


def view_geodesic_matrix(edges: np.ndarray, lengths: np.ndarray, num_points: int) -> np.ndarray:
    """All-pairs shortest paths over the finite-length edges of one view (inf if unreachable)."""
    valid = np.isfinite(lengths)
    weights = EdgeLengths(edges, np.where(valid, lengths, 0.0))
    W = length_matrix(num_points, weights, mask=valid)
    dist = dijkstra(W, directed=False)
    np.fill_diagonal(dist, 0.0)
    return dist


def view_length_sums(lengths: np.ndarray, edges: np.ndarray, num_points: int,
                     mode: DistanceMode = DistanceMode.EUCLIDEAN) -> np.ndarray:
    """
    Per-view sum of distances used to fix the scale of each view.

    Euclidean: sum over directed neighbor pairs of the upgraded lengths.
    Geodesic: sum over ordered pairs of the finite shortest-path lengths.

    Raises:
        DataError: if a view has no usable edge
    """
    sums = np.zeros(lengths.shape[0])
    for view, row in enumerate(lengths):
        usable = np.isfinite(row)
        if not usable.any():
            raise DataError(f"view {view} has no neighbor edge with both endpoints visible")
        if mode is DistanceMode.EUCLIDEAN:
            sums[view] = 2.0 * row[usable].sum()
        else:
            dist = view_geodesic_matrix(edges, row, num_points)
            sums[view] = dist[np.isfinite(dist)].sum()
    return sums


def normalize_view_scales(recon: Reconstruction, graph: NeighborGraph,
                          mode: Union[str, DistanceMode] = DistanceMode.EUCLIDEAN) -> np.ndarray:
    """
    Scale factors s_l such that scaling view l by s_l makes its distance sum 1.

    Args:
        recon: Reconstruction (distances use its intrinsics)
        graph: Neighbor graph
        mode: EUCLIDEAN (neighbor distances) or GEODESIC (shortest paths)

    Returns:
        (V,) array of scale factors

    Raises:
        DataError: if a view has no usable edge or zero extent
    """
    mode = resolve_distance_mode(mode, graph)
    edges = graph.edges()
    lengths = upgraded_edge_lengths(recon.depths.ranges, recon.tracks, recon.intrinsics, edges)
    sums = view_length_sums(lengths, edges, graph.num_points, mode)
    bad = np.flatnonzero(~(sums > 0))
    if len(bad):
        raise DataError(f"view {bad[0]} has zero extent; its scale cannot be fixed")
    return 1.0 / sums


def apply_view_scales(depths: DepthField, scales: np.ndarray) -> DepthField:
    """New field with view l multiplied by scales[l]."""
    return depths.scaled(scales)
