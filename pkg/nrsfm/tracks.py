"""
Observation and reconstruction containers.

TrackSet holds pixel tracks with a visibility mask, DepthField the
per-view depths produced under some intrinsics, and Reconstruction the
pair (tracks, depths) with derived 3D points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from camera import Intrinsics
from errors import DataError, TrackError


@dataclass(frozen=True, eq=False)
class TrackSet:
    """
    Pixel observations u_i^l of N points across V views.

    pixels has shape (V, N, 2) and is NaN where a point is not visible;
    visible has shape (V, N).
    """

    pixels: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=float)
        visible = np.array(self.visible, dtype=bool)
        if pixels.ndim != 3 or pixels.shape[2] != 2:
            raise TrackError(f"pixels must have shape (V, N, 2), got {pixels.shape}")
        if visible.shape != pixels.shape[:2]:
            raise TrackError(f"visibility mask shape {visible.shape} does not match {pixels.shape[:2]}")

        finite = np.all(np.isfinite(pixels), axis=2)
        bad = np.argwhere(visible & ~finite)
        if len(bad):
            view, point = bad[0]
            raise TrackError(f"non-finite pixel for visible point {point} in view {view}")

        per_view = visible.sum(axis=1)
        for view in np.flatnonzero(per_view < 2):
            raise TrackError(f"view {view} has {per_view[view]} visible points (need at least 2)")
        per_point = visible.sum(axis=0)
        for point in np.flatnonzero(per_point < 1):
            raise TrackError(f"point {point} is not visible in any view")

        pixels[~visible] = np.nan
        pixels.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "visible", visible)

    @property
    def num_views(self) -> int:
        return self.pixels.shape[0]

    @property
    def num_points(self) -> int:
        return self.pixels.shape[1]

    def homogeneous(self) -> np.ndarray:
        """(V, N, 3) homogeneous lift (x, y, 1); NaN where invisible."""
        ones = np.where(self.visible, 1.0, np.nan)[..., None]
        return np.concatenate([self.pixels, ones], axis=2)

    def rays(self, intrinsics: Intrinsics) -> np.ndarray:
        """(V, N, 3) sightlines K^-1 u; NaN where invisible."""
        return intrinsics.rays(self.pixels)

    def ray_norms(self, intrinsics: Intrinsics) -> np.ndarray:
        """(V, N) norms ||K^-1 u||; NaN where invisible."""
        return np.linalg.norm(self.rays(intrinsics), axis=2)

    def visible_points(self, view: int) -> np.ndarray:
        return np.flatnonzero(self.visible[view])

    def default_ref_view(self) -> int:
        """View with the most visible points (lowest index on ties)."""
        return int(np.argmax(self.visible.sum(axis=1)))

    def subset_points(self, points: Sequence[int]) -> "TrackSet":
        points = np.asarray(points, dtype=int)
        return TrackSet(self.pixels[:, points], self.visible[:, points])

    def subset_views(self, views: Sequence[int]) -> "TrackSet":
        views = np.asarray(views, dtype=int)
        return TrackSet(self.pixels[views], self.visible[views])

    @staticmethod
    def stack_views(parts: Iterable["TrackSet"]) -> "TrackSet":
        parts = list(parts)
        return TrackSet(np.concatenate([p.pixels for p in parts], axis=0),
                        np.concatenate([p.visible for p in parts], axis=0))


@dataclass(frozen=True, eq=False)
class DepthField:
    """
    Depths lambda_i^l and ranges a_i^l = lambda_i^l ||K^-1 u_i^l||.

    The intrinsics the depths were computed under are carried with the
    field, so an upgrade from the wrong source camera is detectable.
    """

    depth: np.ndarray
    ranges: np.ndarray
    visible: np.ndarray
    intrinsics: Intrinsics
    stats: Dict = field(default_factory=dict)

    @classmethod
    def from_depths(cls, depth: np.ndarray, tracks: TrackSet, intrinsics: Intrinsics,
                    stats: Optional[Dict] = None) -> "DepthField":
        depth = np.where(tracks.visible, np.asarray(depth, dtype=float), np.nan)
        ranges = depth * tracks.ray_norms(intrinsics)
        return cls(depth=depth, ranges=ranges, visible=tracks.visible.copy(),
                   intrinsics=intrinsics, stats=dict(stats or {}))

    @classmethod
    def from_ranges(cls, ranges: np.ndarray, tracks: TrackSet, intrinsics: Intrinsics,
                    stats: Optional[Dict] = None) -> "DepthField":
        ranges = np.where(tracks.visible, np.asarray(ranges, dtype=float), np.nan)
        depth = ranges / tracks.ray_norms(intrinsics)
        return cls(depth=depth, ranges=ranges, visible=tracks.visible.copy(),
                   intrinsics=intrinsics, stats=dict(stats or {}))

    @property
    def num_views(self) -> int:
        return self.depth.shape[0]

    @property
    def num_points(self) -> int:
        return self.depth.shape[1]

    def check_ranges(self, tracks: TrackSet, rtol: float = 1e-12) -> float:
        """Largest relative mismatch between stored and recomputed ranges."""
        recomputed = self.depth * tracks.ray_norms(self.intrinsics)
        mask = self.visible
        if not mask.any():
            return 0.0
        err = np.abs(recomputed[mask] - self.ranges[mask]) / np.maximum(np.abs(self.ranges[mask]), 1e-300)
        worst = float(err.max())
        if worst > rtol:
            raise DataError(f"ranges inconsistent with depths (relative error {worst:.3e})")
        return worst

    def scaled(self, scales: np.ndarray) -> "DepthField":
        """Depths of view l multiplied by scales[l] (or a scalar)."""
        scales = np.broadcast_to(np.asarray(scales, dtype=float), (self.num_views,))[:, None]
        return DepthField(depth=self.depth * scales, ranges=self.ranges * scales,
                          visible=self.visible, intrinsics=self.intrinsics, stats=dict(self.stats))

    def subset_views(self, views: Sequence[int]) -> "DepthField":
        views = np.asarray(views, dtype=int)
        return DepthField(depth=self.depth[views], ranges=self.ranges[views],
                          visible=self.visible[views], intrinsics=self.intrinsics,
                          stats=dict(self.stats))


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """Tracks plus the depth field solved for them."""

    tracks: TrackSet
    depths: DepthField

    def __post_init__(self):
        if self.depths.depth.shape != self.tracks.visible.shape:
            raise DataError(
                f"depth field shape {self.depths.depth.shape} does not match tracks {self.tracks.visible.shape}")

    @property
    def intrinsics(self) -> Intrinsics:
        return self.depths.intrinsics

    def points(self) -> np.ndarray:
        """(V, N, 3) back-projected points X = lambda K^-1 u; NaN where invisible."""
        return self.depths.depth[..., None] * self.tracks.rays(self.intrinsics)

    def view_points(self, view: int) -> np.ndarray:
        """(n, 3) visible points of one view, in point order."""
        return self.points()[view][self.tracks.visible[view]]

    def reprojection_error(self) -> float:
        """Largest pixel distance between projected points and tracks."""
        X = self.points()
        proj = self.intrinsics.project(X)
        err = np.linalg.norm(proj - self.tracks.pixels, axis=2)
        return float(np.nanmax(err))

    def edge_lengths_per_view(self, edges: np.ndarray) -> np.ndarray:
        """(V, E) 3D edge lengths; NaN when an endpoint is invisible."""
        X = self.points()
        return np.linalg.norm(X[:, edges[:, 0]] - X[:, edges[:, 1]], axis=2)
