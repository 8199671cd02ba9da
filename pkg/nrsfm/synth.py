"""
Synthetic isometric scenes with ground truth, and evaluation against them.

Two families are generated from a flat rectangular grid: cylindrical
bending (one radius per view) and a hinge fold about the middle column
(one angle per view). Both are exactly isometric, so the flat grid
distances are the true geodesic template.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from camera import Intrinsics
from config import SynthConfig
from errors import DataError, ParameterError
from graph import EdgeLengths, NeighborGraph
from io_formats import (load_depths, load_intrinsics, load_template, load_tracks, read_json, save_depths,
                        save_intrinsics, save_template, save_tracks, write_json)
from tracks import DepthField, Reconstruction, TrackSet

logger = logging.getLogger(__name__)

POSE_TILT_DEG = 12.0
POSE_SHIFT = 0.05

BUNDLE_FILES = {
    "tracks": "tracks.csv",
    "intrinsics": "intrinsics.json",
    "depths": "depths_gt.csv",
    "template": "template.csv",
    "manifest": "manifest.json",
}


class Family(Enum):
    CYLINDER = "cylinder"
    HINGE = "hinge"


def flat_grid(rows: int, cols: int, spacing: float) -> np.ndarray:
    """(rows * cols, 2) template coordinates, centered, point n = r * cols + c."""
    c, r = np.meshgrid(np.arange(cols), np.arange(rows))
    x = (c.ravel() - (cols - 1) / 2.0) * spacing
    y = (r.ravel() - (rows - 1) / 2.0) * spacing
    return np.stack([x, y], axis=1)


def grid_edges(rows: int, cols: int) -> np.ndarray:
    """4-connected grid edges (i < j)."""
    idx = np.arange(rows * cols).reshape(rows, cols)
    horizontal = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vertical = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    edges = np.vstack([horizontal, vertical])
    return edges[np.lexsort((edges[:, 1], edges[:, 0]))]


def bend_cylinder(grid: np.ndarray, radius: float) -> np.ndarray:
    """Wrap the grid's x axis onto a cylinder of the given radius (inf: flat)."""
    x, y = grid[:, 0], grid[:, 1]
    if not np.isfinite(radius):
        return np.stack([x, y, np.zeros_like(x)], axis=1)
    theta = x / radius
    return np.stack([radius * np.sin(theta), y, radius * (1.0 - np.cos(theta))], axis=1)


def fold_hinge(grid: np.ndarray, angle_deg: float) -> np.ndarray:
    """Fold both halves away from the camera about the line x = 0; the opening is 180 - angle."""
    x, y = grid[:, 0], grid[:, 1]
    half = np.radians(angle_deg) / 2.0
    return np.stack([x * np.cos(half), y, np.abs(x) * np.sin(half)], axis=1)


def _rotation(ax: float, ay: float, az: float) -> np.ndarray:
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def random_poses(views: int, depth: float, rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Small random tilts and shifts around the surface placed at `depth` on the optical axis."""
    tilt = np.radians(POSE_TILT_DEG)
    poses = []
    for _ in range(views):
        angles = rng.uniform(-tilt, tilt, size=3)
        shift = rng.uniform(-POSE_SHIFT, POSE_SHIFT, size=2)
        poses.append((_rotation(*angles), np.array([shift[0], shift[1], depth])))
    return poses


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """
    Ground truth of a generated sequence.

    deformation holds the per-view radius (cylinder) or fold angle in
    degrees (hinge); rotations and translations map the deformed grid
    into each camera frame.
    """

    family: Family
    rows: int
    cols: int
    spacing: float
    deformation: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    intrinsics: Intrinsics
    noise: float = 0.0
    drop_rate: float = 0.0
    seed: int = 0
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        grid = self.grid
        shapes = []
        for view, param in enumerate(self.deformation):
            local = bend_cylinder(grid, param) if self.family is Family.CYLINDER else fold_hinge(grid, param)
            shapes.append(local @ self.rotations[view].T + self.translations[view])
        object.__setattr__(self, "points", np.stack(shapes))

    @property
    def grid(self) -> np.ndarray:
        return flat_grid(self.rows, self.cols, self.spacing)

    @property
    def num_views(self) -> int:
        return len(self.deformation)

    @property
    def num_points(self) -> int:
        return self.rows * self.cols

    @property
    def depths(self) -> np.ndarray:
        """(V, N) ground-truth depths (camera z)."""
        return self.points[..., 2]

    def template_distance(self, i: int, j: int) -> float:
        grid = self.grid
        return float(np.linalg.norm(grid[i] - grid[j]))

    def template_for(self, graph: NeighborGraph) -> EdgeLengths:
        """True geodesic lengths on the edges of `graph` (flat grid distances)."""
        edges = graph.edges()
        grid = self.grid
        return EdgeLengths(edges, np.linalg.norm(grid[edges[:, 0]] - grid[edges[:, 1]], axis=1))

    def all_pairs_template(self) -> EdgeLengths:
        i, j = np.triu_indices(self.num_points, k=1)
        grid = self.grid
        return EdgeLengths(np.stack([i, j], axis=1), np.linalg.norm(grid[i] - grid[j], axis=1))

    def unroll(self, view: int) -> np.ndarray:
        """Flat coordinates recovered from the 3D points of one view."""
        local = (self.points[view] - self.translations[view]) @ self.rotations[view]
        if self.family is Family.HINGE:
            u = np.sign(local[:, 0]) * np.hypot(local[:, 0], local[:, 2])
            return np.stack([u, local[:, 1]], axis=1)
        radius = self.deformation[view]
        if not np.isfinite(radius):
            return local[:, :2]
        theta = np.arctan2(local[:, 0], radius - local[:, 2])
        return np.stack([radius * theta, local[:, 1]], axis=1)

    def isometry_error(self) -> float:
        """Largest relative error of grid-edge geodesics, recomputed from the 3D points."""
        edges = grid_edges(self.rows, self.cols)
        worst = 0.0
        for view in range(self.num_views):
            flat = self.unroll(view)
            geo = np.linalg.norm(flat[edges[:, 0]] - flat[edges[:, 1]], axis=1)
            worst = max(worst, float(np.max(np.abs(geo - self.spacing) / self.spacing)))
        return worst

    def depth_field(self, tracks: TrackSet) -> DepthField:
        return DepthField.from_depths(self.depths, tracks, self.intrinsics, {"ground_truth": True})

    def reconstruction(self, tracks: TrackSet) -> Reconstruction:
        return Reconstruction(tracks, self.depth_field(tracks))

    def to_manifest(self) -> Dict:
        return {
            "family": self.family.value,
            "rows": self.rows,
            "cols": self.cols,
            "spacing": self.spacing,
            "deformation": [float(d) if np.isfinite(d) else None for d in self.deformation],
            "rotations": self.rotations.tolist(),
            "translations": self.translations.tolist(),
            "intrinsics": self.intrinsics.to_dict(),
            "noise": self.noise,
            "drop_rate": self.drop_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_manifest(cls, data: Dict) -> "SyntheticScene":
        try:
            return cls(
                family=Family(data["family"]),
                rows=int(data["rows"]),
                cols=int(data["cols"]),
                spacing=float(data["spacing"]),
                deformation=np.array([np.inf if d is None else d for d in data["deformation"]], dtype=float),
                rotations=np.array(data["rotations"], dtype=float),
                translations=np.array(data["translations"], dtype=float),
                intrinsics=Intrinsics(**data["intrinsics"]),
                noise=float(data["noise"]),
                drop_rate=float(data["drop_rate"]),
                seed=int(data["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid scene manifest: {exc}") from None


def _observe(scene: SyntheticScene, rng: np.random.Generator) -> TrackSet:
    K = scene.intrinsics
    bad = np.flatnonzero(np.any(scene.depths <= 0, axis=1))
    if len(bad):
        raise ParameterError(f"points behind the camera in views {bad.tolist()}")
    exact = K.project(scene.points)
    outside = (exact[..., 0] < 0) | (exact[..., 0] > K.width) | (exact[..., 1] < 0) | (exact[..., 1] > K.height)
    bad = np.flatnonzero(outside.any(axis=1))
    if len(bad):
        raise ParameterError(f"projection outside the {K.width:g}x{K.height:g} image in views {bad.tolist()}")

    pixels = exact + (rng.normal(0.0, scene.noise, size=exact.shape) if scene.noise > 0 else 0.0)
    visible = np.ones(exact.shape[:2], dtype=bool)
    if scene.drop_rate > 0:
        visible = rng.random(visible.shape) >= scene.drop_rate
        for point in np.flatnonzero(~visible.any(axis=0)):
            visible[rng.integers(scene.num_views), point] = True
    return TrackSet(pixels, visible)


def _poses(views: int, depth: float, poses, rng) -> Tuple[np.ndarray, np.ndarray]:
    if poses is None:
        poses = random_poses(views, depth, rng)
    if len(poses) != views:
        raise ParameterError(f"{len(poses)} poses given for {views} views")
    return np.stack([np.asarray(R, dtype=float) for R, _ in poses]), np.stack([np.asarray(t, dtype=float) for _, t in poses])


def generate_cylinder_bend(rows: int, cols: int, spacing: float, radii: Sequence[float], intrinsics: Intrinsics,
                           depth: float = 1.5, noise: float = 0.0, drop_rate: float = 0.0,
                           poses: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None,
                           seed: int = 0) -> Tuple[SyntheticScene, TrackSet, EdgeLengths]:
    """
    Flat grid bent onto per-view cylinders, posed and projected.

    Args:
        rows, cols, spacing: Template grid
        radii: One radius per view (inf for a flat view)
        intrinsics: Ground-truth camera
        depth: Distance of the surface along the optical axis
        noise: Pixel noise standard deviation
        drop_rate: Probability of dropping an observation
        poses: (R, t) per view; random small tilts when None
        seed: RNG seed for poses, noise and visibility

    Returns:
        (scene, tracks, template over all point pairs)

    Raises:
        ParameterError: on self-intersecting radii or points outside the image
    """
    radii = np.asarray(radii, dtype=float)
    width = (cols - 1) * spacing
    tight = np.flatnonzero(~(radii > width / np.pi))
    if len(tight):
        raise ParameterError(f"radius {radii[tight[0]]} in view {tight[0]} wraps the "
                             f"{width:g}-wide grid past half a turn")
    rng = np.random.default_rng(seed)
    R, t = _poses(len(radii), depth, poses, rng)
    scene = SyntheticScene(Family.CYLINDER, rows, cols, spacing, radii, R, t, intrinsics, noise, drop_rate, seed)
    tracks = _observe(scene, rng)
    logger.info("cylinder scene: %d points, %d views, radii %.3g..%.3g", scene.num_points,
                scene.num_views, radii.min(), radii.max())
    return scene, tracks, scene.all_pairs_template()


def generate_hinge_fold(rows: int, cols: int, spacing: float, angles_deg: Sequence[float], intrinsics: Intrinsics,
                        depth: float = 1.5, noise: float = 0.0, drop_rate: float = 0.0,
                        poses: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None,
                        seed: int = 0) -> Tuple[SyntheticScene, TrackSet, EdgeLengths]:
    """Flat grid folded about its middle column by a per-view angle (degrees); see generate_cylinder_bend."""
    angles = np.asarray(angles_deg, dtype=float)
    if np.any((angles < 0) | (angles >= 180)):
        raise ParameterError(f"fold angles must lie in [0, 180), got {angles.tolist()}")
    rng = np.random.default_rng(seed)
    R, t = _poses(len(angles), depth, poses, rng)
    scene = SyntheticScene(Family.HINGE, rows, cols, spacing, angles, R, t, intrinsics, noise, drop_rate, seed)
    tracks = _observe(scene, rng)
    logger.info("hinge scene: %d points, %d views, folds %.1f..%.1f deg", scene.num_points,
                scene.num_views, angles.min(), angles.max())
    return scene, tracks, scene.all_pairs_template()


def generate_scene(config: SynthConfig, seed: int = 0) -> Tuple[SyntheticScene, TrackSet, EdgeLengths]:
    """Scene described by a SynthConfig (radii or fold angles swept linearly over the views)."""
    K = Intrinsics(fx=config.focal, fy=config.focal, cx=config.width / 2.0, cy=config.height / 2.0,
                   width=config.width, height=config.height)
    common = dict(depth=config.depth, noise=config.noise, drop_rate=config.drop_rate, seed=seed)
    if config.family == Family.HINGE.value:
        angles = np.linspace(config.fold_min, config.fold_max, config.views)
        return generate_hinge_fold(config.rows, config.cols, config.spacing, angles, K, **common)
    radii = np.linspace(config.radius_min, config.radius_max, config.views)
    return generate_cylinder_bend(config.rows, config.cols, config.spacing, radii, K, **common)


# Evaluation

class Alignment(Enum):
    NONE = "none"
    GLOBAL_SCALE = "globalScale"


@dataclass
class ViewMetrics:
    view: int
    rmse: float
    mean_error: float
    relative_error: float


@dataclass
class EvaluationReport:
    rmse: float
    mean_error: float
    relative_error: float
    scale: float
    focal_error_pct: float
    pp_error: float
    per_view: List[ViewMetrics]

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean_error": self.mean_error,
            "relative_error": self.relative_error,
            "scale": self.scale,
            "focal_error_pct": self.focal_error_pct,
            "pp_error": self.pp_error,
            "per_view": [vars(v) for v in self.per_view],
        }


def evaluate(recon: Reconstruction, scene: SyntheticScene,
             align: Union[str, Alignment] = Alignment.GLOBAL_SCALE) -> EvaluationReport:
    """
    3D errors of a reconstruction against the ground truth.

    With GLOBAL_SCALE the reconstruction is first multiplied by the single
    least-squares scale s = <X, X_gt> / <X, X> over every visible point.
    relative_error is the mean 3D error over the mean ground-truth depth.

    Raises:
        DataError: if the reconstruction and scene share no finite point
    """
    align = Alignment(align)
    if recon.tracks.visible.shape != scene.depths.shape:
        raise DataError(f"reconstruction {recon.tracks.visible.shape} and scene {scene.depths.shape} "
                        "are not index-aligned")
    X = recon.points()
    gt = scene.points
    mask = recon.tracks.visible & np.all(np.isfinite(X), axis=2)
    if not mask.any():
        raise DataError("reconstruction has no finite point to compare")

    scale = 1.0
    if align is Alignment.GLOBAL_SCALE:
        denom = float(np.sum(X[mask] * X[mask]))
        if denom > 0:
            scale = float(np.sum(X[mask] * gt[mask])) / denom
    err = np.linalg.norm(scale * X - gt, axis=2)
    mean_depth = float(np.mean(gt[..., 2][mask]))

    per_view = []
    for view in range(recon.tracks.num_views):
        e = err[view][mask[view]]
        if len(e) == 0:
            continue
        per_view.append(ViewMetrics(view, float(np.sqrt(np.mean(e ** 2))), float(e.mean()),
                                    float(e.mean()) / float(np.mean(gt[view, :, 2][mask[view]]))))

    K, K_gt = recon.intrinsics, scene.intrinsics
    return EvaluationReport(
        rmse=float(np.sqrt(np.mean(err[mask] ** 2))),
        mean_error=float(err[mask].mean()),
        relative_error=float(err[mask].mean()) / mean_depth,
        scale=scale,
        focal_error_pct=100.0 * abs(K.focal - K_gt.focal) / K_gt.focal,
        pp_error=float(np.hypot(K.cx - K_gt.cx, K.cy - K_gt.cy)) / K_gt.diagonal,
        per_view=per_view,
    )


# Scene bundles

def save_scene_bundle(directory: Union[str, Path], scene: SyntheticScene, tracks: TrackSet,
                      template: EdgeLengths) -> Dict[str, Path]:
    """Write tracks, intrinsics, ground-truth depths, template and manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {key: directory / name for key, name in BUNDLE_FILES.items()}
    save_tracks(paths["tracks"], tracks)
    save_intrinsics(paths["intrinsics"], scene.intrinsics)
    save_depths(paths["depths"], scene.depth_field(tracks))
    save_template(paths["template"], template)
    manifest = scene.to_manifest()
    manifest["files"] = dict(BUNDLE_FILES)
    write_json(paths["manifest"], manifest)
    return paths


def load_scene_bundle(directory: Union[str, Path]) -> Tuple[SyntheticScene, TrackSet, EdgeLengths]:
    """
    Read a bundle back; the 3D ground truth is regenerated from the
    manifest and checked against the stored depths.
    """
    directory = Path(directory)
    manifest_path = directory / BUNDLE_FILES["manifest"]
    if not manifest_path.exists():
        raise DataError(f"{directory}: not a scene bundle (no {BUNDLE_FILES['manifest']})")
    scene = SyntheticScene.from_manifest(read_json(manifest_path))
    tracks = load_tracks(directory / BUNDLE_FILES["tracks"])
    if tracks.visible.shape != scene.depths.shape:
        raise DataError(f"{directory}: tracks {tracks.visible.shape} do not match the manifest {scene.depths.shape}")
    K = load_intrinsics(directory / BUNDLE_FILES["intrinsics"])
    stored = load_depths(directory / BUNDLE_FILES["depths"], tracks, K)
    mask = tracks.visible
    drift = np.abs(stored.depth[mask] - scene.depths[mask]) / scene.depths[mask]
    if drift.size and drift.max() > 1e-9:
        raise DataError(f"{directory}: stored depths disagree with the manifest (relative {drift.max():.2e})")
    return scene, tracks, load_template(directory / BUNDLE_FILES["template"])
