"""
Growing a reconstruction.

New points are placed against an existing template-less reconstruction
with one cone program that also rescales the old points by a factor alpha
in [0, 1]. New views are solved template-based, the template being
harvested from the existing reconstruction. Densification chains both:
a seed reconstruction followed by disjoint batches of points.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from calib_template import calibrate_with_template
from camera import Intrinsics
from conic import ConicProgram, ProgramBuilder, require_optimal, solve_backend
from config import SolverConfig
from errors import DataError
from graph import EdgeLengths, NeighborGraph, build_neighbor_graph, geodesics, view_components
from io_formats import (array_hash, load_depths, load_template, read_json, save_depths,
                        save_reconstruction_ply, save_template, write_json)
from reconstruct import NrsfmProblem, SfTProblem, reconstruct_nrsfm, reconstruct_sft
from tracks import DepthField, Reconstruction, TrackSet
from upgrade import upgrade

logger = logging.getLogger(__name__)

DENSIFY_GRID = 8
MIN_SEED_POINTS = 150


def _same_pixels(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))


@dataclass(frozen=True, eq=False)
class AugmentProblem:
    """
    A base reconstruction over points P = 0..P-1 and joint tracks over
    P followed by the new points Q.

    base_lengths are the neighbor lengths that came with the base; when
    absent they are harvested from the base itself.
    """

    base: Reconstruction
    tracks: TrackSet
    graph: NeighborGraph
    intrinsics: Intrinsics
    base_lengths: Optional[EdgeLengths] = None

    def __post_init__(self):
        P = self.base.tracks.num_points
        if self.tracks.num_views != self.base.tracks.num_views:
            raise DataError(f"new tracks have {self.tracks.num_views} views, base has {self.base.tracks.num_views}")
        if self.tracks.num_points < P:
            raise DataError(f"joint tracks have {self.tracks.num_points} points, fewer than the base {P}")
        if not _same_pixels(self.tracks.pixels[:, :P], self.base.tracks.pixels):
            raise DataError("the first points of the joint tracks must be the base points")
        if self.graph.num_points != self.tracks.num_points:
            raise DataError(f"graph has {self.graph.num_points} points, joint tracks have {self.tracks.num_points}")
        if self.base.intrinsics != self.intrinsics:
            object.__setattr__(self, "base", Reconstruction(
                self.base.tracks, upgrade(self.base.depths, self.base.tracks, self.intrinsics)))

        visible = self.tracks.visible
        for q in range(P, self.tracks.num_points):
            nbrs = np.array(self.graph.neighbors(q), dtype=int)
            if len(nbrs) == 0 or not np.any(visible[:, q][:, None] & visible[:, nbrs]):
                raise DataError(f"new point {q} has no neighbor co-visible with it in any view")

    @classmethod
    def from_new_tracks(cls, base: Reconstruction, new_tracks: TrackSet, graph: NeighborGraph,
                        intrinsics: Intrinsics, base_lengths: Optional[EdgeLengths] = None) -> "AugmentProblem":
        if new_tracks.num_views != base.tracks.num_views:
            raise DataError(f"new tracks have {new_tracks.num_views} views, base has {base.tracks.num_views}")
        joint = TrackSet(np.concatenate([base.tracks.pixels, new_tracks.pixels], axis=1),
                         np.concatenate([base.tracks.visible, new_tracks.visible], axis=1))
        return cls(base, joint, graph, intrinsics, base_lengths)

    @property
    def num_old(self) -> int:
        return self.base.tracks.num_points

    @property
    def num_new(self) -> int:
        return self.tracks.num_points - self.num_old

    def old_lengths(self) -> EdgeLengths:
        if self.base_lengths is not None:
            return self.base_lengths
        old = self.graph.subgraph(np.arange(self.num_old))
        return self_template(self.base, old)


@dataclass
class AugmentEncoding:
    program: ConicProgram
    new_index: np.ndarray
    edges: np.ndarray
    budgeted: np.ndarray
    scale: float


@dataclass
class AugmentResult:
    """
    alpha rescales the base; new_depths are the depths of Q in that
    rescaled frame; lengths are the edges touching Q.
    """

    alpha: float
    new_depths: Optional[DepthField]
    reconstruction: Reconstruction
    lengths: EdgeLengths
    scale_drift: float
    stats: Dict = field(default_factory=dict)


def encode_augment(problem: AugmentProblem, budget_new_old: bool = True) -> AugmentEncoding:
    """
    Variables: alpha, then the visible depths of the new points in
    (view, point) order, then one length per edge touching Q that is
    co-visible in some view. Depths and lengths are scaled by B (twice the
    number of kept edges) so the program is well conditioned.

    With budget_new_old the budget covers every edge touching Q; otherwise
    only edges between two new points.
    """
    tracks, P = problem.tracks, problem.num_old
    visible = tracks.visible
    new_visible = visible[:, P:]
    new_index = np.full(new_visible.shape, -1, dtype=int)
    new_index[new_visible] = 1 + np.arange(int(new_visible.sum()))
    n_new = int(new_visible.sum())

    all_edges = problem.graph.edges()
    touching = all_edges[all_edges[:, 1] >= P]
    active = visible[:, touching[:, 0]] & visible[:, touching[:, 1]]
    covisible = active.any(axis=0)
    if not covisible.all():
        logger.warning("dropping %d new edges never co-visible in any view", int((~covisible).sum()))
    edges, active = touching[covisible], active[:, covisible]
    if len(edges) == 0:
        raise DataError("no edge touching the new points is co-visible in any view")
    budgeted = np.ones(len(edges), dtype=bool) if budget_new_old else edges[:, 0] >= P
    if not budgeted.any():
        raise DataError("no edge between two new points; the length budget is empty")

    B = 2.0 * len(edges)
    first_e = 1 + n_new
    rays = tracks.rays(problem.intrinsics)
    lam = problem.base.depths.depth
    old_sum = problem.old_lengths().directed_sum()
    Lambda = float(np.nansum(lam))

    builder = ProgramBuilder(first_e + len(edges))
    budget = {first_e + e: 2.0 for e in np.flatnonzero(budgeted)}
    budget[0] = B * old_sum
    builder.add_equality(budget, B)
    builder.add_nonneg({0: 1.0})
    for view in range(tracks.num_views):
        for e in np.flatnonzero(active[view]):
            i, j = (int(v) for v in edges[e])
            zj = int(new_index[view, j - P])
            r_i, r_j = rays[view, i], rays[view, j]
            if i >= P:
                zi = int(new_index[view, i - P])
                tails = [({zi: float(r_i[k]), zj: -float(r_j[k])}, 0.0) for k in range(3)]
            else:
                tails = [({zj: float(r_j[k]), 0: -B * float(lam[view, i] * r_i[k])}, 0.0) for k in range(3)]
            builder.add_soc(({first_e + int(e): 1.0}, 0.0), tails)
    c = np.zeros(first_e + len(edges))
    c[0] = -B * Lambda
    c[1:first_e] = -1.0
    builder.set_objective(c)
    return AugmentEncoding(builder.build(), new_index, edges, budgeted, B)


def add_points(problem: AugmentProblem, solver: Optional[SolverConfig] = None,
               budget_new_old: bool = True) -> AugmentResult:
    """
    Place the new points against the base reconstruction.

    Maximizes alpha * (sum of base depths) + (sum of new depths) under the
    cone constraints of every edge touching Q and the length budget
    alpha * (base length sum) + (new length sum) = 1, with alpha >= 0.

    Args:
        problem: Base, joint tracks and joint graph
        solver: Solver settings
        budget_new_old: Count new-old edges in the budget (see encode_augment).
            False budgets only the edges between two new points and leaves
            new-old lengths free. A new point with no new neighbor then has
            an unbounded depth, so that form only suits batches in which
            every point has a new neighbor.

    Returns:
        AugmentResult; with Q empty alpha is 1 and the base is unchanged
    """
    solver = solver or SolverConfig()
    base, P = problem.base, problem.num_old
    if problem.num_new == 0:
        return AugmentResult(alpha=1.0, new_depths=None, reconstruction=base,
                             lengths=EdgeLengths(np.zeros((0, 2), dtype=int), np.zeros(0)),
                             scale_drift=float("nan"), stats={"iterations": 0, "solve_seconds": 0.0})

    enc = encode_augment(problem, budget_new_old)
    result = solve_backend(enc.program, solver.backend, solver.tol, solver.max_iter)
    require_optimal(result, "point augmentation")

    alpha = float(result.x[0])
    first_e = 1 + int((enc.new_index >= 0).sum())
    zeta = np.full(enc.new_index.shape, np.nan)
    seen = enc.new_index >= 0
    zeta[seen] = result.x[enc.new_index[seen]] / enc.scale
    lengths = EdgeLengths(enc.edges, np.maximum(result.x[first_e:] / enc.scale, 0.0))

    tracks = problem.tracks
    depth = np.concatenate([alpha * base.depths.depth, zeta], axis=1)
    stats = result.to_dict()
    stats.update(alpha=alpha, cone_violation=enc.program.cone_violation(result.x) / enc.scale,
                 num_new=problem.num_new)
    merged = DepthField.from_depths(depth, tracks, problem.intrinsics, stats)
    new_tracks = TrackSet(tracks.pixels[:, P:], tracks.visible[:, P:]) if _views_ok(tracks.visible[:, P:]) else None
    new_depths = None if new_tracks is None else DepthField.from_depths(zeta, new_tracks, problem.intrinsics)

    drift = scale_drift(lengths, problem.old_lengths(), alpha, P)
    logger.info("added %d points: alpha %.4f, scale drift %.3f, %d solver iterations",
                problem.num_new, alpha, drift, result.iterations)
    return AugmentResult(alpha=alpha, new_depths=new_depths, reconstruction=Reconstruction(tracks, merged),
                         lengths=lengths, scale_drift=drift, stats=stats)


def _views_ok(visible: np.ndarray) -> bool:
    return bool(np.all(visible.sum(axis=1) >= 2) and np.all(visible.any(axis=0)))


def scale_drift(new_lengths: EdgeLengths, old_lengths: EdgeLengths, alpha: float, num_old: int) -> float:
    """Mean new-old edge length over the mean rescaled old edge length (nan if either is empty)."""
    cross = new_lengths.lengths[new_lengths.edges[:, 0] < num_old]
    if len(cross) == 0 or len(old_lengths.lengths) == 0:
        return float("nan")
    old_mean = alpha * float(old_lengths.lengths.mean())
    return float(cross.mean() / old_mean) if old_mean > 0 else float("inf")


def self_template(recon: Reconstruction, graph: NeighborGraph,
                  target_graph: Optional[NeighborGraph] = None) -> EdgeLengths:
    """
    Template lengths harvested from a reconstruction.

    Each graph edge gets the median over views of its 3D length; edges
    never co-visible are left out. With a target graph, its edges missing
    from `graph` are filled with shortest-path lengths over the harvested
    edges.
    """
    edges = graph.edges()
    per_view = recon.edge_lengths_per_view(edges)
    seen = np.isfinite(per_view).any(axis=0)
    if not seen.all():
        i, j = edges[np.flatnonzero(~seen)[0]]
        logger.warning("self-template: %d edges never co-visible (first: (%d, %d))", int((~seen).sum()), i, j)
    harvested = EdgeLengths(edges[seen], np.nanmedian(per_view[:, seen], axis=0))
    if target_graph is None:
        return harvested

    table = harvested.as_dict()
    wanted = target_graph.edges()
    if all((int(i), int(j)) in table for i, j in wanted):
        return EdgeLengths(wanted, np.array([table[(int(i), int(j))] for i, j in wanted]))
    support = NeighborGraph.from_edges(graph.num_points, harvested.edges)
    dist = geodesics(support, harvested).distances
    out = {}
    unreachable = 0
    for i, j in wanted:
        key = (int(i), int(j))
        if key in table:
            out[key] = table[key]
        elif np.isfinite(dist[i, j]):
            out[key] = float(dist[i, j])
        else:
            unreachable += 1
    if unreachable:
        logger.warning("self-template: %d target edges have no path over reconstructed edges", unreachable)
    return EdgeLengths.from_mapping(out)


def add_views(recon: Reconstruction, graph: NeighborGraph, new_tracks: TrackSet, intrinsics: Intrinsics,
              calibrate: bool = False, solver: Optional[SolverConfig] = None, **calibration) -> DepthField:
    """
    Reconstruct new views of the same points template-based, using the
    self-template of `recon`.

    Args:
        recon: Existing reconstruction
        graph: Its neighbor graph
        new_tracks: Observations of the same points in the new views
        intrinsics: Camera of the new views (a guess when calibrate is set)
        calibrate: Estimate the new views' intrinsics with the template first
        solver: Solver settings
        **calibration: Passed to calibrate_with_template (hypotheses, seed, ...)

    Returns:
        DepthField of the new views, under the (possibly calibrated) intrinsics

    Raises:
        DataError: if the templated points seen by a new view are not connected
    """
    if new_tracks.num_points != recon.tracks.num_points:
        raise DataError(f"new views track {new_tracks.num_points} points, reconstruction has {recon.tracks.num_points}")
    template = self_template(recon, graph)
    support = NeighborGraph.from_edges(graph.num_points, template.edges, k=graph.k, ref_view=graph.ref_view)
    for view in range(new_tracks.num_views):
        components = view_components(support, new_tracks.visible[view])
        if len(components) > 1:
            smallest = min(components, key=len)
            raise DataError(f"new view {view}: observed points split into {len(components)} components; "
                            f"component {smallest[:5].tolist()} ({len(smallest)} points) is cut off")

    solver = solver or SolverConfig()
    if calibrate:
        result = calibrate_with_template(new_tracks, support, template, intrinsics, solver, **calibration)
        logger.info("new views calibrated: %s", result.intrinsics)
        return result.reconstruction.depths
    return reconstruct_sft(SfTProblem(new_tracks, support, template, intrinsics), solver)


@dataclass
class StageRecord:
    stage: int
    points_added: int
    total_points: int
    alpha: float
    scale_drift: float
    iterations: int
    solve_seconds: float


@dataclass
class Densification:
    reconstruction: Reconstruction
    lengths: EdgeLengths
    stages: List[StageRecord]
    resumed_from: Optional[int] = None

    def to_dict(self) -> dict:
        return {"stages": [asdict(s) for s in self.stages], "resumed_from": self.resumed_from,
                "num_points": self.reconstruction.tracks.num_points}


def _anchor_pixels(tracks: TrackSet, ref_view: int) -> np.ndarray:
    """Pixel of each point in the reference view, or in its first visible view."""
    first = np.argmax(tracks.visible, axis=0)
    own = tracks.pixels[first, np.arange(tracks.num_points)]
    return np.where(tracks.visible[ref_view][:, None], tracks.pixels[ref_view], own)


def plan_batches(tracks: TrackSet, seed_size: int, batch_size: int, rng: np.random.Generator,
                 ref_view: Optional[int] = None) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Random seed subset, then the rest split into spatially stratified
    batches: points are binned on a grid in the reference view and dealt
    out round-robin so every batch samples every cell.
    """
    N = tracks.num_points
    seed = np.sort(rng.choice(N, size=seed_size, replace=False))
    rest = np.setdiff1d(np.arange(N), seed)
    if len(rest) == 0:
        return seed, []
    ref = tracks.default_ref_view() if ref_view is None else ref_view
    loc = _anchor_pixels(tracks, ref)[rest]
    lo, hi = loc.min(axis=0), loc.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    cell_xy = np.minimum((DENSIFY_GRID * (loc - lo) / span).astype(int), DENSIFY_GRID - 1)
    cell = cell_xy[:, 0] * DENSIFY_GRID + cell_xy[:, 1]
    perm = rng.permutation(len(rest))
    order = perm[np.argsort(cell[perm], kind="stable")]
    count = math.ceil(len(rest) / batch_size)
    slot = np.arange(len(rest)) % count
    return seed, [np.sort(rest[order[slot == b]]) for b in range(count)]


class _Checkpoint:
    """Depths, lengths, PLY set and manifest of the last finished stage."""

    def __init__(self, directory: Union[str, Path], fingerprint: str):
        self.directory = Path(directory)
        self.fingerprint = fingerprint

    @property
    def manifest_path(self) -> Path:
        return self.directory / "manifest.json"

    def save(self, stage: int, placed: np.ndarray, recon: Reconstruction, lengths: EdgeLengths,
             stages: List[StageRecord]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        save_depths(self.directory / "depths.csv", recon.depths)
        save_template(self.directory / "lengths.csv", lengths)
        save_reconstruction_ply(self.directory / f"stage_{stage:03d}", recon)
        # written last: a manifest only exists for a complete stage
        write_json(self.manifest_path, {
            "input_hash": self.fingerprint,
            "stage": stage,
            "placed": placed.tolist(),
            "stages": [asdict(s) for s in stages],
        })

    def load(self, tracks: TrackSet, intrinsics: Intrinsics):
        if not self.manifest_path.exists():
            return None
        manifest = read_json(self.manifest_path)
        if manifest.get("input_hash") != self.fingerprint:
            logger.warning("checkpoint in %s was made for other inputs; starting over", self.directory)
            return None
        placed = np.array(manifest["placed"], dtype=int)
        local = tracks.subset_points(placed)
        depths = load_depths(self.directory / "depths.csv", local, intrinsics)
        lengths = load_template(self.directory / "lengths.csv")
        stages = [StageRecord(**s) for s in manifest["stages"]]
        logger.info("resuming densification after stage %d (%d points placed)", manifest["stage"], len(placed))
        return int(manifest["stage"]), placed, Reconstruction(local, depths), lengths, stages


def _merge_lengths(old: EdgeLengths, alpha: float, new: EdgeLengths) -> EdgeLengths:
    table = old.scaled(alpha).as_dict()
    table.update(new.as_dict())
    return EdgeLengths.from_mapping(table)


def densify(tracks: TrackSet, intrinsics: Intrinsics, seed_size: Optional[int] = None,
            batch_size: int = 150, seed: int = 0, k: int = 8, ref_view: Optional[int] = None,
            solver: Optional[SolverConfig] = None, checkpoint_dir: Optional[Union[str, Path]] = None,
            budget_new_old: bool = True) -> Densification:
    """
    Batch-reconstruct a seed subset, then add the remaining points in
    disjoint batches until every point is placed.

    Args:
        tracks: All observations
        intrinsics: Camera (guess)
        seed_size: Seed point count; None means max(150, N / 4)
        batch_size: Points per added batch
        seed: RNG seed for the seed subset and batch order
        k: Neighbor count, rebuilt at every stage over the placed points
        ref_view: Reference view for the graphs and the batch grid
        solver: Solver settings
        checkpoint_dir: Persist every stage here and resume from it when
            the inputs match
        budget_new_old: See encode_augment

    Returns:
        Densification with the reconstruction in the original point order
    """
    solver = solver or SolverConfig()
    N = tracks.num_points
    if seed_size is None:
        seed_size = max(MIN_SEED_POINTS, N // 4)
    if seed_size < 2 or batch_size < 1:
        raise DataError(f"seed_size must be >= 2 and batch_size >= 1, got {seed_size} and {batch_size}")

    if seed_size >= N:
        graph = build_neighbor_graph(tracks, k, ref_view)
        depths, lengths = reconstruct_nrsfm(NrsfmProblem(tracks, graph, intrinsics), solver)
        record = StageRecord(0, N, N, 1.0, float("nan"), int(depths.stats.get("iterations", 0)),
                             float(depths.stats.get("solve_seconds", 0.0)))
        return Densification(Reconstruction(tracks, depths), lengths, [record])

    rng = np.random.default_rng(seed)
    seed_points, batches = plan_batches(tracks, seed_size, batch_size, rng, ref_view)
    fingerprint = array_hash(tracks.pixels, tracks.visible, intrinsics.matrix,
                             np.array([seed_size, batch_size, seed, k, -1 if ref_view is None else ref_view,
                                       int(budget_new_old)], dtype=float))
    checkpoint = _Checkpoint(checkpoint_dir, fingerprint) if checkpoint_dir is not None else None

    state = checkpoint.load(tracks, intrinsics) if checkpoint is not None else None
    resumed_from = None
    if state is not None:
        done, placed, recon, lengths, stages = state
        resumed_from = done
    else:
        start = time.perf_counter()
        local = tracks.subset_points(seed_points)
        graph = build_neighbor_graph(local, k, ref_view)
        depths, lengths = reconstruct_nrsfm(NrsfmProblem(local, graph, intrinsics), solver)
        recon, placed, done = Reconstruction(local, depths), seed_points, 0
        stages = [StageRecord(0, len(seed_points), len(seed_points), 1.0, float("nan"),
                              int(depths.stats.get("iterations", 0)), time.perf_counter() - start)]
        if checkpoint is not None:
            checkpoint.save(0, placed, recon, lengths, stages)

    for stage, batch in enumerate(batches, start=1):
        if stage <= done:
            continue
        start = time.perf_counter()
        joint_points = np.concatenate([placed, batch])
        joint = tracks.subset_points(joint_points)
        graph = build_neighbor_graph(joint, k, ref_view)
        problem = AugmentProblem(recon, joint, graph, intrinsics, base_lengths=lengths)
        result = add_points(problem, solver, budget_new_old)
        lengths = _merge_lengths(lengths, result.alpha, result.lengths)
        recon, placed = result.reconstruction, joint_points
        stages.append(StageRecord(stage, len(batch), len(placed), result.alpha, result.scale_drift,
                                  int(result.stats.get("iterations", 0)), time.perf_counter() - start))
        logger.info("densify stage %d/%d: %d points placed", stage, len(batches), len(placed))
        if checkpoint is not None:
            checkpoint.save(stage, placed, recon, lengths, stages)

    depth = np.full(tracks.visible.shape, np.nan)
    depth[:, placed] = recon.depths.depth
    final = DepthField.from_depths(depth, tracks, intrinsics,
                                   {"stages": len(stages), "iterations": sum(s.iterations for s in stages)})
    remapped = EdgeLengths.from_mapping({(int(placed[i]), int(placed[j])): float(d)
                                         for (i, j), d in zip(lengths.edges, lengths.lengths)})
    return Densification(Reconstruction(tracks, final), remapped, stages, resumed_from)
