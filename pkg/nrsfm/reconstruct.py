"""
Maximum-depth reconstructions posed as second-order cone programs.

Template-based (one program per view):
    maximize sum_i lambda_i  s.t.  ||lambda_i r_i - lambda_j r_j|| <= d_ij
Template-less (one coupled program over all views):
    maximize sum_l sum_i lambda_i^l  s.t.  ||lambda_i^l r_i^l - lambda_j^l r_j^l|| <= d_ij,
    sum over directed neighbor pairs of d_ij = 1
with sightlines r = K^-1 u.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from camera import Intrinsics
from conic import ConicProgram, ProgramBuilder, require_optimal, solve_backend
from config import SolverConfig
from errors import DataError, UnboundedProblemError
from graph import EdgeLengths, NeighborGraph, view_components
from tracks import DepthField, TrackSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SfTProblem:
    """Known template lengths on every graph edge, one or more views."""

    tracks: TrackSet
    graph: NeighborGraph
    template: EdgeLengths
    intrinsics: Intrinsics

    def __post_init__(self):
        if self.graph.num_points != self.tracks.num_points:
            raise DataError(f"graph has {self.graph.num_points} points, tracks have {self.tracks.num_points}")
        object.__setattr__(self, "template", self.template.restricted_to(self.graph))


@dataclass(frozen=True, eq=False)
class NrsfmProblem:
    """Unknown template, at least two views, fixed intrinsics guess."""

    tracks: TrackSet
    graph: NeighborGraph
    intrinsics: Intrinsics

    def __post_init__(self):
        if self.tracks.num_views < 2:
            raise DataError(f"template-less reconstruction needs at least 2 views, got {self.tracks.num_views}")
        if self.graph.num_points != self.tracks.num_points:
            raise DataError(f"graph has {self.graph.num_points} points, tracks have {self.tracks.num_points}")


@dataclass(frozen=True, eq=False)
class PrunedProblem:
    """
    Variables and cone constraints left after discarding missing data.

    depth_index[l, i] is the position of lambda_i^l among the depth
    variables, or -1 when point i is invisible in view l. active[l, e]
    marks the edges whose cone is encoded in view l.
    """

    depth_index: np.ndarray
    edges: np.ndarray
    active: np.ndarray
    dropped: np.ndarray

    @property
    def num_depth_variables(self) -> int:
        return int((self.depth_index >= 0).sum())

    @property
    def num_cones(self) -> int:
        return int(self.active.sum())


def prune_missing(problem: Union[SfTProblem, NrsfmProblem]) -> PrunedProblem:
    """
    Discard depth variables of invisible (view, point) pairs and every
    cone that touches one. Edges never co-visible in any view are dropped.
    """
    visible = problem.tracks.visible
    depth_index = np.full(visible.shape, -1, dtype=int)
    depth_index[visible] = np.arange(int(visible.sum()))
    edges = problem.graph.edges()
    active = visible[:, edges[:, 0]] & visible[:, edges[:, 1]]
    covisible = active.any(axis=0)
    return PrunedProblem(depth_index=depth_index, edges=edges[covisible],
                         active=active[:, covisible], dropped=edges[~covisible])


def _ray_components(col_i: int, col_j: int, r_i: np.ndarray, r_j: np.ndarray):
    return [({col_i: float(r_i[k]), col_j: -float(r_j[k])}, 0.0) for k in range(3)]


def _check_view_connectivity(graph: NeighborGraph, visible: np.ndarray, view: int) -> None:
    components = view_components(graph, visible)
    for comp in components:
        if len(comp) == 1:
            raise UnboundedProblemError(
                f"view {view}: point {int(comp[0])} has no visible neighbor, its depth is unbounded")
    if len(components) > 1:
        sizes = sorted((len(c) for c in components), reverse=True)
        logger.warning("view %d: neighbor graph splits into %d components (sizes %s); "
                       "their relative scale is unconstrained", view, len(components), sizes)


def encode_sft_view(problem: SfTProblem, view: int) -> Tuple[ConicProgram, np.ndarray, float]:
    """
    Program for one view.

    Variables are the depths of the visible points (in point order) and an
    auxiliary tau fixed to 1 that carries the edge bounds. Template lengths
    enter divided by their mean.

    Returns:
        (program, visible point indices, template scale)
    """
    tracks = problem.tracks
    points = tracks.visible_points(view)
    local = {int(p): n for n, p in enumerate(points)}
    tau = len(points)

    scale = float(problem.template.lengths.mean()) if len(problem.template.lengths) else 0.0
    if not scale > 0:
        raise DataError("template lengths are all zero")
    lengths = problem.template.lengths / scale
    rays = tracks.rays(problem.intrinsics)[view]

    builder = ProgramBuilder(len(points) + 1)
    builder.add_equality({tau: 1.0}, 1.0)
    for (i, j), d in zip(problem.template.edges, lengths):
        if i in local and j in local:
            li, lj = local[int(i)], local[int(j)]
            builder.add_soc(({tau: float(d)}, 0.0), _ray_components(li, lj, rays[i], rays[j]))
    c = np.zeros(len(points) + 1)
    c[:tau] = -1.0
    builder.set_objective(c)
    return builder.build(), points, scale


def _solve_sft_view(problem: SfTProblem, view: int, solver: SolverConfig,
                    warm: Optional[np.ndarray]) -> Tuple[np.ndarray, dict]:
    _check_view_connectivity(problem.graph, problem.tracks.visible[view], view)
    program, points, scale = encode_sft_view(problem, view)
    x0 = None
    if warm is not None and np.all(np.isfinite(warm[points])):
        x0 = np.concatenate([warm[points] / scale, [1.0]])
    result = solve_backend(program, solver.backend, solver.tol, solver.max_iter, x0=x0)
    require_optimal(result, f"template-based reconstruction of view {view}")
    depth = np.full(problem.tracks.num_points, np.nan)
    depth[points] = result.x[:len(points)] * scale
    stats = result.to_dict()
    stats.update(view=view, num_points=len(points), num_cones=len(program.cones) - 1)
    return depth, stats


def reconstruct_sft(problem: SfTProblem, solver: Optional[SolverConfig] = None,
                    warm_start: Optional[DepthField] = None) -> DepthField:
    """
    Template-based reconstruction, one independent program per view.

    Args:
        problem: Tracks, graph, template and intrinsics
        solver: Solver settings; max_workers > 1 solves views concurrently
        warm_start: Previous depths used as initial iterates

    Returns:
        DepthField computed under problem.intrinsics

    Raises:
        UnboundedProblemError: if some visible point has no visible neighbor
        SolverError: if a view does not reach an optimal status
    """
    solver = solver or SolverConfig()
    start = time.perf_counter()
    views = range(problem.tracks.num_views)
    warm = warm_start.depth if warm_start is not None else None

    def run(view: int):
        return _solve_sft_view(problem, view, solver, None if warm is None else warm[view])

    if solver.max_workers > 1 and problem.tracks.num_views > 1:
        with ThreadPoolExecutor(max_workers=solver.max_workers) as pool:
            outputs = list(pool.map(run, views))
    else:
        outputs = [run(view) for view in views]

    depth = np.stack([d for d, _ in outputs])
    per_view = [s for _, s in outputs]
    stats = {
        "objective": float(np.nansum(depth)),
        "iterations": int(sum(s["iterations"] for s in per_view)),
        "solve_seconds": float(sum(s["solve_seconds"] for s in per_view)),
        "wall_seconds": time.perf_counter() - start,
        "views": per_view,
    }
    logger.info("template-based reconstruction: %d views, objective %.6g, %d solver iterations",
                problem.tracks.num_views, stats["objective"], stats["iterations"])
    return DepthField.from_depths(depth, problem.tracks, problem.intrinsics, stats)


def encode_nrsfm(problem: NrsfmProblem, pruned: Optional[PrunedProblem] = None) -> Tuple[ConicProgram, PrunedProblem, float]:
    """
    Coupled program over all views.

    Variables are the visible depths ordered by (view, point), then one
    length per kept edge in lexicographic order. The budget is posed as
    sum_directed d = B with B the number of directed pairs; solutions are
    divided by B afterwards.

    Returns:
        (program, pruning, budget scale B)
    """
    pruned = pruned or prune_missing(problem)
    tracks = problem.tracks
    n_depth = pruned.num_depth_variables
    n_edges = len(pruned.edges)
    if n_edges == 0:
        raise DataError("no graph edge is co-visible in any view")
    budget = 2.0 * n_edges
    rays = tracks.rays(problem.intrinsics)

    builder = ProgramBuilder(n_depth + n_edges)
    builder.add_equality({n_depth + e: 2.0 for e in range(n_edges)}, budget)
    for view in range(tracks.num_views):
        idx = pruned.depth_index[view]
        for e in np.flatnonzero(pruned.active[view]):
            i, j = pruned.edges[e]
            builder.add_soc(({n_depth + int(e): 1.0}, 0.0),
                            _ray_components(int(idx[i]), int(idx[j]), rays[view, i], rays[view, j]))
    c = np.zeros(n_depth + n_edges)
    c[:n_depth] = -1.0
    builder.set_objective(c)
    return builder.build(), pruned, budget


def reconstruct_nrsfm(problem: NrsfmProblem, solver: Optional[SolverConfig] = None,
                      warm_start: Optional[Tuple[DepthField, EdgeLengths]] = None
                      ) -> Tuple[DepthField, EdgeLengths]:
    """
    Template-less reconstruction: depths of every view and the shared edge
    lengths in one program, with the lengths summing to 1 over directed pairs.

    Returns:
        (DepthField under problem.intrinsics, EdgeLengths over the co-visible edges)
    """
    solver = solver or SolverConfig()
    pruned = prune_missing(problem)
    if len(pruned.dropped):
        i, j = pruned.dropped[0]
        logger.warning("dropping %d edges never co-visible in any view (first: (%d, %d))",
                       len(pruned.dropped), i, j)
    tracks = problem.tracks
    for view in range(tracks.num_views):
        _check_view_connectivity(problem.graph, tracks.visible[view], view)

    program, pruned, budget = encode_nrsfm(problem, pruned)
    n_depth = pruned.num_depth_variables

    x0 = None
    if warm_start is not None:
        warm_depths, warm_lengths = warm_start
        lam = warm_depths.depth[tracks.visible]
        table = warm_lengths.as_dict()
        d = np.array([table.get((int(i), int(j)), 0.0) for i, j in pruned.edges])
        if np.all(np.isfinite(lam)) and lam.shape == (n_depth,):
            x0 = np.concatenate([lam, d]) * budget

    result = solve_backend(program, solver.backend, solver.tol, solver.max_iter, x0=x0)
    require_optimal(result, "template-less reconstruction")

    x = result.x / budget
    depth = np.full(tracks.visible.shape, np.nan)
    depth[tracks.visible] = x[:n_depth]
    lengths = EdgeLengths(pruned.edges, np.maximum(x[n_depth:], 0.0))

    if np.any(depth[tracks.visible] <= 0):
        logger.warning("template-less reconstruction returned %d non-positive depths",
                       int((depth[tracks.visible] <= 0).sum()))
    stats = result.to_dict()
    stats.update(objective=float(x[:n_depth].sum()), num_variables=program.num_variables,
                 num_cones=pruned.num_cones, dropped_edges=len(pruned.dropped))
    logger.info("template-less reconstruction: %d views, %d cones, objective %.6g, %d iterations",
                tracks.num_views, pruned.num_cones, stats["objective"], result.iterations)
    return DepthField.from_depths(depth, tracks, problem.intrinsics, stats), lengths
