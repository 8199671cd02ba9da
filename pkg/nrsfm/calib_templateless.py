"""
Focal length without a template.

A reconstruction computed under a guess focal length is upgraded to other
focal lengths; the one whose views agree best on their (scale-normalized)
neighbor distances is preferred. The sweep then looks for the smallest
focal length that still gives an isometrically consistent reconstruction.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.optimize import minimize_scalar

from camera import Intrinsics
from config import SolverConfig
from errors import ConfigError, DataError, NumericalError
from graph import EdgeLengths, NeighborGraph
from reconstruct import NrsfmProblem, reconstruct_nrsfm
from tracks import DepthField, Reconstruction, TrackSet
from upgrade import DistanceMode, resolve_distance_mode, upgrade, upgraded_edge_lengths, view_geodesic_matrix

logger = logging.getLogger(__name__)

FOCAL_BRACKET = 4.0


def _pairwise_spread(values: np.ndarray) -> float:
    """
    sum_k sum_{l != k} (a_k - a_l)^2 over the finite entries of each column,
    computed as 2 n sum_k (a_k - mean)^2.
    """
    finite = np.isfinite(values)
    n = finite.sum(axis=0)
    shared = n >= 2
    if not shared.any():
        return 0.0
    v = np.where(finite, values, 0.0)[:, shared]
    n = n[shared]
    mean = v.sum(axis=0) / n
    dev = np.where(finite[:, shared], v - mean, 0.0)
    return float((2.0 * n * (dev * dev).sum(axis=0)).sum())


def consistency_from_lengths(lengths: np.ndarray, edges: np.ndarray, num_points: int,
                             mode: DistanceMode = DistanceMode.EUCLIDEAN) -> float:
    """
    Isometry consistency of per-view neighbor lengths (V, E), NaN where unseen.

    Each view's lengths are first scaled to sum to 1 over directed pairs.
    Euclidean mode compares neighbor lengths over ordered view pairs and
    directed neighbor pairs; geodesic mode compares shortest-path lengths
    between every ordered point pair reachable in both views.

    Raises:
        DataError: if two or more views share no edge
    """
    V = lengths.shape[0]
    if V < 2:
        return 0.0
    usable = np.isfinite(lengths)
    if not np.any(usable.sum(axis=0) >= 2):
        raise DataError("no neighbor edge is visible in two views")
    sums = 2.0 * np.nansum(lengths, axis=1)
    empty = np.flatnonzero(~(sums > 0))
    if len(empty):
        raise DataError(f"view {empty[0]} has no usable neighbor distance")
    normalized = lengths / sums[:, None]

    if mode is DistanceMode.EUCLIDEAN:
        # directed pairs: every edge counted twice
        return 2.0 * _pairwise_spread(normalized)

    geo = np.stack([view_geodesic_matrix(edges, row, num_points) for row in normalized])
    geo[~np.isfinite(geo)] = np.nan
    off = ~np.eye(num_points, dtype=bool)
    return _pairwise_spread(geo[:, off])


def isometry_consistency(intrinsics: Intrinsics, ranges: np.ndarray, tracks: TrackSet,
                         graph: NeighborGraph, mode: Union[str, DistanceMode] = DistanceMode.EUCLIDEAN) -> float:
    """
    Phi(K): disagreement between views of the neighbor distances of the
    reconstruction's ranges upgraded to K.

    Args:
        intrinsics: Target K
        ranges: (V, N) ranges of a reconstruction
        tracks: Observations
        graph: Neighbor graph
        mode: EUCLIDEAN neighbor distances or GEODESIC shortest paths

    Returns:
        Phi >= 0; 0 for a single view
    """
    mode = resolve_distance_mode(mode, graph)
    edges = graph.edges()
    lengths = upgraded_edge_lengths(ranges, tracks, intrinsics, edges)
    return consistency_from_lengths(lengths, edges, graph.num_points, mode)


@dataclass
class FocalRefinement:
    intrinsics: Intrinsics
    phi: float
    phi_start: float
    moved: bool


def refine_focal(K_hat: Intrinsics, recon: Reconstruction, graph: NeighborGraph,
                 mode: Union[str, DistanceMode] = DistanceMode.EUCLIDEAN) -> FocalRefinement:
    """
    Minimize Phi over the focal length in [f_hat / 4, 4 f_hat] (log scale),
    upgrading the reconstruction instead of solving again.

    Raises:
        NumericalError: if Phi is not finite at some focal length
    """
    mode = resolve_distance_mode(mode, graph)
    ranges, tracks = recon.depths.ranges, recon.tracks
    f_hat = K_hat.focal

    def phi(t: float) -> float:
        f = f_hat * np.exp(t)
        value = isometry_consistency(K_hat.with_focal(f), ranges, tracks, graph, mode)
        if not np.isfinite(value):
            raise NumericalError(f"isometry consistency is not finite at focal length {f:.6g}")
        return value

    phi_start = phi(0.0)
    bound = np.log(FOCAL_BRACKET)
    ends = (phi(-bound), phi(bound))
    if all(abs(e - phi_start) <= 1e-12 * (1.0 + abs(phi_start)) for e in ends):
        logger.info("isometry consistency does not depend on the focal length; keeping %.2f", f_hat)
        return FocalRefinement(K_hat, phi_start, phi_start, moved=False)

    result = minimize_scalar(phi, bounds=(-bound, bound), method="bounded", options={"xatol": 1e-6})
    best_t, best_phi = float(result.x), float(result.fun)
    for t, value in ((-bound, ends[0]), (bound, ends[1])):
        if value < best_phi:
            best_t, best_phi = t, value
    if not best_phi < phi_start:
        return FocalRefinement(K_hat, phi_start, phi_start, moved=False)
    return FocalRefinement(K_hat.with_focal(f_hat * np.exp(best_t)), best_phi, phi_start, moved=True)


def view_flatness(depths: DepthField) -> np.ndarray:
    """Per-view depth range divided by mean depth."""
    d = np.where(depths.visible, depths.depth, np.nan)
    return (np.nanmax(d, axis=1) - np.nanmin(d, axis=1)) / np.nanmean(d, axis=1)


@dataclass
class SweepRecord:
    iteration: int
    focal_guess: float
    focal_refined: float
    phi: float
    delta: float
    flag: int
    solver_iterations: int
    flatness: float


@dataclass
class SweepState:
    """Current guess (focal only), direction flag and per-iteration history."""

    intrinsics: Intrinsics
    flag: int = 0
    history: List[SweepRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.intrinsics.focal > 0:
            raise DataError(f"focal length must be positive, got {self.intrinsics.focal}")

    def record(self, entry: SweepRecord) -> None:
        if self.history and entry.iteration <= self.history[-1].iteration:
            raise DataError("sweep history must be ordered by iteration")
        self.history.append(entry)

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "flag": self.flag,
                "history": [asdict(h) for h in self.history]}


@dataclass
class TemplatelessCalibration:
    intrinsics: Intrinsics
    state: SweepState
    reconstruction: Reconstruction
    lengths: EdgeLengths
    converged: bool

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "converged": self.converged,
                "sweep": self.state.to_dict()}


def calibrate_without_template(tracks: TrackSet, graph: NeighborGraph, K0: Intrinsics,
                               focal_step: float = 0.05, epsilon: float = 0.01, max_outer: int = 30,
                               mode: Union[str, DistanceMode, None] = "auto",
                               solver: Optional[SolverConfig] = None) -> TemplatelessCalibration:
    """
    Sweep for the smallest isometrically consistent focal length.

    Each iteration reconstructs under the guess and refines the focal
    length. While refinement keeps the guess (relative change within
    epsilon) and no correction has happened yet, the guess is lowered by
    focal_step (relative). Otherwise the refined value is adopted and the
    flag set; a kept guess with the flag set ends the sweep.

    Args:
        tracks: Observations (at least two views)
        graph: Neighbor graph
        K0: Initial guess; only its focal length and image size are used
        focal_step: Relative downward step
        epsilon: Relative focal change counted as consistent
        max_outer: Iteration cap
        mode: Distance mode for Phi ("auto" picks geodesics for sparse graphs)
        solver: Solver settings

    Returns:
        TemplatelessCalibration with the final intrinsics and sweep history
    """
    if max_outer < 1:
        raise ConfigError(f"max_outer must be at least 1, got {max_outer}")
    solver = solver or SolverConfig()
    mode = resolve_distance_mode(mode, graph)
    guess = Intrinsics.default_guess(K0.width, K0.height).with_focal(K0.focal)
    state = SweepState(guess)
    warm = None
    result_K = guess
    converged = False
    depths = lengths = None

    for iteration in range(1, max_outer + 1):
        K_hat = state.intrinsics
        depths, lengths = reconstruct_nrsfm(NrsfmProblem(tracks, graph, K_hat), solver, warm_start=warm)
        recon = Reconstruction(tracks, depths)
        refined = refine_focal(K_hat, recon, graph, mode)
        K_star = refined.intrinsics
        delta = abs(K_star.focal - K_hat.focal) / K_hat.focal
        state.record(SweepRecord(
            iteration=iteration, focal_guess=K_hat.focal, focal_refined=K_star.focal, phi=refined.phi,
            delta=delta, flag=state.flag, solver_iterations=int(depths.stats.get("iterations", 0)),
            flatness=float(np.mean(view_flatness(depths))),
        ))
        logger.info("sweep %d: f_hat %.2f -> f* %.2f, phi %.3e, delta %.3f%%, flag %d",
                    iteration, K_hat.focal, K_star.focal, refined.phi, 100.0 * delta, state.flag)
        result_K = K_star

        if delta <= epsilon:
            if state.flag == 1:
                converged = True
                break
            next_K = K_star.with_focal(K_star.focal * (1.0 - focal_step))
        else:
            state.flag = 1
            next_K = K_star
        state.intrinsics = next_K
        warm = (upgrade(depths, tracks, next_K), lengths)
    else:
        logger.warning("focal sweep hit the %d-iteration cap; returning the last refined focal length", max_outer)

    if depths.intrinsics != result_K:
        depths = upgrade(depths, tracks, result_K)
    state.intrinsics = result_K
    return TemplatelessCalibration(intrinsics=result_K, state=state, reconstruction=Reconstruction(tracks, depths),
                                   lengths=lengths, converged=converged)
