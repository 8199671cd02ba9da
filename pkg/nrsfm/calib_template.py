"""
Intrinsics from a known template.

Pairs of neighboring points with known template distance give, through
the ranges of a reconstruction, the squared inverse cosine gamma of the
angle between their sightlines. Five such pairs constrain the image of the
absolute conic; hypotheses are scored by how well the upgraded
reconstruction matches the template and the best one is refined.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares, minimize

from camera import IAC, Intrinsics, intrinsics_from_iac
from config import SolverConfig
from errors import ConfigError, NrsfmError, RejectedHypothesisError, RejectedPairError, SingularIntrinsicsError
from graph import EdgeLengths, NeighborGraph
from reconstruct import SfTProblem, reconstruct_sft
from tracks import DepthField, Reconstruction, TrackSet
from upgrade import upgrade, upgraded_edge_lengths

logger = logging.getLogger(__name__)

PAIRS_PER_HYPOTHESIS = 5
IAC_RESIDUAL_TOL = 1e-8
IAC_DUPLICATE_TOL = 1e-4


def gamma_from_pair(a_i: float, a_j: float, d: float) -> float:
    """
    gamma = (2 a_i a_j / (a_i^2 + a_j^2 - d^2))^2, the inverse squared
    cosine of the angle between the two sightlines.

    Raises:
        RejectedPairError: if the denominator vanishes (perpendicular sightlines)
    """
    denominator = a_i * a_i + a_j * a_j - d * d
    if denominator == 0.0 or abs(denominator) <= 1e-15 * (a_i * a_i + a_j * a_j):
        raise RejectedPairError(f"sightlines are perpendicular (a=({a_i}, {a_j}), d={d})")
    return (2.0 * a_i * a_j / denominator) ** 2


@dataclass(frozen=True, eq=False)
class RigidPair:
    i: int
    j: int
    u_i: np.ndarray
    u_j: np.ndarray
    a_i: float
    a_j: float
    d: float
    gamma: float

    @classmethod
    def create(cls, i: int, j: int, u_i: np.ndarray, u_j: np.ndarray,
               a_i: float, a_j: float, d: float) -> "RigidPair":
        if not (a_i > 0 and a_j > 0):
            raise RejectedPairError(f"pair ({i}, {j}) has non-positive range ({a_i}, {a_j})")
        gamma = gamma_from_pair(a_i, a_j, d)
        if gamma < 1.0 - 1e-9:
            raise RejectedPairError(f"pair ({i}, {j}): gamma {gamma:.6g} < 1, ranges and length are inconsistent")
        return cls(i=int(i), j=int(j), u_i=np.asarray(u_i, dtype=float), u_j=np.asarray(u_j, dtype=float),
                   a_i=float(a_i), a_j=float(a_j), d=float(d), gamma=max(gamma, 1.0))


@dataclass(frozen=True, eq=False)
class IACCandidate:
    iac: IAC
    residual: float

    @property
    def valid(self) -> bool:
        return self.iac.is_valid


def _bilinear_basis(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Derivatives of u' Omega v with respect to (w11, w12, w13, w22, w23); rows are pairs."""
    return np.stack([
        u[:, 0] * v[:, 0],
        u[:, 0] * v[:, 1] + u[:, 1] * v[:, 0],
        u[:, 0] * v[:, 2] + u[:, 2] * v[:, 0],
        u[:, 1] * v[:, 1],
        u[:, 1] * v[:, 2] + u[:, 2] * v[:, 1],
    ], axis=1)


class _IACSystem:
    """u_i' W u_i * u_j' W u_j - gamma (u_i' W u_j)^2 = 0 for each pair, in normalized pixels."""

    def __init__(self, U: np.ndarray, V: np.ndarray, gamma: np.ndarray):
        self.gamma = gamma
        self.Bii = _bilinear_basis(U, U)
        self.Bjj = _bilinear_basis(V, V)
        self.Bij = _bilinear_basis(U, V)
        # constant parts from w33 = 1
        self.cii = U[:, 2] ** 2
        self.cjj = V[:, 2] ** 2
        self.cij = U[:, 2] * V[:, 2]

    def _forms(self, p):
        return self.Bii @ p + self.cii, self.Bjj @ p + self.cjj, self.Bij @ p + self.cij

    def residuals(self, p: np.ndarray) -> np.ndarray:
        a, b, c = self._forms(p)
        return a * b - self.gamma * c * c

    def relative_residuals(self, p: np.ndarray) -> np.ndarray:
        a, b, c = self._forms(p)
        return np.abs(a * b - self.gamma * c * c) / np.maximum(np.abs(a * b), 1e-300)

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        a, b, c = self._forms(p)
        return (b[:, None] * self.Bii + a[:, None] * self.Bjj
                - 2.0 * (self.gamma * c)[:, None] * self.Bij)


def _random_start(rng: np.random.Generator) -> np.ndarray:
    focal = np.exp(rng.uniform(np.log(0.2), np.log(10.0)))
    aspect = rng.uniform(0.9, 1.1)
    offsets = rng.uniform(-0.3, 0.3, size=2)
    Kn = np.array([[focal, 0.0, offsets[0]], [0.0, focal * aspect, offsets[1]], [0.0, 0.0, 1.0]])
    Kinv = np.linalg.inv(Kn)
    W = Kinv.T @ Kinv
    W /= W[2, 2]
    return np.array([W[0, 0], W[0, 1], W[0, 2], W[1, 1], W[1, 2]])


def solve_iac_minimal(pairs: Sequence[RigidPair], width: float = 640.0, height: float = 480.0,
                      starts: int = 20, rng: Optional[np.random.Generator] = None) -> List[IACCandidate]:
    """
    All IACs found from `starts` random initializations that satisfy the
    five pair equations within 1e-8 relative residual.

    The system is solved in pixel coordinates centered on the image with
    unit half-diagonal. Solutions whose Jacobian is rank deficient and
    duplicates (relative distance below 1e-4) are discarded.

    Returns:
        Possibly empty list of candidates; candidate.valid flags positive definiteness
    """
    if len(pairs) != PAIRS_PER_HYPOTHESIS:
        raise RejectedHypothesisError(f"expected {PAIRS_PER_HYPOTHESIS} pairs, got {len(pairs)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    N = Intrinsics.default_guess(width, height).normalizer()
    U = np.array([p.u_i for p in pairs]) @ N.T
    V = np.array([p.u_j for p in pairs]) @ N.T
    system = _IACSystem(U, V, np.array([p.gamma for p in pairs]))

    found: List[IACCandidate] = []
    for _ in range(starts):
        p0 = _random_start(rng)
        try:
            sol = least_squares(system.residuals, p0, jac=system.jacobian, method="lm",
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400)
        except (ValueError, np.linalg.LinAlgError):
            continue
        p = sol.x
        if not np.all(np.isfinite(p)):
            continue
        residual = float(system.relative_residuals(p).max())
        if residual > IAC_RESIDUAL_TOL:
            continue
        J = system.jacobian(p)
        if np.linalg.matrix_rank(J, tol=1e-8 * max(np.abs(J).max(), 1e-300)) < 5:
            continue
        W_norm = np.array([[p[0], p[1], p[2]], [p[1], p[3], p[4]], [p[2], p[4], 1.0]])
        try:
            iac = IAC(N.T @ W_norm @ N)
        except RejectedHypothesisError:
            continue
        if any(iac.distance(c.iac) < IAC_DUPLICATE_TOL for c in found):
            continue
        found.append(IACCandidate(iac=iac, residual=residual))
    return found


def _template_arrays(template: EdgeLengths, graph: NeighborGraph) -> Tuple[np.ndarray, np.ndarray]:
    restricted = template.restricted_to(graph)
    return restricted.edges, restricted.lengths


def template_residual_from_ranges(intrinsics: Intrinsics, ranges: np.ndarray, tracks: TrackSet,
                                  edges: np.ndarray, lengths: np.ndarray) -> float:
    upgraded = upgraded_edge_lengths(ranges, tracks, intrinsics, edges)
    diff = lengths[None, :] - upgraded
    return float(2.0 * np.nansum(diff * diff))


def template_residual(intrinsics: Intrinsics, recon: Reconstruction, template: EdgeLengths,
                      graph: NeighborGraph) -> float:
    """
    Sum over views and directed neighbor pairs of (d_ij - d_hat_ij(K))^2,
    with d_hat the distances of the reconstruction's ranges upgraded to K.
    """
    edges, lengths = _template_arrays(template, graph)
    return template_residual_from_ranges(intrinsics, recon.depths.ranges, recon.tracks, edges, lengths)


def _params_to_intrinsics(q: np.ndarray, width: float, height: float) -> Intrinsics:
    params = np.array([np.exp(q[0]), np.exp(q[1]), q[2], q[3], q[4]])
    return Intrinsics.from_normalized(params, width, height)


def refinement_energy(intrinsics: Intrinsics, recon: Reconstruction, template: EdgeLengths,
                      graph: NeighborGraph) -> float:
    """
    Template residual (lengths divided by the mean template length) plus
    the normalized-intrinsics regularizer k13^2 + k23^2 + (1 - k11/k22)^2.
    """
    edges, lengths = _template_arrays(template, graph)
    scale = float(lengths.mean())
    return _energy(intrinsics, recon, edges, lengths, scale)


def _energy(K: Intrinsics, recon: Reconstruction, edges: np.ndarray, lengths: np.ndarray, scale: float) -> float:
    phi = template_residual_from_ranges(K, recon.depths.ranges, recon.tracks, edges, lengths) / (scale * scale)
    fx, fy, _, ox, oy = K.normalized_params()
    return float(phi + ox * ox + oy * oy + (1.0 - fx / fy) ** 2)


def refine_intrinsics(K0: Intrinsics, recon: Reconstruction, template: EdgeLengths, graph: NeighborGraph,
                      trace: Optional[List[float]] = None, max_iter: int = 200) -> Intrinsics:
    """
    Local minimization of the refinement energy from K0 by BFGS over the
    normalized (fx, fy, skew, cx, cy), focal lengths in log scale.

    Args:
        K0: Starting intrinsics
        recon: Reconstruction whose ranges are upgraded
        template: Known template lengths
        graph: Neighbor graph
        trace: If given, receives the energy of K0 and of every accepted iterate

    Returns:
        Intrinsics with the lowest energy seen
    """
    edges, lengths = _template_arrays(template, graph)
    scale = float(lengths.mean())
    width, height = K0.width, K0.height
    p0 = K0.normalized_params()
    q0 = np.array([np.log(p0[0]), np.log(p0[1]), p0[2], p0[3], p0[4]])

    def energy(q: np.ndarray) -> float:
        try:
            return _energy(_params_to_intrinsics(q, width, height), recon, edges, lengths, scale)
        except SingularIntrinsicsError:
            return np.inf

    best_q, best_e = q0, energy(q0)
    history = [best_e]

    def record(qk: np.ndarray) -> None:
        nonlocal best_q, best_e
        e = energy(qk)
        history.append(e)
        if e < best_e:
            best_q, best_e = np.array(qk), e

    result = minimize(energy, q0, method="BFGS", callback=record,
                      options={"gtol": 1e-10, "maxiter": max_iter})
    if not result.success:
        logger.warning("intrinsics refinement stopped early (%s); keeping the best iterate", result.message)
    if np.isfinite(result.fun) and result.fun < best_e:
        best_q, best_e = result.x, float(result.fun)
    if trace is not None:
        trace.extend(history)
    refined = _params_to_intrinsics(best_q, width, height)
    logger.debug("refinement: E %.6g -> %.6g in %d iterations", history[0], best_e, len(history) - 1)
    return refined


def candidate_pairs(recon: Reconstruction, graph: NeighborGraph, template: EdgeLengths,
                    quantile: float = 0.25) -> List[RigidPair]:
    """
    Graph edges visible in a view, ranked by pixel distance in that view;
    the closest quantile is kept. Pairs with no finite gamma are skipped.
    """
    edges, lengths = _template_arrays(template, graph)
    tracks = recon.tracks
    uh = tracks.homogeneous()
    ranges = recon.depths.ranges
    entries = []
    for view in range(tracks.num_views):
        vis = tracks.visible[view]
        for e, (i, j) in enumerate(edges):
            if vis[i] and vis[j]:
                dist = float(np.linalg.norm(tracks.pixels[view, i] - tracks.pixels[view, j]))
                entries.append((dist, view, e))
    entries.sort(key=lambda t: (t[0], t[1], t[2]))
    keep = entries[:max(PAIRS_PER_HYPOTHESIS, int(np.ceil(quantile * len(entries))))]
    pairs = []
    for _, view, e in keep:
        i, j = edges[e]
        try:
            pairs.append(RigidPair.create(i, j, uh[view, i], uh[view, j],
                                          ranges[view, i], ranges[view, j], lengths[e]))
        except RejectedPairError as exc:
            logger.debug("skipping pair in view %d: %s", view, exc)
    return pairs


@dataclass
class Hypothesis:
    intrinsics: Intrinsics
    residual: float

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "residual": self.residual}


def generate_hypotheses(recon: Reconstruction, graph: NeighborGraph, template: EdgeLengths,
                        count: int = 200, seed: int = 0, starts: int = 20,
                        max_workers: int = 1) -> List[Intrinsics]:
    """Intrinsics from positive definite IACs of `count` random minimal pair sets."""
    pairs = candidate_pairs(recon, graph, template)
    if len(pairs) < PAIRS_PER_HYPOTHESIS:
        logger.warning("only %d usable pairs, no hypotheses generated", len(pairs))
        return []
    rng = np.random.default_rng(seed)
    sets = [rng.choice(len(pairs), size=PAIRS_PER_HYPOTHESIS, replace=False) for _ in range(count)]
    set_seeds = rng.integers(0, 2**63 - 1, size=count)
    width, height = recon.intrinsics.width, recon.intrinsics.height

    def run(k: int) -> List[Intrinsics]:
        chosen = [pairs[n] for n in sets[k]]
        out = []
        for cand in solve_iac_minimal(chosen, width, height, starts, np.random.default_rng(set_seeds[k])):
            if not cand.valid:
                continue
            try:
                out.append(intrinsics_from_iac(cand.iac, width, height))
            except NrsfmError:
                continue
        return out

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, range(count)))
    else:
        results = [run(k) for k in range(count)]
    hypotheses = [K for group in results for K in group]
    logger.info("%d hypotheses from %d pair sets (%d candidate pairs)", len(hypotheses), count, len(pairs))
    return hypotheses


def select_hypothesis(hypotheses: Sequence[Intrinsics], recon: Reconstruction, template: EdgeLengths,
                      graph: NeighborGraph) -> Tuple[Optional[Hypothesis], List[Hypothesis]]:
    """Score every hypothesis by the template residual; return (best, all scored)."""
    edges, lengths = _template_arrays(template, graph)
    scored = []
    for K in hypotheses:
        residual = template_residual_from_ranges(K, recon.depths.ranges, recon.tracks, edges, lengths)
        if np.isfinite(residual):
            scored.append(Hypothesis(K, residual))
    if not scored:
        return None, []
    best = min(scored, key=lambda h: h.residual)
    return best, scored


@dataclass
class TemplateCalibration:
    intrinsics: Intrinsics
    reconstruction: Reconstruction
    iterations: List[Dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "iterations": self.iterations}


def calibrate_with_template(tracks: TrackSet, graph: NeighborGraph, template: EdgeLengths,
                            K_hat: Intrinsics, solver: Optional[SolverConfig] = None,
                            hypotheses: int = 200, seed: int = 0, starts: int = 20,
                            epsilon: float = 0.01, max_outer: int = 10) -> TemplateCalibration:
    """
    Estimate intrinsics from a known template.

    Each outer iteration reconstructs under the current guess, generates
    and scores IAC hypotheses, refines the best one and stops once the
    focal length changes by less than `epsilon` (relative).

    Returns:
        TemplateCalibration with the final intrinsics, the reconstruction
        under them and a per-iteration report
    """
    if max_outer < 1:
        raise ConfigError(f"max_outer must be at least 1, got {max_outer}")
    solver = solver or SolverConfig()
    current = K_hat
    depths: Optional[DepthField] = None
    report: List[Dict] = []
    for outer in range(1, max_outer + 1):
        depths = reconstruct_sft(SfTProblem(tracks, graph, template, current), solver,
                                 warm_start=None if depths is None else upgrade(depths, tracks, current))
        recon = Reconstruction(tracks, depths)
        candidates = generate_hypotheses(recon, graph, template, hypotheses, seed + outer - 1, starts,
                                         solver.max_workers)
        best, scored = select_hypothesis(candidates, recon, template, graph)
        if best is None:
            logger.warning("iteration %d: every hypothesis was rejected; refining the current guess", outer)
            start = current
        else:
            start = best.intrinsics
        trace: List[float] = []
        refined = refine_intrinsics(start, recon, template, graph, trace=trace)
        change = abs(refined.focal - current.focal) / current.focal
        report.append({
            "iteration": outer,
            "guess": current.to_dict(),
            "hypotheses": [h.to_dict() for h in scored],
            "chosen": None if best is None else best.to_dict(),
            "refined": refined.to_dict(),
            "energy_trace": trace,
            "focal_change": change,
        })
        logger.info("iteration %d: focal %.2f -> %.2f (change %.2f%%)", outer, current.focal,
                    refined.focal, 100.0 * change)
        current = refined
        if change < epsilon:
            break
    else:
        logger.warning("template calibration hit the %d-iteration cap", max_outer)

    depths = reconstruct_sft(SfTProblem(tracks, graph, template, current), solver,
                             warm_start=upgrade(depths, tracks, current))
    return TemplateCalibration(intrinsics=current, reconstruction=Reconstruction(tracks, depths),
                               iterations=report)
