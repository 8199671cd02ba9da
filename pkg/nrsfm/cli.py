#!/usr/bin/env python3
"""
Command-line entry point.

Every subcommand reads its inputs, runs one pipeline and writes its
artifacts plus a report.json into the output directory. Exit codes: 0 on
success, 2 for configuration errors, 3 for bad input data, 4 for
numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from calib_template import calibrate_with_template
from calib_templateless import calibrate_without_template
from camera import Intrinsics
from config import RunConfig, setup_logging
from errors import ConfigError, DataError, NrsfmError, NumericalError
from graph import EdgeLengths, NeighborGraph, build_neighbor_graph
from incremental import AugmentProblem, add_points, add_views, densify
from io_formats import (input_hash, load_depths, load_intrinsics, load_template, load_tracks,
                        save_depths, save_intrinsics, save_reconstruction_ply, save_template, write_json)
from reconstruct import NrsfmProblem, SfTProblem, encode_nrsfm, encode_sft_view, reconstruct_nrsfm, reconstruct_sft
from synth import BUNDLE_FILES, evaluate, generate_scene, load_scene_bundle, save_scene_bundle
from tracks import Reconstruction, TrackSet

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"


class RunContext:
    """Effective config, output directory and the input files read so far."""

    def __init__(self, command: str, config: RunConfig, plot: bool = False, dump_program: bool = False):
        self.command = command
        self.config = config
        self.plot = plot
        self.dump_program = dump_program
        self.output = Path(config.output_dir)
        self.inputs: List[Path] = []

    @property
    def solver(self):
        return replace(self.config.solver, max_workers=self.config.workers)

    def path(self, name: str) -> Path:
        self.output.mkdir(parents=True, exist_ok=True)
        return self.output / name

    def require(self, key: str) -> Path:
        value = getattr(self.config, key)
        if value is None:
            raise ConfigError(f"'{self.command}' needs --{key.replace('_', '-')} (or '{key}' in the config file)")
        path = Path(value)
        self.inputs.append(path)
        return path

    def bundle_file(self, key: str) -> Optional[Path]:
        if self.config.scene is None:
            return None
        path = Path(self.config.scene) / BUNDLE_FILES[key]
        return path if path.exists() else None


def _scene_defaults(config: RunConfig, keys) -> RunConfig:
    """Fill missing input paths from a scene bundle."""
    if config.scene is None:
        return config
    filled = {}
    for key in keys:
        candidate = Path(config.scene) / BUNDLE_FILES[key]
        if getattr(config, key) is None and candidate.exists():
            filled[key] = str(candidate)
    return config.with_overrides(**filled) if filled else config


def _image_size(ctx: RunContext, tracks: TrackSet):
    cfg = ctx.config
    if cfg.image_width is not None and cfg.image_height is not None:
        return cfg.image_width, cfg.image_height
    bundled = ctx.bundle_file("intrinsics")
    if bundled is not None:
        return load_intrinsics(bundled).image_size
    px = tracks.pixels[tracks.visible]
    width, height = float(np.ceil(px[:, 0].max())), float(np.ceil(px[:, 1].max()))
    logger.warning("image size not given; using the track extent %gx%g", width, height)
    return width, height


def _intrinsics(ctx: RunContext, tracks: TrackSet) -> Intrinsics:
    """Intrinsics file if given, else the default guess for the image size."""
    if ctx.config.intrinsics is not None:
        return load_intrinsics(ctx.require("intrinsics"))
    K = Intrinsics.default_guess(*_image_size(ctx, tracks))
    logger.info("no intrinsics given; default guess %s", K)
    return K


def _graph(ctx: RunContext, tracks: TrackSet) -> NeighborGraph:
    graph = build_neighbor_graph(tracks, ctx.config.k, ctx.config.ref_view)
    logger.info("neighbor graph: %d points, %d edges, mean degree %.2f", graph.num_points,
                len(graph.edges()), graph.mean_degree())
    return graph


def _save_reconstruction(ctx: RunContext, recon: Reconstruction, graph: Optional[NeighborGraph] = None,
                         lengths: Optional[EdgeLengths] = None) -> Dict[str, Any]:
    save_depths(ctx.path("depths.csv"), recon.depths)
    save_intrinsics(ctx.path("intrinsics.json"), recon.intrinsics)
    plys = save_reconstruction_ply(ctx.path("ply"), recon)
    files = {"depths": "depths.csv", "intrinsics": "intrinsics.json", "ply": [str(p.name) for p in plys]}
    if lengths is not None:
        save_template(ctx.path("lengths.csv"), lengths)
        files["lengths"] = "lengths.csv"
    if ctx.plot:
        import matplotlib
        matplotlib.use("Agg")
        from visualizer import plot_reconstruction
        plot_reconstruction(recon, graph, directory=ctx.output, show=False)
    return files


# Subcommands

def cmd_synth(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    scene, tracks, template = generate_scene(cfg.synth, cfg.seed)
    paths = save_scene_bundle(ctx.output, scene, tracks, template)
    if ctx.plot:
        import matplotlib
        matplotlib.use("Agg")
        from visualizer import plot_reconstruction
        plot_reconstruction(scene.reconstruction(tracks), build_neighbor_graph(tracks, cfg.k, cfg.ref_view),
                            directory=ctx.output, show=False)
    return {
        "num_points": scene.num_points,
        "num_views": scene.num_views,
        "isometry_error": scene.isometry_error(),
        "files": {key: p.name for key, p in paths.items()},
    }


def cmd_reconstruct(ctx: RunContext) -> Dict[str, Any]:
    tracks = load_tracks(ctx.require("tracks"))
    K = _intrinsics(ctx, tracks)
    graph = _graph(ctx, tracks)
    problem = NrsfmProblem(tracks, graph, K)
    if ctx.dump_program:
        encode_nrsfm(problem)[0].dump_json(ctx.path("program.json"))
    depths, lengths = reconstruct_nrsfm(problem, ctx.solver)
    recon = Reconstruction(tracks, depths)
    files = _save_reconstruction(ctx, recon, graph, lengths)
    return {"files": files, "solver": depths.stats, "length_sum": lengths.directed_sum()}


def cmd_sft(ctx: RunContext) -> Dict[str, Any]:
    tracks = load_tracks(ctx.require("tracks"))
    K = _intrinsics(ctx, tracks)
    template = load_template(ctx.require("template"))
    graph = _graph(ctx, tracks)
    problem = SfTProblem(tracks, graph, template, K)
    if ctx.dump_program:
        for view in range(tracks.num_views):
            encode_sft_view(problem, view)[0].dump_json(ctx.path(f"program_view_{view:03d}.json"))
    depths = reconstruct_sft(problem, ctx.solver)
    files = _save_reconstruction(ctx, Reconstruction(tracks, depths), graph)
    return {"files": files, "solver": depths.stats}


def cmd_calibrate_template(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    tracks = load_tracks(ctx.require("tracks"))
    K0 = _intrinsics(ctx, tracks)
    template = load_template(ctx.require("template"))
    graph = _graph(ctx, tracks)
    result = calibrate_with_template(tracks, graph, template, K0, ctx.solver, hypotheses=cfg.hypotheses,
                                     seed=cfg.seed, starts=cfg.iac_starts, epsilon=cfg.epsilon,
                                     max_outer=cfg.template_max_outer)
    write_json(ctx.path("calibration.json"), result.to_dict())
    files = _save_reconstruction(ctx, result.reconstruction, graph)
    files["calibration"] = "calibration.json"
    return {"files": files, "initial": K0.to_dict(), "intrinsics": result.intrinsics.to_dict(),
            "iterations": len(result.iterations)}


def cmd_calibrate(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    tracks = load_tracks(ctx.require("tracks"))
    K0 = _intrinsics(ctx, tracks)
    graph = _graph(ctx, tracks)
    result = calibrate_without_template(tracks, graph, K0, focal_step=cfg.focal_step, epsilon=cfg.epsilon,
                                        max_outer=cfg.max_outer, mode=cfg.distance_mode, solver=ctx.solver)
    write_json(ctx.path("sweep.json"), result.to_dict())
    files = _save_reconstruction(ctx, result.reconstruction, graph, result.lengths)
    files["sweep"] = "sweep.json"
    if ctx.plot:
        from visualizer import ReconstructionVisualizer
        viz = ReconstructionVisualizer()
        fig, _ = viz.plot_sweep(result.state.history)
        viz.save_plot(str(ctx.path("sweep.png")), fig)
    return {"files": files, "initial": K0.to_dict(), "intrinsics": result.intrinsics.to_dict(),
            "converged": result.converged, "iterations": len(result.state.history)}


def cmd_add_points(ctx: RunContext) -> Dict[str, Any]:
    base_tracks = load_tracks(ctx.require("tracks"))
    K = _intrinsics(ctx, base_tracks)
    base = Reconstruction(base_tracks, load_depths(ctx.require("depths"), base_tracks, K))
    new_tracks = load_tracks(ctx.require("new_tracks"), num_views=base_tracks.num_views)
    joint = TrackSet(np.concatenate([base_tracks.pixels, new_tracks.pixels], axis=1),
                     np.concatenate([base_tracks.visible, new_tracks.visible], axis=1))
    graph = _graph(ctx, joint)
    result = add_points(AugmentProblem(base, joint, graph, K), ctx.solver)
    files = _save_reconstruction(ctx, result.reconstruction, graph, result.lengths)
    return {"files": files, "alpha": result.alpha, "scale_drift": result.scale_drift,
            "num_new": new_tracks.num_points, "solver": result.stats}


def cmd_add_views(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    tracks = load_tracks(ctx.require("tracks"))
    K = _intrinsics(ctx, tracks)
    recon = Reconstruction(tracks, load_depths(ctx.require("depths"), tracks, K))
    new_tracks = load_tracks(ctx.require("new_tracks"), num_points=tracks.num_points)
    graph = _graph(ctx, tracks)
    depths = add_views(recon, graph, new_tracks, K, calibrate=cfg.calibrate_new_views, solver=ctx.solver,
                       hypotheses=cfg.hypotheses, seed=cfg.seed, starts=cfg.iac_starts,
                       epsilon=cfg.epsilon, max_outer=cfg.template_max_outer)
    files = _save_reconstruction(ctx, Reconstruction(new_tracks, depths))
    return {"files": files, "intrinsics": depths.intrinsics.to_dict(), "num_views": new_tracks.num_views}


def cmd_densify(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    tracks = load_tracks(ctx.require("tracks"))
    K = _intrinsics(ctx, tracks)
    result = densify(tracks, K, seed_size=cfg.seed_size, batch_size=cfg.batch_size, seed=cfg.seed, k=cfg.k,
                     ref_view=cfg.ref_view, solver=ctx.solver, checkpoint_dir=ctx.path("checkpoint"))
    files = _save_reconstruction(ctx, result.reconstruction, lengths=result.lengths)
    return {"files": files, **result.to_dict()}


def cmd_eval(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    if cfg.scene is None:
        raise ConfigError("'eval' needs --scene (a scene bundle directory)")
    scene, tracks, _ = load_scene_bundle(ctx.require("scene"))
    K = load_intrinsics(ctx.require("intrinsics")) if cfg.intrinsics is not None else scene.intrinsics
    recon = Reconstruction(tracks, load_depths(ctx.require("depths"), tracks, K))
    report = evaluate(recon, scene, cfg.align)
    write_json(ctx.path("metrics.json"), report.to_dict())
    logger.info("RMSE %.4g, mean error %.3f%% of depth, focal error %.2f%%", report.rmse,
                100.0 * report.relative_error, report.focal_error_pct)
    return {"files": {"metrics": "metrics.json"}, "metrics": report.to_dict()}


COMMANDS: Dict[str, Callable[[RunContext], Dict[str, Any]]] = {
    "synth": cmd_synth,
    "reconstruct": cmd_reconstruct,
    "sft": cmd_sft,
    "calibrate-template": cmd_calibrate_template,
    "calibrate": cmd_calibrate,
    "add-points": cmd_add_points,
    "add-views": cmd_add_views,
    "densify": cmd_densify,
    "eval": cmd_eval,
}

# Bundle files picked up automatically when --scene is given
SCENE_INPUTS = {
    "reconstruct": ("tracks", "intrinsics"),
    "sft": ("tracks", "intrinsics", "template"),
    "calibrate-template": ("tracks", "template"),
    "calibrate": ("tracks",),
    "densify": ("tracks", "intrinsics"),
    "eval": (),
}


# Argument parsing

def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    p.add_argument("--output-dir", "-o", dest="output_dir", help="Directory for artifacts and report.json")
    p.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    p.add_argument("--log-file", type=Path, help="Also write the log to this file")
    p.add_argument("--threads", type=int, help="Global cap on worker threads")
    p.add_argument("--seed", type=int, help="Seed for every random choice")
    p.add_argument("--plot", action="store_true", help="Write PNG plots next to the artifacts")
    return p


def _input_args(p: argparse.ArgumentParser, *names: str) -> None:
    help_text = {
        "tracks": "Tracks CSV (view,point,x,y,visible)",
        "new_tracks": "Tracks CSV of the new points or views",
        "intrinsics": "Intrinsics JSON; default guess when omitted",
        "template": "Template CSV (i,j,d)",
        "depths": "Depths CSV (view,point,lambda) of an existing reconstruction",
        "scene": "Scene bundle directory written by 'synth'",
    }
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, help=help_text[name])


def _graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="Neighbors per point (default 8)")
    p.add_argument("--ref-view", dest="ref_view", type=int, help="View used to build the neighbor graph")
    p.add_argument("--image-width", dest="image_width", type=float, help="Image width for the default intrinsics")
    p.add_argument("--image-height", dest="image_height", type=float, help="Image height for the default intrinsics")


def _solver_args(p: argparse.ArgumentParser, dump: bool = False) -> None:
    p.add_argument("--tol", dest="solver.tol", type=float, help="Solver tolerance (default 1e-7)")
    p.add_argument("--max-iter", dest="solver.max_iter", type=int, help="Solver iteration cap (default 100000)")
    p.add_argument("--backend", dest="solver.backend", help="Solver backend: reference or scs")
    p.add_argument("--max-workers", dest="solver.max_workers", type=int, help="Per-view solve pool size")
    if dump:
        p.add_argument("--dump-program", action="store_true", help="Write the cone program(s) as JSON")


def _calibration_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hypotheses", type=int, help="IAC hypotheses per iteration (default 200)")
    p.add_argument("--iac-starts", dest="iac_starts", type=int, help="Random starts per minimal IAC problem")
    p.add_argument("--epsilon", type=float, help="Relative focal change counted as converged (default 0.01)")
    p.add_argument("--max-outer", dest="template_max_outer", type=int, help="Outer iteration cap (default 10)")


def build_argparser() -> argparse.ArgumentParser:
    common = _common_parser()
    ap = argparse.ArgumentParser(prog="nrsfm", description="Template-less reconstruction and self-calibration "
                                 "of deforming surfaces from point tracks")
    sub = ap.add_subparsers(dest="cmd", required=True)

    ps = sub.add_parser("synth", parents=[common], help="generate a synthetic scene bundle")
    ps.add_argument("--family", dest="synth.family", choices=["cylinder", "hinge"])
    ps.add_argument("--rows", dest="synth.rows", type=int)
    ps.add_argument("--cols", dest="synth.cols", type=int)
    ps.add_argument("--spacing", dest="synth.spacing", type=float)
    ps.add_argument("--views", dest="synth.views", type=int)
    ps.add_argument("--focal", dest="synth.focal", type=float)
    ps.add_argument("--depth", dest="synth.depth", type=float)
    ps.add_argument("--noise", dest="synth.noise", type=float, help="Pixel noise sigma")
    ps.add_argument("--drop-rate", dest="synth.drop_rate", type=float, help="Probability of dropping an observation")
    ps.add_argument("--k", type=int, help="Neighbors per point for the --plot graph")
    ps.add_argument("--ref-view", dest="ref_view", type=int)

    pr = sub.add_parser("reconstruct", parents=[common], help="template-less batch reconstruction")
    _input_args(pr, "tracks", "intrinsics", "scene")
    _graph_args(pr)
    _solver_args(pr, dump=True)

    pf = sub.add_parser("sft", parents=[common], help="template-based reconstruction")
    _input_args(pf, "tracks", "intrinsics", "template", "scene")
    _graph_args(pf)
    _solver_args(pf, dump=True)

    pt = sub.add_parser("calibrate-template", parents=[common], help="estimate intrinsics with a template")
    _input_args(pt, "tracks", "intrinsics", "template", "scene")
    _graph_args(pt)
    _solver_args(pt)
    _calibration_args(pt)

    pc = sub.add_parser("calibrate", parents=[common], help="estimate the focal length without a template")
    _input_args(pc, "tracks", "intrinsics", "scene")
    _graph_args(pc)
    _solver_args(pc)
    pc.add_argument("--focal-step", dest="focal_step", type=float, help="Relative downward step (default 0.05)")
    pc.add_argument("--epsilon", type=float, help="Relative focal change counted as consistent (default 0.01)")
    pc.add_argument("--max-outer", dest="max_outer", type=int, help="Sweep iteration cap (default 30)")
    pc.add_argument("--distance-mode", dest="distance_mode", choices=["auto", "euclidean", "geodesic"])

    pa = sub.add_parser("add-points", parents=[common], help="add new points to a reconstruction")
    _input_args(pa, "tracks", "depths", "new_tracks", "intrinsics")
    _graph_args(pa)
    _solver_args(pa)

    pv = sub.add_parser("add-views", parents=[common], help="add new views to a reconstruction")
    _input_args(pv, "tracks", "depths", "new_tracks", "intrinsics")
    _graph_args(pv)
    _solver_args(pv)
    _calibration_args(pv)
    pv.add_argument("--calibrate-new-views", dest="calibrate_new_views", action="store_true", default=None,
                    help="Estimate the new views' intrinsics with the self-template first")

    pd = sub.add_parser("densify", parents=[common], help="seed reconstruction plus batches of new points")
    _input_args(pd, "tracks", "intrinsics", "scene")
    _graph_args(pd)
    _solver_args(pd)
    pd.add_argument("--seed-size", dest="seed_size", type=int, help="Seed point count (default max(150, N/4))")
    pd.add_argument("--batch-size", dest="batch_size", type=int, help="Points per batch (default 150)")

    pe = sub.add_parser("eval", parents=[common], help="compare a reconstruction with a scene bundle")
    _input_args(pe, "scene", "depths", "intrinsics")
    pe.add_argument("--align", choices=["none", "globalScale"], help="Alignment before measuring errors")

    return ap


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"cmd", "config", "log_file", "plot", "dump_program"}
    overrides = {key: value for key, value in vars(args).items() if key not in skip and value is not None}
    if args.threads is not None and "solver.max_workers" not in overrides:
        overrides["solver.max_workers"] = args.threads
    return overrides


def _report(ctx: Optional[RunContext], command: str, payload: Dict[str, Any]) -> Dict[str, Any]:
    report = {"command": command, **payload}
    if ctx is not None:
        report["config"] = ctx.config.to_dict()
        existing = [p for p in ctx.inputs if p.is_file()]
        report["inputs"] = input_hash(existing)
    return report


def run(command: str, config: RunConfig, plot: bool = False, dump_program: bool = False) -> int:
    """Run one subcommand with a resolved config; returns the exit status."""
    config = _scene_defaults(config, SCENE_INPUTS.get(command, ()))
    ctx = RunContext(command, config, plot=plot, dump_program=dump_program)
    start = time.perf_counter()
    try:
        results = COMMANDS[command](ctx)
    except Exception as exc:
        if isinstance(exc, OSError):
            exc = DataError(f"{exc.filename or ''}: {exc.strerror or exc}")
        elif not isinstance(exc, NrsfmError):
            # numpy/scipy failures surface as numerical errors
            logger.debug("%s raised %s", command, type(exc).__name__, exc_info=exc)
            exc = NumericalError(f"{type(exc).__name__}: {exc}")
        error = {"status": "error", "kind": exc.kind, "message": str(exc)}
        logger.error("%s failed: %s", command, exc)
        print(json.dumps(error), file=sys.stderr)
        try:
            write_json(ctx.path(REPORT_FILE), _report(ctx, command, {**error, "timing": {
                "seconds": time.perf_counter() - start}}))
        except OSError:
            logger.warning("could not write %s", REPORT_FILE)
        return exc.exit_code

    report = _report(ctx, command, {"status": "ok", "results": results,
                                    "timing": {"seconds": time.perf_counter() - start}})
    write_json(ctx.path(REPORT_FILE), report)
    logger.info("%s finished in %.2f s; artifacts in %s", command, report["timing"]["seconds"], ctx.output)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_argparser().parse_args(argv)
    try:
        config = RunConfig.load(args.config, _overrides(args))
        setup_logging(config.log_level, args.log_file)
    except ConfigError as exc:
        print(json.dumps({"status": "error", "kind": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    return run(args.cmd, config, plot=args.plot, dump_program=getattr(args, "dump_program", False))


if __name__ == "__main__":
    raise SystemExit(main())
