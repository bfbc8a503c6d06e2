"""Command-line front end.

Exit codes: 0 success, 1 solver failure, 2 I/O or argument error.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import correspondences as corr
from .experiments import MODES, run_fig6, to_csv
from .geometry import rotation_zxz
from .multiview import GraphDisconnectedError, integrate_multiview
from .ransac import AllSamplesDegenerateError, RansacConfig, ransac_pair
from .solvers import (
    DEFAULT_RESTARTS,
    InsufficientCorrespondencesError,
    NoFeasibleEtaError,
    PairSolution,
    rotation_error_deg,
    solve_pair,
)
from .synth import SamplingExhaustedError, SynthConfig, generate, generate_multiview, load_sidecar, save_sidecar

EXIT_OK, EXIT_SOLVER, EXIT_IO = 0, 1, 2
PAIR_RE = re.compile(r"^pair_(\d+)_(\d+)\.json$")
SOLVER_ERRORS = (InsufficientCorrespondencesError, NoFeasibleEtaError, AllSamplesDegenerateError,
                 GraphDisconnectedError, SamplingExhaustedError)

log = logging.getLogger("reflpose")


class UsageError(Exception):
    pass


def _counts(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("counts must be non-negative integers")
    return vals


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".truth.json")


def _with_truth(doc: dict, sol: PairSolution, truth_path: str | None) -> dict:
    if truth_path:
        angles, _, _, _ = load_sidecar(truth_path)
        err = rotation_error_deg(sol.R21, rotation_zxz(*angles.as_tuple()))
        doc["rotation_error_deg"] = err
        log.info("rotation error vs truth: %.6g deg", err)
    return doc


# ------------------------------------------------------------------ subcommands

def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_pixel=args.n_pixel, n_normal=args.n_normal, n_reflection=args.n_reflection,
        noise_normal_sigma=np.radians(args.noise_normal_deg), noise_pixel_sigma=args.noise_pixel,
        outlier_fraction=args.outliers, rng_seed=args.seed,
    )
    if args.views > 2:
        if not args.output:
            raise UsageError("--views > 2 needs --output DIR")
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        mv = generate_multiview(args.views, cfg)
        for (i, j), inst in mv.pairs.items():
            corr.save(inst.observed, out / f"pair_{i}_{j}.json")
            save_sidecar(inst.truth, out / f"pair_{i}_{j}.truth.json")
        (out / "views.truth.json").write_text(json.dumps({
            "rotations": [R.tolist() for R in mv.rotations],
            "gbrs": [list(g.as_tuple()) for g in mv.gbrs],
        }, indent=1) + "\n", encoding="utf-8")
        log.info("wrote %d pairs to %s", len(mv.pairs), out)
        return EXIT_OK
    inst = generate(cfg)
    text = json.dumps(corr.to_dict(inst.observed), indent=1) + "\n"
    if args.output:
        out = Path(args.output)
        out.write_text(text, encoding="utf-8")
        side = Path(args.truth) if args.truth else _sidecar_path(out)
        save_sidecar(inst.truth, side)
        log.info("wrote %s and %s", out, side)
    else:
        sys.stdout.write(text)
        if args.truth:
            save_sidecar(inst.truth, args.truth)
    return EXIT_OK


def cmd_solve_pair(args) -> int:
    s = corr.load(args.input)
    sol = solve_pair(s, args.restarts, np.random.default_rng(args.seed),
                     np.radians(args.reflection_threshold_deg))
    doc = _with_truth(sol.to_dict(), sol, args.truth)
    _emit(json.dumps(doc, indent=1) + "\n", args.output)
    return EXIT_OK if sol.converged else EXIT_SOLVER


def cmd_ransac(args) -> int:
    s = corr.load(args.input)
    cfg = RansacConfig(
        max_iterations=args.max_iterations, pixel_inlier_threshold=args.pixel_threshold,
        normal_inlier_threshold=np.radians(args.normal_threshold_deg),
        reflection_inlier_threshold=np.radians(args.reflection_threshold_deg),
        confidence=args.confidence, rng_seed=args.seed,
    )
    sol, masks = ransac_pair(s, cfg)
    doc = _with_truth(sol.to_dict(), sol, args.truth)
    doc["inlier_counts"] = {k: int(v.sum()) for k, v in masks.items()}
    _emit(json.dumps(doc, indent=1) + "\n", args.output)
    return EXIT_OK if sol.converged else EXIT_SOLVER


def cmd_fig6(args) -> int:
    rows = run_fig6(args.trials, args.counts, args.mode, SynthConfig(), args.seed, args.restarts)
    _emit(to_csv(rows), args.output)
    return EXIT_OK


def _load_pairs(directory: Path, restarts: int, seed: int):
    """(i, j, solution, inliers) for every pair file; missing solutions are computed."""
    pairs = []
    for path in sorted(directory.iterdir()):
        m = PAIR_RE.match(path.name)
        if not m:
            continue
        i, j = int(m.group(1)), int(m.group(2))
        s = corr.load(path)
        sol_path = path.with_name(path.stem + ".solution.json")
        if sol_path.exists():
            sol = PairSolution.from_dict(json.loads(sol_path.read_text(encoding="utf-8")))
        else:
            sol = solve_pair(s, restarts, np.random.default_rng([seed, i, j]))
        if sol.inliers:
            keep = {k: sol.inliers[k] for k in ("pixels", "normals", "reflections") if k in sol.inliers}
            s = s.subset(**keep)
        pairs.append((i, j, sol, s))
    if not pairs:
        raise UsageError(f"no pair_<i>_<j>.json files in {directory}")
    return pairs


def cmd_integrate(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    graph = integrate_multiview(_load_pairs(directory, args.restarts, args.seed))
    _emit(json.dumps(graph.to_dict(), indent=1) + "\n", args.output)
    return EXIT_OK if graph.converged else EXIT_SOLVER


# ------------------------------------------------------------------ parser

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--output", "-o", default=d(None), help="output file (default stdout)")
    p.add_argument("--quiet", "-q", action="store_true", default=d(False), help="only print errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reflpose",
        description="Relative pose of reflective objects from pixel, normal and reflection "
                    "correspondences.",
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic correspondence set")
    p.add_argument("--n-pixel", type=int, default=20)
    p.add_argument("--n-normal", type=int, default=20)
    p.add_argument("--n-reflection", type=int, default=20)
    p.add_argument("--noise-normal-deg", type=float, default=0.0)
    p.add_argument("--noise-pixel", type=float, default=0.0)
    p.add_argument("--outliers", type=float, default=0.0, help="outlier fraction in [0, 1)")
    p.add_argument("--views", type=int, default=2, help="> 2 writes one file per pair into --output DIR")
    p.add_argument("--truth", help="truth sidecar path (default <output>.truth.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve-pair", parents=[common], help="two-step solve of one pair")
    p.add_argument("input", help="correspondence JSON")
    p.add_argument("--truth", help="truth sidecar; adds rotation_error_deg to the output")
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.add_argument("--reflection-threshold-deg", type=float, default=5.0)
    p.set_defaults(func=cmd_solve_pair)

    p = sub.add_parser("ransac", parents=[common], help="robust two-step solve of one pair")
    p.add_argument("input", help="correspondence JSON")
    p.add_argument("--truth", help="truth sidecar; adds rotation_error_deg to the output")
    p.add_argument("--max-iterations", type=int, default=2000)
    p.add_argument("--pixel-threshold", type=float, default=0.01)
    p.add_argument("--normal-threshold-deg", type=float, default=5.0)
    p.add_argument("--reflection-threshold-deg", type=float, default=5.0)
    p.add_argument("--confidence", type=float, default=0.99)
    p.set_defaults(func=cmd_ransac)

    p = sub.add_parser("fig6", parents=[common], help="correspondence-count failure rates as CSV")
    p.add_argument("--mode", choices=MODES, default="g21")
    p.add_argument("--counts", type=_counts, default=[3, 4, 5, 6])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.set_defaults(func=cmd_fig6)

    p = sub.add_parser("integrate", parents=[common], help="multi-view rotation refinement")
    p.add_argument("directory", help="directory of pair_<i>_<j>.json (+ optional .solution.json)")
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.set_defaults(func=cmd_integrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_IO
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (UsageError, corr.CorrespondenceFormatError, OSError, json.JSONDecodeError, KeyError,
            ValueError) as e:
        if isinstance(e, SOLVER_ERRORS):
            log.error("solver failure: %s", e)
            return EXIT_SOLVER
        log.error("%s", e)
        return EXIT_IO
    except SOLVER_ERRORS as e:
        log.error("solver failure: %s", e)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
