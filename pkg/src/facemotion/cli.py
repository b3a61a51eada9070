"""``facemotion`` command-line interface.

Subcommands: rig-gen, bench-gen, track, edit, eval, leakage. A JSON file
given with ``--config`` supplies option values (flat, or nested under the
subcommand name); flags given explicitly on the command line win.

Exit codes: 0 success, 2 input error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from facemotion import __version__
from facemotion.errors import DomainError, GeometryError, NumericError, ParameterError, RankError
from facemotion.pipeline import (
    EXIT_INPUT,
    EXIT_NONCONVERGED,
    EditOptions,
    InputError,
    cmd_bench_gen,
    cmd_edit,
    cmd_eval,
    cmd_leakage,
    cmd_rig_gen,
    cmd_track,
)
from facemotion.tracker import TrackerConfig

log = logging.getLogger("facemotion")


def _tracker_flags(p):
    g = p.add_argument_group("tracker")
    g.add_argument("--max-iterations", type=int, default=100, help="per-frame iteration cap (default 100)")
    g.add_argument("--smoothness", type=float, default=0.1, help="temporal weight lambda (default 0.1)")
    g.add_argument("--tol", type=float, default=1e-9, help="convergence tolerance (default 1e-9)")
    g.add_argument("--jacobian", choices=("analytic", "fd"), default="analytic")


def _bool(text):
    value = str(text).lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facemotion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--jobs", type=int, default=1, help="maximum worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    add = lambda name, **kw: sub.add_parser(name, parents=[common], **kw)  # noqa: E731

    p = add("rig-gen", help="write a synthetic rig")
    p.add_argument("--out", required=True, help="rig JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-vertices", type=int, default=400)
    p.add_argument("--n-shape", type=int, default=10)
    p.add_argument("--n-expr", type=int, default=10)
    p.add_argument("--n-keypoints", type=int, default=49)

    p = add("bench-gen", help="generate the pose-locked benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--identities", type=int, default=4)
    p.add_argument("--tracks", type=int, default=4, help="expression tracks per identity")
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pose-seed", type=int, default=0)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--n-vertices", type=int, default=400)

    p = add("track", help="fit rig parameters to a keypoint sequence")
    p.add_argument("--keypoints", required=True, help="keypoints JSON ({'frames': [...]})")
    p.add_argument("--rig", required=True)
    p.add_argument("--out", required=True, help="tracked sequence JSON")
    _tracker_flags(p)

    p = add("edit", help="replace, enhance or animate expressions")
    p.add_argument("--source", required=True, help="source video directory")
    p.add_argument("--driving", required=True, help="driving video directory")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("replace", "enhance", "animate"), default="replace")
    p.add_argument("--bam", type=_bool, default=None,
                   help="attenuate motion outside the facial mask (default: on unless animate)")
    p.add_argument("--feather", type=float, default=0.0, help="attenuation ramp in pixels (default 0)")
    p.add_argument("--expansion", type=float, default=1.2, help="landmark expansion factor (default 1.2)")
    p.add_argument("--sigma", type=float, default=None, help="warp kernel width in pixels (default 5%% of size)")
    p.add_argument("--anchor", type=int, default=0, help="driving anchor frame for enhance (default 0)")
    p.add_argument("--rig", default=None, help="rig JSON (default: found next to the videos)")
    _tracker_flags(p)

    p = add("eval", help="compare generated frames with reference frames")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--rig", default=None)

    p = add("leakage", help="expression/pose leakage report")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--n-keypoints", type=int, default=49)
    p.add_argument("--min-angle", type=float, default=1.0)
    p.add_argument("--max-angle", type=float, default=45.0)
    return parser


def _config_defaults(path, command) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    flat.update(doc.get(command, {}))
    return {k.replace("-", "_"): v for k, v in flat.items()}


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    # first pass: find the command and config file without enforcing required flags
    relaxed = build_parser()
    for action in relaxed._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                for a in sp._actions:
                    a.required = False
    first, _ = relaxed.parse_known_args(argv)
    if getattr(first, "config", None):
        defaults = _config_defaults(first.config, first.command)
        defaults.pop("config", None)
        subparser = _subparser(parser, first.command)
        unknown = sorted(set(defaults) - {a.dest for a in subparser._actions})
        if unknown:
            raise InputError(f"{first.config}: unknown options {unknown}")
        subparser.set_defaults(**defaults)
        for action in subparser._actions:
            if action.dest in defaults:
                action.required = False
    return parser.parse_args(argv)


def _tracker(args) -> TrackerConfig:
    return TrackerConfig(max_iterations=args.max_iterations, smoothness_lambda=args.smoothness,
                         convergence_tol=args.tol, jacobian_mode=args.jacobian)


def run(args) -> int:
    if args.jobs < 1:
        raise InputError("--jobs must be >= 1")
    if args.command == "rig-gen":
        return cmd_rig_gen(args.out, args.seed, args.n_vertices, args.n_shape, args.n_expr,
                           args.n_keypoints)
    if args.command == "bench-gen":
        return cmd_bench_gen(args.out, jobs=args.jobs, n_identities=args.identities,
                             n_expression_tracks=args.tracks, frames_per_video=args.frames,
                             fps=args.fps, seed=args.seed, pose_track_seed=args.pose_seed,
                             image_size=(args.height, args.width), n_vertices=args.n_vertices)
    if args.command == "track":
        return cmd_track(args.keypoints, args.rig, args.out, _tracker(args))
    if args.command == "edit":
        options = EditOptions(args.mode, args.bam, args.feather, args.expansion, args.sigma,
                              args.anchor)
        return cmd_edit(args.source, args.driving, args.out, options, args.rig, _tracker(args),
                        jobs=args.jobs)
    if args.command == "eval":
        return cmd_eval(args.generated, args.reference, args.out, args.rig, jobs=args.jobs)
    return cmd_leakage(args.out, args.seed, args.samples, args.n_keypoints, args.min_angle,
                       args.max_angle)


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InputError, ParameterError, DomainError, GeometryError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    log.setLevel(logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING)
    try:
        return run(args)
    except (InputError, ParameterError, DomainError, GeometryError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (RankError, NumericError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
