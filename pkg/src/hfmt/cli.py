"""Command-line entry point: ``hfmt classify|track|sim|survey``.

Exit codes: 0 success, 1 domain failure, 2 usage or input parse error.
Machine-readable output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import os
import sys

from . import controller as ctl
from . import sim, survey
from .fiducial import FiducialConfig, FiducialPattern, detect_fiducial
from .imaging import PNMError, read_pnm
from .path_tracker import DEFAULT_CRUISE_V, SteeringGains, steering, track_frame

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"hfmt: {msg}", file=sys.stderr)


def _gains(text: str) -> tuple[float, float]:
    try:
        k_o, k_g = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected k_offset,k_gradient, got {text!r}") from None
    return k_o, k_g


def cmd_classify(args) -> int:
    try:
        img = read_pnm(args.image)
    except (OSError, PNMError) as exc:
        _err(f"cannot read {args.image}: {exc}")
        return EXIT_USAGE
    cfg = FiducialConfig(threshold=args.threshold, min_area=args.min_area, tol=args.tol)
    det = detect_fiducial(img, cfg)
    doc = {
        "pattern": det.pattern.value,
        "count": len(det.dots),
        "dots": [[b.centroid[0], b.centroid[1]] for b in det.dots],
        "board_fraction": det.board_fraction,
    }
    print(json.dumps(doc))
    if args.expect is not None and det.pattern is not FiducialPattern.parse(args.expect):
        _err(f"expected {args.expect}, classified {det.pattern.value}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_track(args) -> int:
    frames = sorted(glob.glob(os.path.join(glob.escape(args.frames), "lower_*.pgm")))
    k_o, k_g = args.gains
    gains = SteeringGains(k_offset=k_o, k_gradient=k_g, max_rate=args.max_rate)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["frame", "offset", "gradient", "omega", "valid"])
    rows = 0
    for path in frames:
        try:
            img = read_pnm(path)
        except (OSError, PNMError) as exc:
            _err(f"skipping {os.path.basename(path)}: {exc}")
            continue
        est = track_frame(img, args.threshold)
        cmd = steering(est, gains, args.cruise_v)
        name = os.path.basename(path)
        if est.valid:
            w.writerow([name, repr(est.offset), repr(est.gradient), repr(cmd.angular_velocity), "true"])
        else:
            w.writerow([name, "", "", 0, "false"])
        rows += 1
    if rows == 0:
        _err(f"no readable lower_*.pgm frames in {args.frames}")
        return EXIT_FAIL
    sys.stdout.write(out.getvalue())
    return EXIT_OK


def cmd_sim(args) -> int:
    path = args.world or sim.default_world_path()
    try:
        with open(path, encoding="utf-8") as fh:
            world, seed = sim.load_world(fh.read())
    except OSError as exc:
        _err(f"cannot read {path}: {exc}")
        return EXIT_USAGE
    except sim.WorldConfigError as exc:
        _err(f"bad world config {path}: {exc}")
        return EXIT_USAGE
    if args.seed is not None:
        seed = args.seed
    controller = ctl.new_controller(turn_rate=args.turn_rate)
    report = sim.run_episode(world, controller, dt=args.dt, max_steps=args.max_steps,
                             seed=seed, dump_dir=args.dump_frames)
    print(report.to_json())
    return EXIT_OK if report.outcome is sim.Outcome.REACHED_DESTINATION else EXIT_FAIL


def cmd_survey(args) -> int:
    try:
        with open(args.obs, encoding="utf-8") as fh:
            records = survey.read_observations(fh.read())
        with open(args.cams, encoding="utf-8") as fh:
            cams = survey.read_cameras(fh.read())
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except survey.SchemaError as exc:
        _err(f"schema error: {exc}")
        return EXIT_USAGE
    if not records:
        _err(f"no observations in {args.obs}")
        return EXIT_FAIL
    result = survey.survey_markers(records, cams)
    sys.stdout.write(survey.format_results(result))
    for marker, disc, reason in result.skipped:
        print(f"skipped marker_id={marker} disc_id={disc}: {reason}", file=sys.stderr)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hfmt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("classify", help="classify the board in an upper-camera PNM image")
    c.add_argument("image", help="P2/P3/P5/P6 image file")
    c.add_argument("--threshold", type=int, default=128, help="dark/bright split intensity (default: %(default)s)")
    c.add_argument("--min-area", type=int, default=9, help="smallest dot area in pixels (default: %(default)s)")
    c.add_argument("--tol", type=float, default=0.15, help="relative shape tolerance (default: %(default)s)")
    c.add_argument("--expect", default=None,
                   help="exit 1 unless the pattern matches (LeftTurn, RightTurn, Terminal, ...); "
                        "default: no check")
    c.set_defaults(func=cmd_classify)

    t = sub.add_parser("track", help="offset/gradient/omega CSV for lower_*.pgm frames")
    t.add_argument("frames", help="directory holding lower_*.pgm frames")
    t.add_argument("--gains", type=_gains, default=(1.0, 1.5), help="k_offset,k_gradient (default: 1.0,1.5)")
    t.add_argument("--max-rate", type=float, default=1.2, help="angular rate cap, rad/s (default: %(default)s)")
    t.add_argument("--cruise-v", type=float, default=DEFAULT_CRUISE_V, help="forward speed, m/s (default: %(default)s)")
    t.add_argument("--threshold", type=int, default=128, help="strip intensity threshold (default: %(default)s)")
    t.set_defaults(func=cmd_track)

    s = sub.add_parser("sim", help="run a closed-loop episode, print the report JSON")
    s.add_argument("world", nargs="?", default=None,
                   help="world JSON (default: the bundled three-segment world)")
    s.add_argument("--seed", type=int, default=None, help="noise seed (default: the world file's seed)")
    s.add_argument("--max-steps", type=int, default=5000,
                   help="step budget before Timeout (default: %(default)s)")
    s.add_argument("--dt", type=float, default=0.05, help="seconds per step (default: %(default)s)")
    s.add_argument("--turn-rate", type=float, default=1.0, help="rad/s for board turns (default: %(default)s)")
    s.add_argument("--dump-frames", default=None, metavar="DIR",
                   help="write lower_%%06d.pgm / upper_%%06d.pgm frames here (default: no dump)")
    s.set_defaults(func=cmd_sim)

    v = sub.add_parser("survey", help="triangulate marker discs from observations")
    v.add_argument("--obs", required=True, help="CSV marker_id,disc_id,frame,x,y (required)")
    v.add_argument("--cams", required=True, help="CSV frame,p11..p34 (required)")
    v.set_defaults(func=cmd_survey)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    try:
        return args.func(args)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
