"""Command-line interface: ``steerers <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, descriptor, fit, group_reps, io, matcher

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _pair_list(values: np.ndarray) -> list[list[float]]:
    return [[float(v.real), float(v.imag)] for v in values]


def _matcher_config(args) -> matcher.MatcherConfig:
    base = matcher.MatcherConfig()
    return matcher.MatcherConfig(
        inverse_temperature=args.iota if args.iota is not None else base.inverse_temperature,
        similarity_threshold=(args.similarity_threshold if args.similarity_threshold is not None
                              else base.similarity_threshold),
        subset_size=args.subset_size if args.subset_size is not None else base.subset_size,
    )


def _default_group(obj) -> str:
    return "SO2" if isinstance(obj, group_reps.LieGenerator) else f"C{obj.group_order}"


def cmd_describe(args) -> int:
    img = io.load_pgm(args.image)
    kps = descriptor.detect_keypoints(img, args.max_keypoints)
    y = descriptor.describe(img, kps)
    io.save_descriptions(args.out, y.data)
    report = {
        "descriptions": str(args.out),
        "dimension": descriptor.DIM,
        "count": int(kps.shape[1]),
        "keypoints_centered_xy": kps.T.tolist(),
        "degenerate": np.flatnonzero(y.degenerate).tolist(),
    }
    _emit(_dumps(report), args.report)
    return EXIT_OK


def _load_manifest(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get("pairs"), list):
        raise ValueError("manifest must be an object with a 'pairs' list")
    batch = fit.CorrespondenceBatch()
    for i, entry in enumerate(manifest["pairs"]):
        try:
            before = io.load_descriptions(path.parent / entry["before"])
            after = io.load_descriptions(path.parent / entry["after"])
        except KeyError as exc:
            raise ValueError(f"manifest pair {i} lacks {exc}") from None
        if "k" in entry:
            batch.add(before, after, k=int(entry["k"]))
        elif "angle_deg" in entry:
            batch.add(before, after, angle=math.radians(float(entry["angle_deg"])))
        else:
            raise ValueError(f"manifest pair {i} needs 'k' or 'angle_deg'")
    if not batch.pairs:
        raise ValueError("manifest lists no pairs")
    return manifest, batch


def cmd_fit(args) -> int:
    manifest, batch = _load_manifest(args.manifest)
    angles = [p.angle is not None for p in batch.pairs]
    report: dict = {}
    if all(angles):
        res = fit.fit_generator(batch)
        obj = res.generator
        report.update(kind="generator", residual=res.residual,
                      angles_deg=[math.degrees(a) for a in res.angles])
        group = "SO2"
    elif not any(angles):
        order = int(manifest.get("group_order", 4))
        anchor = manifest.get("anchor")
        res = (fit.fit_steerer_orthogonal(batch, order) if anchor is None
               else fit.fit_steerer_anchored(batch, order, int(anchor)))
        obj = res.steerer
        report.update(kind="steerer", group_order=order, residual=res.residual,
                      orthogonality_defect=res.orthogonality_defect, rank=res.rank)
        group = f"C{order}"
    else:
        raise ValueError("manifest mixes step counts and angles")
    io.save_steerer(args.out, obj)
    report["eigenvalues"] = _pair_list(group_reps.spectrum(obj.matrix))
    try:
        dec = group_reps.decompose_irreps(obj.matrix, group)
        report["frequency_histogram"] = {str(k): v for k, v in dec.histogram().items()}
        report["non_admissible_blocks"] = len(dec.non_admissible)
    except group_reps.DecompositionError as exc:
        report["frequency_histogram"] = None
        report["decomposition_error"] = str(exc)
    _emit(_dumps(report), args.report)
    return EXIT_OK


def cmd_decompose(args) -> int:
    obj = io.load_steerer(args.steerer)
    group = args.group or _default_group(obj)
    dec = group_reps.decompose_irreps(obj.matrix, group)
    report = {
        "group": group,
        "dimension": int(obj.matrix.shape[0]),
        "residual": dec.residual,
        "frequency_histogram": {str(k): v for k, v in dec.histogram().items()},
        "blocks": [
            {"size": b.size, "frequency": b.frequency,
             "eigenvalue": [float(b.eigenvalue.real), float(b.eigenvalue.imag)],
             "admissible": b.admissible}
            for b in dec.blocks
        ],
    }
    _emit(_dumps(report), args.out)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    obj = io.load_steerer(args.steerer)
    ev = group_reps.spectrum(obj.matrix)
    report = {
        "kind": "generator" if isinstance(obj, group_reps.LieGenerator) else "steerer",
        "dimension": int(obj.matrix.shape[0]),
        "eigenvalues": _pair_list(ev),
        "max_modulus": float(np.max(np.abs(ev))) if len(ev) else 0.0,
    }
    _emit(_dumps(report), args.out)
    return EXIT_OK


def cmd_match(args) -> int:
    y1 = io.load_descriptions(args.desc1)
    y2 = io.load_descriptions(args.desc2)
    cfg = _matcher_config(args)
    s = None
    if args.steerer:
        s = io.load_steerer(args.steerer)
        if isinstance(s, group_reps.LieGenerator):
            if args.order is None:
                raise ValueError("a Lie generator needs --order to be discretized")
            s = group_reps.discretize_so2(s, args.order)
    if args.strategy == "procrustes":
        result = matcher.match_procrustes(y1, y2, cfg)
    elif args.strategy == "prototype-procrustes":
        result = matcher.match_prototype_procrustes(y1, y2, cfg=cfg, calibration=np.hstack([y1, y2]))
    else:
        if s is None and args.strategy != "dual-softmax":
            raise UsageError(f"strategy {args.strategy!r} needs --steerer")
        result = bench.run_matcher(args.strategy, y1, y2, s, cfg)
    _emit(result.to_json(), args.out)
    return EXIT_OK


def _parse_thresholds(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid threshold list {text!r}") from None


def cmd_bench(args) -> int:
    try:
        cfg = bench.BenchConfig(
            rotation_mode=args.mode,
            thresholds_px=args.threshold,
            max_keypoints=args.max_keypoints,
            strategy=args.strategy,
            seed=args.seed,
            matcher=_matcher_config(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    images = [io.load_pgm(p) for p in args.images] if args.images else bench.bundled_textures()
    s = io.load_steerer(args.steerer) if args.steerer else None
    if isinstance(s, group_reps.LieGenerator):
        s = group_reps.discretize_so2(s, 360 // bench.MODES[args.mode])
    result = bench.run_benchmark(images, cfg, steerer=s)
    if args.csv:
        Path(args.csv).write_text(result.to_csv(), encoding="utf-8")
    _emit(result.to_json(include_timings=args.timings), args.out)
    return EXIT_OK


def cmd_build(args) -> int:
    kind = args.kind
    if kind == "upsift":
        obj = descriptor.upsift_steerer()
    elif kind == "random":
        obj = group_reps.Steerer(group_reps.random_steerer_init(args.dim, args.seed), args.order or 4)
    elif kind == "spread" or args.generator:
        obj = group_reps.build_fixed_generator(kind, args.dim, generalize=args.dim != 256)
        if args.order:
            obj = group_reps.discretize_so2(obj, args.order)
    else:
        obj = group_reps.build_fixed_steerer(kind, args.dim)
    io.save_steerer(args.out, obj)
    return EXIT_OK


def _add_matcher_flags(p) -> None:
    p.add_argument("--strategy", default="max-matches")
    p.add_argument("--iota", type=float, help="inverse temperature of the dual softmax")
    p.add_argument("--subset-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="steerers", description="Steerers for rotation-equivariant keypoint descriptions.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("describe", help="PGM image -> DESC1 descriptions")
    p.add_argument("image")
    p.add_argument("--out", required=True, help="DESC1 output path")
    p.add_argument("--max-keypoints", type=int, default=256)
    p.add_argument("--report", help="JSON report path (default stdout)")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("fit", help="JSON manifest -> STEER1 steerer + JSON report")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="STEER1 output path")
    p.add_argument("--report", help="JSON report path (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("decompose", help="STEER1 -> irreducible blocks and frequencies")
    p.add_argument("steerer")
    p.add_argument("--group", help="C<n> or SO2 (default from the file)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("spectrum", help="STEER1 -> eigenvalues")
    p.add_argument("steerer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("match", help="two DESC1 files -> JSON matches")
    p.add_argument("desc1")
    p.add_argument("desc2")
    p.add_argument("--steerer")
    p.add_argument("--order", type=int, help="discretization order for a generator file")
    _add_matcher_flags(p)
    p.add_argument("--threshold", dest="similarity_threshold", type=float,
                   help="minimum match probability")
    p.add_argument("--out")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("bench", help="synthetic rotation benchmark -> JSON (+ CSV)")
    p.add_argument("--mode", choices=sorted(bench.MODES), default="quarter")
    p.add_argument("--threshold", type=_parse_thresholds, default=(3.0, 5.0, 10.0),
                   help="comma-separated pixel thresholds")
    p.add_argument("--similarity-threshold", type=float)
    p.add_argument("--max-keypoints", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    _add_matcher_flags(p)
    p.add_argument("--steerer", help="STEER1 steerer (default: built in for the mode)")
    p.add_argument("--images", nargs="+", help="PGM images (default: bundled textures)")
    p.add_argument("--csv", help="CSV output path")
    p.add_argument("--timings", action="store_true", help="include wall times in the JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("build-steerer", help="write a fixed, UPSIFT or random steerer to STEER1")
    p.add_argument("kind", choices=["inv", "freq1", "perm", "spread", "upsift", "random"])
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--generator", action="store_true", help="write the Lie generator instead")
    p.add_argument("--order", type=int, help="group order (discretizes generators)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "strategy", None) is not None:
            valid = set(matcher.STRATEGIES)
            if args.command == "match":
                valid |= {"procrustes", "prototype-procrustes"}
            if args.strategy not in valid:
                raise UsageError(f"unknown strategy {args.strategy!r}; choose from {sorted(valid)}")
        return args.func(args)
    except UsageError as exc:
        msg = str(exc)
        print(msg if ": error: " in msg else f"steerers: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"steerers: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
