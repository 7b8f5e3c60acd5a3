"""Command-line interface: ``ads generate | explain | evaluate``.

Exit codes: 0 success, 1 usage or input error, 2 pipeline error,
3 degraded evaluation (more than 10% of pairs failed).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import imaging
from .alignment import RansacConfig, load_keypoints
from .errors import ADSError, InvalidArgumentError, ManifestError
from .geometry import load_transforms, save_transforms
from .pipeline import PairInput, PipelineConfig, explain_pair, summary_line, write_intermediates

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PIPELINE = 2
EXIT_DEGRADED = 3

OUTPUT_ENV = "ADS_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        if "x" in text:
            w, h = (int(v) for v in text.lower().split("x"))
        else:
            w = h = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or WxH, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("image size must be positive")
    return w, h


def _default_out() -> str:
    return os.environ.get(OUTPUT_ENV, "ads_out")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    common.add_argument(
        "--out", default=None, help=f"output directory (default: ${OUTPUT_ENV} or ./ads_out)"
    )

    align = argparse.ArgumentParser(add_help=False)
    align.add_argument("--lambda", dest="tps_lambda", type=float, default=1e-3, help="TPS regulariser (default: 1e-3)")
    align.add_argument("--ransac", action="store_true", help="estimate the affine with RANSAC")
    align.add_argument("--ransac-threshold", type=float, default=0.05, help="RANSAC inlier threshold, normalised units")
    align.add_argument("--ransac-iterations", type=int, default=512)

    parser = _Parser(prog="ads", description="Align-Deform-Subtract: explain how two object images differ.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[common], help="render a synthetic dataset with ground truth")
    gen.add_argument("--count", type=int, required=True, help="number of images to render")
    gen.add_argument("--pairs", type=int, required=True, help="number of disjoint source/target pairs")
    gen.add_argument("--size", type=_size, default=(128, 128), help="image size, N or WxH (default: 128)")
    gen.add_argument("--config", type=Path, help="scene config file (key = value lines)")

    exp = sub.add_parser("explain", parents=[common, align], help="run Align-Deform-Subtract on one pair")
    exp.add_argument("--source", type=Path, required=True, help="source image (PNG/PPM)")
    exp.add_argument("--target", type=Path, required=True, help="target image (PNG/PPM)")
    exp.add_argument("--mask", type=Path, help="source object mask (PNG/PGM); default: whole frame")
    exp.add_argument("--keypoints", type=Path, help="keypoint correspondence JSON")
    exp.add_argument("--transforms", type=Path, help="transform parameter JSON to import")
    exp.add_argument("--emit-intermediates", action="store_true", help="write aligned/deformed images and the heatmap")

    ev = sub.add_parser("evaluate", parents=[common, align], help="correlate measures with ground truth")
    ev.add_argument("--manifest", type=Path, required=True, help="manifest.jsonl from 'generate'")
    ev.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    return parser


def _pipeline_config(args, emit: bool = False) -> PipelineConfig:
    ransac = RansacConfig(
        inlier_threshold=args.ransac_threshold, iterations=args.ransac_iterations, rng_seed=args.seed
    )
    return PipelineConfig(
        tps_lambda=args.tps_lambda, use_ransac=args.ransac, ransac=ransac, emit_intermediates=emit
    )


def cmd_generate(args) -> int:
    from .synthscene import SceneConfig, sample_dataset

    if args.count < 2 or args.pairs < 1:
        raise UsageError("--count must be >= 2 and --pairs >= 1")
    if 2 * args.pairs > args.count:
        raise UsageError(f"--pairs {args.pairs} exceeds --count/2 = {args.count / 2:g}")
    cfg = SceneConfig.load(args.config) if args.config else SceneConfig()
    width, height = args.size
    manifest = sample_dataset(args.count, args.pairs, args.seed, width, height, args.out or _default_out(), cfg)
    print(manifest.path)
    return EXIT_OK


def _load_pair(args) -> PairInput:
    if args.keypoints is None and args.transforms is None:
        raise UsageError("explain needs --keypoints or --transforms")
    try:
        source = imaging.read_image(args.source)
        target = imaging.read_image(args.target)
        mask = imaging.read_mask(args.mask) if args.mask else None
    except OSError as exc:
        raise UsageError(f"cannot read input image: {exc}") from exc
    size = (source.shape[1], source.shape[0])
    corr = affine = tps = None
    try:
        if args.keypoints:
            corr = load_keypoints(args.keypoints, size)
        if args.transforms:
            affine, tps = load_transforms(args.transforms)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    except ADSError as exc:
        raise UsageError(str(exc)) from exc
    try:
        return PairInput(source, target, mask, corr, affine, tps)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc


def cmd_explain(args) -> int:
    inp = _load_pair(args)
    try:
        report = explain_pair(inp, _pipeline_config(args, args.emit_intermediates))
    except ADSError as exc:
        print(f"ads explain: pipeline error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    out = Path(args.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    save_transforms(out / "transforms.json", report.affine, report.tps)
    if args.emit_intermediates:
        write_intermediates(report, out)
    print(summary_line(report))
    print(out / "report.json")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate
    from .synthscene import load_manifest

    if args.workers is not None and args.workers < 1:
        raise UsageError("--workers must be positive")
    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out or _default_out())
    result = evaluate(manifest, out, _pipeline_config(args), workers=args.workers)
    print(result.table.format())
    print(out / "correlations.csv")
    if not result.run.valid:
        print(
            f"ads evaluate: {len(result.run.failures)}/{len(result.run.records)} pairs failed; run is invalid",
            file=sys.stderr,
        )
        return EXIT_DEGRADED
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "explain": cmd_explain, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ads {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ADSError as exc:
        print(f"ads {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ads {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
