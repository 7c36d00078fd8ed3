"""Command-line front end for the adapter: extract, export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from prism_eval.core_io import RelativePose

from .backbones import load_denoiser, load_embedder
from .extract import ExtractionJob, export_baseline_embeddings, extract_activations


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prism-adapter",
        description="Backbone adapter emitting PRSA activation dumps and PRSF exports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="dump one-step denoiser activations to PRSA")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--daz", type=float, default=0.0, help="relative azimuth (degrees)")
    p.add_argument("--delev", type=float, default=0.0, help="relative elevation (degrees)")
    p.add_argument("--drad", type=float, default=0.0, help="relative radius")
    p.add_argument("--timestep", type=int, default=0)
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--backbone", type=str, default="toy-unet")
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("export", help="export baseline image embeddings to PRSF")
    p.add_argument("--images", type=Path, nargs="*", default=[])
    p.add_argument("--backbone", type=str, default="toy-clip")
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=cmd_export)
    return parser


def cmd_extract(args: argparse.Namespace) -> int:
    backbone = load_denoiser(args.backbone)
    job = ExtractionJob(
        source_path=str(args.source),
        target_path=str(args.target),
        pose=RelativePose(args.daz, args.delev, args.drad),
        timestep=args.timestep,
        backbone=args.backbone,
        noise_seed=args.seed,
    )
    extract_activations(job, backbone, args.output)
    print(f"wrote {args.output} ({args.backbone}, t={args.timestep}, seed={args.seed})")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    embedder = load_embedder(args.backbone)
    export_baseline_embeddings([str(p) for p in args.images], embedder, args.output)
    print(f"wrote {args.output} ({args.backbone}, N={len(args.images)})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entry_point() -> None:
    try:
        code = main()
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = 1
    sys.exit(code)


if __name__ == "__main__":
    entry_point()
