"""Command-line orchestration of the evaluation pipelines.

Subcommands: pool, train, embed, score, rank, masks, corrupt, validate.
Global flags ``--seed``, ``--deterministic``, ``--threads`` (default from
the PRISM_EVAL_THREADS environment variable), and ``--output`` are accepted
by every subcommand.  Tables are printed human-readable on stdout and, when
``--output`` is given, also written as CSV with a fixed header.

Exit code is 0 on success; on failure a single machine-parsable line
``error: <ExceptionName>: <message>`` goes to stderr and the exit code is
nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import core_io, corruptions, head as head_mod, mask_geometry as geo, metrics
from .core_io import CameraPose, ContractError, EmbeddingSet, FormatError
from .pooling import PoolingConfig, build_raw_feature

ENV_THREADS = "PRISM_EVAL_THREADS"

SCORE_METRICS = ("dprism", "mmd", "mmd_prism", "fd", "psnr", "ssim", "cosine")


def _default_threads() -> int:
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _common_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=0, help="RNG seed for seeded steps")
    parent.add_argument(
        "--deterministic",
        action="store_true",
        help="force single-threaded execution for byte-identical outputs",
    )
    parent.add_argument(
        "--threads",
        type=int,
        default=None,
        help=f"worker threads (default: ${ENV_THREADS} or 1)",
    )
    parent.add_argument("--output", type=Path, default=None, help="output path")
    return parent


def _threads_from(args: argparse.Namespace) -> int:
    threads = args.threads if args.threads is not None else _default_threads()
    return 1 if args.deterministic else max(1, threads)


def _emit_table(header: list[str], rows: list[list], args: argparse.Namespace) -> None:
    widths = [
        max(len(str(h)), *(len(_fmt_cell(r[i])) for r in rows)) if rows else len(str(h))
        for i, h in enumerate(header)
    ]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths))
    print(line)
    for row in rows:
        print("  ".join(_fmt_cell(c).ljust(w) for c, w in zip(row, widths)))
    if args.output is not None:
        csv_lines = [",".join(header)]
        csv_lines += [",".join(_fmt_cell(c) for c in row) for row in rows]
        args.output.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _parse_pose(text: str) -> CameraPose:
    parts = text.split(",")
    if len(parts) != 3:
        raise ContractError(f"pose must be 'azimuth,elevation,radius', got {text!r}")
    return CameraPose(float(parts[0]), float(parts[1]), float(parts[2]))


# ---------------------------------------------------------------------------
# pool


def cmd_pool(args: argparse.Namespace) -> int:
    manifest = core_io.load_manifest(args.manifest)
    if args.output is None:
        raise ContractError("pool requires --output for the feature file")
    cfg = PoolingConfig()
    rows = []
    kept = 0
    for rec in manifest.records:
        path = Path(args.activations) / rec.activation_path
        try:
            stack = core_io.read_activation_file(path)
            vec = build_raw_feature(stack, cfg)
        except (core_io.FormatError, core_io.CorruptionError, core_io.DataError, OSError) as exc:
            if args.keep_going:
                print(f"warning: skipped {rec.activation_path}: {exc}", file=sys.stderr)
                continue
            raise
        if rows and vec.dim != rows[0].size:
            msg = (
                f"{rec.activation_path}: feature dim {vec.dim} != {rows[0].size} "
                "from earlier records"
            )
            if args.keep_going:
                print(f"warning: skipped {msg}", file=sys.stderr)
                continue
            raise ContractError(msg)
        rows.append(vec.values)
        kept += 1
    if not rows:
        raise ContractError("no activation files could be pooled")
    emb = EmbeddingSet(np.stack(rows), role="generated")
    core_io.write_embedding_file(emb, args.output)
    print(f"pooled {kept}/{len(manifest.records)} records -> {args.output} "
          f"(N={emb.count}, D={emb.dim})")
    return 0


# ---------------------------------------------------------------------------
# train


_CONFIG_FIELDS = {
    "margin": float,
    "learning_rate": float,
    "batch_size": int,
    "epochs": int,
    "weight_decay": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "negative_skip_threshold": float,
    "seed": int,
    "early_stop_patience": int,
    "hidden_dim": int,
    "out_dim": int,
    "val_fraction": float,
}


def _load_train_config(path: Path | None) -> dict:
    values: dict = {}
    if path is None:
        return values
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in _CONFIG_FIELDS:
                raise FormatError(f"{path}:{lineno}: unknown config entry {line!r}")
            try:
                values[key] = _CONFIG_FIELDS[key](value.strip())
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad value for {key}") from None
    return values


def cmd_train(args: argparse.Namespace) -> int:
    if args.output is None:
        raise ContractError("train requires --output for the head file")
    manifest = core_io.load_manifest(args.manifest)
    features = core_io.read_embedding_file(args.features)
    values = _load_train_config(args.config)
    overrides = {
        "seed": args.seed,
        "epochs": args.epochs,
        "margin": args.margin,
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
        "weight_decay": args.weight_decay,
        "early_stop_patience": args.patience,
        "negative_skip_threshold": args.skip_threshold,
        "hidden_dim": args.hidden_dim,
        "out_dim": args.out_dim,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    cfg = head_mod.TrainConfig(**values)
    val_manifest = val_features = None
    if args.val_manifest is not None:
        val_manifest = core_io.load_manifest(args.val_manifest)
        if args.val_features is None:
            raise ContractError("--val-manifest requires --val-features")
        val_features = core_io.read_embedding_file(args.val_features)
    trained, log = head_mod.train_head(
        manifest, features, cfg, val_manifest=val_manifest, val_features=val_features
    )
    head_mod.write_head_file(trained, args.output)
    if args.log is not None:
        Path(args.log).write_text(head_mod.format_training_log(log), encoding="utf-8")
    final = log[-1].train_loss if log else float("nan")
    print(f"trained head ({trained.in_dim}->{trained.hidden_dim}->{trained.out_dim}) "
          f"for {len(log)} epochs, final train loss {final:.6f} -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# embed


def cmd_embed(args: argparse.Namespace) -> int:
    if args.output is None:
        raise ContractError("embed requires --output for the embedding file")
    trained = head_mod.read_head_file(args.head)
    features = core_io.read_embedding_file(args.features)
    emb = head_mod.apply_head(trained, features, role=args.role)
    core_io.write_embedding_file(emb, args.output)
    print(f"embedded N={emb.count} rows at D={emb.dim} -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# score


def cmd_score(args: argparse.Namespace) -> int:
    metric = args.metric
    if metric in ("psnr", "ssim"):
        img_a = corruptions.load_png(args.a)[:, :, :3]
        img_b = corruptions.load_png(args.b)[:, :, :3]
        value = metrics.psnr(img_a, img_b) if metric == "psnr" else metrics.ssim(img_a, img_b)
        _emit_table(["metric", "value"], [[metric, value]], args)
        return 0
    set_a = core_io.read_embedding_file(args.a)
    set_b = core_io.read_embedding_file(args.b)
    if metric == "dprism":
        values = metrics.d_prism_rows(set_a, set_b)
        rows = [[i, float(v)] for i, v in enumerate(values)]
        rows.append(["mean", float(values.mean())])
        _emit_table(["row", "dprism"], rows, args)
    elif metric == "cosine":
        if set_a.count != set_b.count:
            raise ContractError("cosine needs row-aligned sets")
        rows = []
        for i in range(set_a.count):
            rows.append([i, metrics.cosine_score(set_a.rows[i], set_b.rows[i])])
        _emit_table(["row", "cosine"], rows, args)
    elif metric in ("mmd", "mmd_prism"):
        sigma = args.sigma
        if metric == "mmd":
            if sigma is None:
                sigma = metrics.median_bandwidth(set_a, set_b, seed=args.seed)
            value = metrics.mmd_unbiased(
                set_a, set_b, metrics.KernelConfig(sigma), clamp=args.clamp
            )
        else:
            if sigma is None:
                sigma = metrics.median_bandwidth(set_a, set_b, seed=args.seed)
            value = metrics.mmd_prism(set_a, set_b, bandwidth=sigma, clamp=args.clamp)
        _emit_table(
            ["metric", "value", "sigma", "clamped"],
            [[metric, value, float(sigma), str(bool(args.clamp)).lower()]],
            args,
        )
    elif metric == "fd":
        value = metrics.frechet_distance(
            metrics.gaussian_stats(set_a), metrics.gaussian_stats(set_b)
        )
        _emit_table(["metric", "value"], [["fd", value]], args)
    else:
        raise ContractError(f"unknown metric {metric!r}")
    return 0


# ---------------------------------------------------------------------------
# rank


def cmd_rank(args: argparse.Namespace) -> int:
    anchor = core_io.read_embedding_file(args.anchor, role="anchor")
    entries = []
    for spec in args.models:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise ContractError(f"model spec must be name=path, got {spec!r}")
        gen = core_io.read_embedding_file(path)
        value = metrics.mmd_prism(
            gen, anchor, bandwidth=args.sigma, clamp=args.clamp, seed=args.seed
        )
        entries.append((name, value))
    entries.sort(key=lambda e: e[1])
    # stable name order inside tie groups (values within 1e-12)
    ordered: list[tuple[str, float]] = []
    group: list[tuple[str, float]] = []
    for entry in entries:
        if group and entry[1] - group[0][1] > 1e-12:
            ordered.extend(sorted(group))
            group = []
        group.append(entry)
    ordered.extend(sorted(group))
    rows = [[i + 1, name, value] for i, (name, value) in enumerate(ordered)]
    _emit_table(["rank", "model", "mmd_prism"], rows, args)
    return 0


# ---------------------------------------------------------------------------
# masks


def _emit_mask_set(
    mesh: geo.TriMesh,
    src_pose: CameraPose,
    tgt_pose: CameraPose,
    outdir: Path,
    args: argparse.Namespace,
    threads: int,
) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    src_cam = geo.camera_from_pose(src_pose, image_size=args.size, fov_deg=args.fov)
    tgt_cam = geo.camera_from_pose(tgt_pose, image_size=args.size, fov_deg=args.fov)
    vis_raw, invis_raw, sil = geo.visibility_masks(mesh, src_cam, tgt_cam)
    vis_ref, invis_ref = geo.refine_masks(vis_raw, invis_raw)
    epi = geo.epipolar_mask(
        mesh, src_cam, tgt_cam, samples_per_ray=args.samples, threads=threads
    )
    positive, negative = geo.compose_label_masks(vis_ref, invis_ref, epi)
    named = {
        "silhouette": sil,
        "visibility_raw": vis_raw,
        "invisibility_raw": invis_raw,
        "visibility": vis_ref,
        "invisibility": invis_ref,
        "epipolar": epi,
        "positive": positive,
        "negative": negative,
    }
    for name, mask in named.items():
        geo.write_mask_pbm(mask, outdir / f"{name}.pbm")
    if sil.area > 0:
        w_pos = geo.mask_weight(positive, sil)
        w_neg = geo.mask_weight(negative, sil)
    else:
        w_pos = w_neg = 0.0
    meta = (
        f"src_azimuth={src_pose.azimuth_deg:g} src_elevation={src_pose.elevation_deg:g} "
        f"src_radius={src_pose.radius:g} tgt_azimuth={tgt_pose.azimuth_deg:g} "
        f"tgt_elevation={tgt_pose.elevation_deg:g} tgt_radius={tgt_pose.radius:g} "
        f"fov_deg={args.fov:g} size={args.size} close_radius={geo.REFINE_CLOSE_RADIUS} "
        f"open_radius={geo.REFINE_OPEN_RADIUS} epipolar_close={geo.EPIPOLAR_CLOSE_RADIUS} "
        f"silhouette_dilate={geo.EPIPOLAR_SILHOUETTE_DILATE_RADIUS} "
        f"positive_weight={w_pos:.6f} negative_weight={w_neg:.6f}"
    )
    (outdir / "masks.meta").write_text(meta + "\n", encoding="utf-8")


def cmd_masks(args: argparse.Namespace) -> int:
    mesh = geo.load_obj(args.mesh)
    if not args.no_normalize:
        mesh = geo.normalize_mesh(mesh)
    threads = _threads_from(args)
    outdir = Path(args.outdir)
    if args.grid:
        pairs = 0
        for src_idx in range(geo.GRID_AZIMUTHS):
            for offset in range(1, geo.GRID_AZIMUTHS):
                tgt_idx = (src_idx + offset) % geo.GRID_AZIMUTHS
                pair_dir = outdir / f"src{src_idx:02d}_tgt{tgt_idx:02d}"
                _emit_mask_set(
                    mesh, geo.grid_pose(src_idx), geo.grid_pose(tgt_idx), pair_dir, args, threads
                )
                pairs += 1
        print(f"wrote {pairs} mask sets under {outdir}")
    else:
        if args.src is None or args.tgt is None:
            raise ContractError("masks requires --src and --tgt poses (or --grid)")
        _emit_mask_set(mesh, _parse_pose(args.src), _parse_pose(args.tgt), outdir, args, threads)
        print(f"wrote mask set under {outdir}")
    return 0


# ---------------------------------------------------------------------------
# corrupt


def cmd_corrupt(args: argparse.Namespace) -> int:
    img = corruptions.load_png(args.input)
    if args.grid:
        clean = corruptions.composite_and_resize(img, size=args.resize or 256)
        gen = ref = None
        if args.gen_embeddings is not None or args.ref_embeddings is not None:
            if args.gen_embeddings is None or args.ref_embeddings is None:
                raise ContractError("supply both --gen-embeddings and --ref-embeddings")
            gen = core_io.read_embedding_file(args.gen_embeddings)
            ref = core_io.read_embedding_file(args.ref_embeddings)
        header = ["kind", "severity", "parameter", "psnr", "ssim"]
        if gen is not None:
            header.append("dprism")
        rows = []
        grid_index = 0
        for kind in corruptions.CORRUPTION_KINDS:
            for severity in range(corruptions.SEVERITY_LEVELS):
                spec = corruptions.CorruptionSpec(kind, severity, seed=args.seed)
                out = corruptions.corrupt(clean, spec, noise_model=args.noise_model)
                row = [
                    kind,
                    severity,
                    spec.parameter,
                    metrics.psnr(clean, out),
                    metrics.ssim(clean, out),
                ]
                if gen is not None:
                    if grid_index >= gen.count or grid_index >= ref.count:
                        raise ContractError("embedding files have fewer rows than grid cells")
                    row.append(metrics.d_prism(gen.rows[grid_index], ref.rows[grid_index]))
                if args.save_images is not None:
                    img_dir = Path(args.save_images)
                    img_dir.mkdir(parents=True, exist_ok=True)
                    corruptions.save_png(img_dir / f"{kind}_s{severity}.png", out)
                rows.append(row)
                grid_index += 1
        _emit_table(header, rows, args)
    else:
        if args.kind is None or args.severity is None:
            raise ContractError("corrupt requires --kind and --severity (or --grid)")
        if args.output is None:
            raise ContractError("corrupt requires --output for the corrupted image")
        if img.shape[2] == 4 or args.resize is not None:
            img = corruptions.composite_and_resize(img, size=args.resize or img.shape[0])
        spec = corruptions.CorruptionSpec(args.kind, args.severity, seed=args.seed)
        out = corruptions.corrupt(img[:, :, :3], spec, noise_model=args.noise_model)
        corruptions.save_png(args.output, out)
        print(f"wrote {args.output} ({args.kind} severity {args.severity}, seed {args.seed})")
    return 0


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args: argparse.Namespace) -> int:
    manifest = core_io.load_manifest(args.manifest)
    report = core_io.validate_manifest(manifest, args.root)
    for line in report.format_lines():
        print(line)
    if args.strict and not report.ok:
        print("error: ContractError: manifest validation found issues", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parent = _common_parent()
    parser = argparse.ArgumentParser(
        prog="prism-eval",
        description="Pose-aware embedding and evaluation toolkit for novel view synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool", parents=[parent], help="pool activation files into raw features")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--activations", type=Path, required=True, help="activation root directory")
    p.add_argument("--keep-going", action="store_true", help="skip unreadable files")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("train", parents=[parent], help="train the projection head")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True, help="raw feature PRSF file")
    p.add_argument("--config", type=Path, default=None, help="key=value training config file")
    p.add_argument("--log", type=Path, default=None, help="training log output path")
    p.add_argument("--val-manifest", type=Path, default=None)
    p.add_argument("--val-features", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--skip-threshold", type=float, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--out-dim", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", parents=[parent], help="apply a trained head to raw features")
    p.add_argument("--head", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--role", choices=core_io.VALID_ROLES, default="generated")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("score", parents=[parent], help="compute one metric over inputs")
    p.add_argument("--metric", choices=SCORE_METRICS, required=True)
    p.add_argument("--a", type=Path, required=True, help="first input (PRSF, or PNG for psnr/ssim)")
    p.add_argument("--b", type=Path, required=True, help="second input")
    p.add_argument("--clamp", action="store_true", help="floor MMD at zero")
    p.add_argument("--sigma", type=float, default=None, help="RBF bandwidth override")
    p.add_argument("--format", choices=("text", "table"), default="text")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", parents=[parent], help="leaderboard by distributional score")
    p.add_argument("--anchor", type=Path, required=True)
    p.add_argument("--models", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--clamp", action="store_true")
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("masks", parents=[parent], help="build view-pair masks from a mesh")
    p.add_argument("--mesh", type=Path, required=True, help="OBJ-subset mesh file")
    p.add_argument("--src", type=str, default=None, help="source pose 'az,el,radius'")
    p.add_argument("--tgt", type=str, default=None, help="target pose 'az,el,radius'")
    p.add_argument("--outdir", type=Path, required=True)
    p.add_argument("--size", type=int, default=geo.DEFAULT_IMAGE_SIZE)
    p.add_argument("--fov", type=float, default=geo.DEFAULT_FOV_DEG)
    p.add_argument("--samples", type=int, default=geo.EPIPOLAR_SAMPLES_PER_RAY)
    p.add_argument("--grid", action="store_true", help="all 16x15 grid view pairs")
    p.add_argument("--no-normalize", action="store_true", help="keep mesh coordinates as-is")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("corrupt", parents=[parent], help="apply image degradations")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--kind", choices=corruptions.CORRUPTION_KINDS, default=None)
    p.add_argument("--severity", type=int, default=None, choices=(0, 1, 2))
    p.add_argument("--grid", action="store_true", help="run the full kind x severity grid")
    p.add_argument("--resize", type=int, default=None)
    p.add_argument("--noise-model", choices=("uniform", "gaussian"), default="uniform")
    p.add_argument("--save-images", type=Path, default=None)
    p.add_argument("--gen-embeddings", type=Path, default=None)
    p.add_argument("--ref-embeddings", type=Path, default=None)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("validate", parents=[parent], help="check a manifest against disk")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--strict", action="store_true", help="exit nonzero when issues exist")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entry_point() -> None:
    try:
        code = main()
    except BrokenPipeError:
        code = 0
    except Exception as exc:  # single-line machine-parsable error contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = 1
    sys.exit(code)


if __name__ == "__main__":
    entry_point()
