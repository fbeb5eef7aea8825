"""Command-line interface.

Subcommands: synthesize (manifest -> triplet index), sample (one depth file
-> one sparse map), stats (diversity report), loss (file-vs-file objective),
validate (index integrity). Every flag can also be set through an
environment variable named DEPTHMIX_<FLAG> (upper snake case, e.g.
DEPTHMIX_WORKERS for --workers); explicit flags win.

Exit codes: 0 success, 1 partial failure or failed validation, 2 invalid input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import __version__
from .errors import DepthmixError
from .formats import (
    default_unit_for,
    read_depth,
    read_gray_image,
    read_manifest,
    read_triplet_index,
    write_depth,
)
from .geometry import CameraIntrinsics
from .loss import PYRAMID_NORMS, g2_loss, l1l2_loss
from .pipeline import (
    STAGES,
    PipelineConfig,
    load_pipeline_config,
    run_stats,
    run_synthesize,
    run_validate,
    stats_from_index,
)
from .samplers import SamplerSpec, sample
from .synthesis import make_rng

ENV_PREFIX = "DEPTHMIX_"

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2


def _env(flag: str) -> str | None:
    return os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"))


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose defaults can come from the environment."""

    def add_argument(self, *args, **kwargs):  # noqa: D102
        flags = [a for a in args if isinstance(a, str) and a.startswith("--")]
        if flags:
            env_val = _env(flags[0].lstrip("-"))
            if env_val is not None:
                caster = kwargs.get("type", str)
                if kwargs.get("action") in ("store_true", "store_false"):
                    kwargs["default"] = env_val.lower() in ("1", "true", "yes")
                elif kwargs.get("nargs") in ("+", "*") or isinstance(
                    kwargs.get("nargs"), int
                ):
                    kwargs["default"] = [caster(v) for v in env_val.split()]
                else:
                    kwargs["default"] = caster(env_val)
                kwargs.pop("required", None)
        return super().add_argument(*args, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthmix",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"depthmix {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthesize", help="synthesize pseudo triplets over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override global seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--n", type=int, default=None, help="pseudo labels per image")
    p.add_argument("--m", type=int, default=None, help="sparse maps per label")
    p.add_argument("--format", choices=("pfm", "png"), default=None)

    p = sub.add_parser("sample", help="sub-sample one sparse map from a depth file")
    p.add_argument("--depth", required=True)
    p.add_argument("--pattern", required=True, choices=("uniform", "lidar", "features"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unit", choices=("m", "mm"), default=None, help="unit of the input file")
    p.add_argument("--rho", type=float, default=None, help="uniform: fraction of valid pixels")
    p.add_argument("--beams", type=int, default=64, help="lidar: beam count")
    p.add_argument("--az-bin-deg", type=float, default=0.2, help="lidar: azimuth bin width")
    p.add_argument("--elevation-deg", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"), help="lidar: beam elevation range")
    p.add_argument("--fx", type=float, default=None)
    p.add_argument("--fy", type=float, default=None)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)
    p.add_argument("--points", type=int, default=1500, help="features: point budget")
    p.add_argument("--nms-radius", type=int, default=5)
    p.add_argument("--image", default=None, help="features: grayscale image path")

    p = sub.add_parser("stats", help="diversity statistics per pipeline stage")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--index")
    p.add_argument("--stages", nargs="+", choices=STAGES, default=list(STAGES))
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("loss", help="evaluate the training objective file vs file")
    p.add_argument("--pred", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--loss", choices=("g2", "l1l2"), default="g2")
    p.add_argument("--pyramid-norm", choices=PYRAMID_NORMS, default="per_level")
    p.add_argument("--pred-unit", choices=("m", "mm"), default=None)
    p.add_argument("--label-unit", choices=("m", "mm"), default=None)

    p = sub.add_parser("validate", help="re-check every record of a triplet index")
    p.add_argument("--index", required=True)
    p.add_argument("--replay", type=int, default=5,
                   help="number of records to re-synthesize and byte-compare")
    return parser


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_pipeline_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["global_seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "n", None) is not None:
        overrides["n_labels"] = args.n
    if getattr(args, "m", None) is not None:
        overrides["m_sparse"] = args.m
    if getattr(args, "format", None) is not None:
        overrides["output_format"] = args.format
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_synthesize(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    manifest = read_manifest(args.manifest)
    summary = run_synthesize(manifest, cfg, args.out)
    print(
        f"entries {summary.entries_done}/{summary.entries_total}"
        f"  labels {summary.labels_written}  sparse {summary.sparse_written}"
        f"  elapsed {summary.elapsed_s:.2f}s  {summary.images_per_s:.1f} images/s"
    )
    for w in summary.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"index: {summary.index_path}")
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def _cmd_sample(args: argparse.Namespace) -> int:
    d = read_depth(args.depth, args.unit)
    if args.pattern == "uniform":
        spec = SamplerSpec(kind="uniform", rho=args.rho)
    elif args.pattern == "lidar":
        spec = SamplerSpec(
            kind="lidar",
            beams=args.beams,
            azimuth_bin_deg=args.az_bin_deg,
            elevation_range_deg=tuple(args.elevation_deg) if args.elevation_deg else None,
        )
    else:
        spec = SamplerSpec(kind="features", points=args.points, nms_radius=args.nms_radius)

    intr = None
    if args.pattern == "lidar":
        if None in (args.fx, args.fy, args.cx, args.cy):
            raise DepthmixError("lidar sampling needs --fx --fy --cx --cy")
        intr = CameraIntrinsics(args.fx, args.fy, args.cx, args.cy)
    image = read_gray_image(args.image) if args.image else None

    sp = sample(d, spec, make_rng(args.seed), k=intr, image=image)
    write_depth(sp.to_depth_map(), args.out)
    print(f"wrote {len(sp)} points to {args.out}")
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    if args.index:
        report = stats_from_index(read_triplet_index(args.index))
    else:
        cfg = _build_config(args)
        report = run_stats(read_manifest(args.manifest), cfg, tuple(args.stages))
    print(report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report.to_json_dict(), f, sort_keys=True, indent=1)
            f.write("\n")
        print(f"report: {args.out}")
    return EXIT_OK


def _cmd_loss(args: argparse.Namespace) -> int:
    pred = read_depth(args.pred, args.pred_unit or default_unit_for(args.pred))
    label = read_depth(args.label, args.label_unit or default_unit_for(args.label))
    if args.loss == "g2":
        breakdown = g2_loss(pred, label, pyramid_norm=args.pyramid_norm)
    else:
        breakdown = l1l2_loss(pred, label)
    print(json.dumps(breakdown.to_json_dict(), sort_keys=True, indent=1))
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    report = run_validate(args.index, replay=args.replay)
    print(
        f"records {report.records_checked}  replayed {report.replayed}"
        f"  violations {len(report.violations)}"
    )
    for v in report.violations:
        print(f"violation [{v.record}] {v.kind}: {v.message}")
    return EXIT_OK if report.ok else EXIT_PARTIAL


_COMMANDS = {
    "synthesize": _cmd_synthesize,
    "sample": _cmd_sample,
    "stats": _cmd_stats,
    "loss": _cmd_loss,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except DepthmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
