"""Command-line entry point: ``ocloc <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime or
numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ModelConfig, TrainConfig, apply_overrides, load_config
from .data import DatasetError, GeneratorSpec, generate_dataset, read_dataset, write_dataset
from .decoder import sample_scene
from .metrics import evaluate_scenes, format_report
from .render import decomposition_panels, write_frames, write_manifest, write_panels
from .trainer import NonFiniteLossError, load_model, train
from .viewpoints import interpolate_viewpoints, sample_viewpoints

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _configs(args) -> tuple[ModelConfig, TrainConfig]:
    if args.config:
        model_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    return apply_overrides(model_cfg, train_cfg, args.set or [])


def _load_scenes(path: str, selector: str | None = None):
    scenes = read_dataset(path)
    if selector is None:
        return list(enumerate(scenes))
    idx = [int(s) for s in selector.split(",") if s.strip()]
    for i in idx:
        if not 0 <= i < len(scenes):
            raise DatasetError(f"scene index {i} out of range (dataset has {len(scenes)})")
    return [(i, scenes[i]) for i in idx]


# --- commands ---------------------------------------------------------------

def cmd_generate_data(args) -> None:
    model_cfg, _ = _configs(args)
    spec = GeneratorSpec(
        object_count_range=(args.min_objects, args.max_objects),
        M_range=(args.min_views, args.max_views),
        image_height=model_cfg.image_height,
        image_width=model_cfg.image_width,
        shadows=not args.no_shadows,
    )
    manifest = write_dataset(generate_dataset(spec, args.scenes, args.seed), args.out)
    print(f"wrote {len(manifest['scenes'])} scenes to {args.out}")


def cmd_train(args) -> None:
    model_cfg, train_cfg = _configs(args)
    if args.seed is not None:
        train_cfg = apply_overrides(model_cfg, train_cfg, [f"train.rng_seed={args.seed}"])[1]
    trainer = train(args.data, model_cfg, train_cfg, args.out, resume=args.resume,
                    echo=not args.quiet)
    print(f"finished at step {trainer.step}; checkpoint in {Path(args.out) / 'checkpoint.pt'}")


def cmd_evaluate(args) -> None:
    model = load_model(args.checkpoint)
    scenes = [s for _, s in _load_scenes(args.data)]
    seeds = range(args.seed or 0, (args.seed or 0) + args.runs)
    report = evaluate_scenes(model, scenes, args.mode, seeds)
    print(format_report(report))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1), encoding="utf-8")


def cmd_decompose(args) -> None:
    model = load_model(args.checkpoint)
    H, W = model.cfg.image_height, model.cfg.image_width
    out_dir = Path(args.out)
    listing = []
    for i, scene in _load_scenes(args.data, args.scenes):
        # one stream per scene, so a scene's panels do not depend on the selection
        gen = torch.Generator().manual_seed((args.seed or 0) + i)
        x = torch.from_numpy(scene.images)[None]
        _, _, out = model.decompose(x, gen)
        entries = write_panels(out_dir / f"scene_{i}", decomposition_panels(scene.images, out),
                               H, W)
        listing.append({"scene": i, "dir": f"scene_{i}", "panels": entries})
    write_manifest(out_dir, {"command": "decompose", "checkpoint": str(args.checkpoint),
                             "scenes": listing})
    print(f"wrote decompositions of {len(listing)} scene(s) to {out_dir}")


def cmd_interpolate(args) -> None:
    model = load_model(args.checkpoint)
    H, W = model.cfg.image_height, model.cfg.image_width
    (i, scene), = _load_scenes(args.data, str(args.scene))
    x = torch.from_numpy(scene.images)
    out_dir = Path(args.out)
    gen = torch.Generator().manual_seed(args.seed or 0)
    _, outs = interpolate_viewpoints(model, x, args.steps, gen)
    frames = [o.recon()[0, 0].numpy() for o in outs]
    payload = {"command": "interpolate-viewpoints", "scene": i,
               "interpolation": write_frames(out_dir, frames, H, W, "interp")}
    if args.sample:
        _, outs = sample_viewpoints(model, x, args.sample, gen)
        payload["samples"] = write_frames(out_dir, [o.recon()[0, 0].numpy() for o in outs],
                                          H, W, "sample")
    write_manifest(out_dir, payload)
    print(f"wrote {args.steps} interpolated frames to {out_dir}")


def cmd_sample_scenes(args) -> None:
    model = load_model(args.checkpoint)
    H, W = model.cfg.image_height, model.cfg.image_width
    gen = torch.Generator().manual_seed(args.seed or 0)
    out_dir = Path(args.out)
    listing = []
    for i in range(args.num):
        _, out, x = sample_scene(model.decoder, args.views, gen)
        frames = [np.clip(v, 0, 1) for v in out.recon()[0].numpy()]
        listing.append(write_frames(out_dir, frames, H, W, f"scene{i}"))
    write_manifest(out_dir, {"command": "sample-scenes", "scenes": listing})
    print(f"wrote {args.num} sampled scene(s) to {out_dir}")


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config with [model] and [train] tables")
    common.add_argument("--seed", type=int, default=None, help="random seed for the command")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    parser = _Parser(prog="ocloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", parents=[common], help="render a synthetic multi-view dataset")
    p.add_argument("--out", required=True, metavar="DIR", help="output dataset directory")
    p.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p.add_argument("--min-objects", type=int, default=2, help="fewest objects per scene")
    p.add_argument("--max-objects", type=int, default=4, help="most objects per scene")
    p.add_argument("--min-views", type=int, default=4, help="fewest views per scene")
    p.add_argument("--max-views", type=int, default=4, help="most views per scene")
    p.add_argument("--no-shadows", action="store_true", help="render without shadows")
    p.set_defaults(func=cmd_generate_data, seed=0)

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    p.add_argument("--out", required=True, metavar="DIR", help="run directory (checkpoint, log)")
    p.add_argument("--resume", metavar="PATH", help="continue from this checkpoint")
    p.add_argument("--quiet", action="store_true", help="do not echo log records")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="trained checkpoint")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    p.add_argument("--mode", choices=["ocloc", "heuristic-count"], default="ocloc",
                   help="object count from presence variables or from used slots")
    p.add_argument("--runs", type=int, default=3, help="seeded evaluation runs")
    p.add_argument("--out", metavar="PATH", help="also write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decompose", parents=[common], help="write per-slot decomposition images")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="trained checkpoint")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    p.add_argument("--scenes", default="0", help="comma-separated scene indices")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("interpolate-viewpoints", parents=[common],
                       help="interpolate (and sample) viewpoint latents of one scene")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="trained checkpoint")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    p.add_argument("--scene", type=int, default=0, help="scene index (needs >= 2 views)")
    p.add_argument("--steps", type=int, default=8, help="interpolation frames")
    p.add_argument("--sample", type=int, default=0, help="also draw this many prior viewpoints")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("sample-scenes", parents=[common], help="ancestral samples from the prior")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="trained checkpoint")
    p.add_argument("--num", type=int, default=4, help="number of scenes")
    p.add_argument("--views", type=int, default=4, help="views per scene")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.set_defaults(func=cmd_sample_scenes)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        args.func(args)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"ocloc: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonFiniteLossError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"ocloc: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
