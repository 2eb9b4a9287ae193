"""Command-line entry point.

Commands: train-static, edit, render, eval, gen-scene. Exit codes: 0 on
success, 1 for usage errors, 2 for runtime/backend failures. The service
endpoint can also come from the DUALFIELD_ENDPOINT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .backends import BackendError, make_embedder
from .field import load_checkpoint, save_checkpoint
from .idu import RoundError, run_edit
from .images import write_imgf, write_png
from .metrics import CaptionPair, evaluate_edit, psnr
from .renderer import RenderOptions, render_image
from .scene import DatasetError, generate_synthetic_scene, load_dataset, save_dataset
from .trainer import TrainLogger, train_static

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualfield", description=__doc__)
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, help="global RNG seed")
    parser.add_argument("--paper-scale", action="store_true",
                        help="use full-scale training defaults")
    parser.add_argument("--deterministic", action="store_true",
                        help="force sequential reductions (always on in this build)")
    parser.add_argument("--print-config", action="store_true",
                        help="print the merged config and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train-static", help="fit the static field")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--iters", type=int, help="training iterations")
    p.add_argument("--log", help="CSV training log path")

    p = sub.add_parser("edit", help="run the iterative dataset-update loop")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="static checkpoint to start from")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--prompt", required=True)
    p.add_argument("--iters", type=int, help="total editing iterations")
    p.add_argument("--backend", help="editor backend (synthetic-oracle, synthetic-sticky, http)")
    p.add_argument("--embedder", help="embedding backend (toy, http)")
    p.add_argument("--endpoint", help="model service URL for http backends")
    p.add_argument("--tau", type=float, help="sticky editor threshold")
    p.add_argument("--no-sa", action="store_true", help="disable the annealed retreat")
    p.add_argument("--no-cci", action="store_true", help="disable consistency weighting")

    p = sub.add_parser("render", help="render dataset poses from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory providing poses")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--samples", type=int)
    p.add_argument("--imgf", action="store_true", help="also write lossless f32 dumps")

    p = sub.add_parser("eval", help="compute the metric report for an edit")
    p.add_argument("--original", required=True, help="directory of original PNGs")
    p.add_argument("--edited", required=True, help="directory of edited PNGs")
    p.add_argument("--caption-original", required=True)
    p.add_argument("--caption-edited", required=True)
    p.add_argument("--out", help="JSON report path (default: stdout)")
    p.add_argument("--csv", help="optional per-view CSV path")
    p.add_argument("--embedder", help="embedding backend")
    p.add_argument("--endpoint")

    p = sub.add_parser("gen-scene", help="generate a synthetic ground-truth dataset")
    p.add_argument("--recipe", default="spheres")
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--out", required=True)
    return parser


def _load_images(directory: str) -> list[np.ndarray]:
    from .images import read_png

    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise DatasetError(f"no PNG images in {directory}")
    return [read_png(p) for p in paths]


def _endpoint(args, cfg) -> str | None:
    return (getattr(args, "endpoint", None) or os.environ.get("DUALFIELD_ENDPOINT")
            or cfg["backend"]["endpoint"] or None)


def _run(args) -> int:
    overrides: dict = {}
    if args.seed is not None:
        overrides.setdefault("trainer", {})["seed"] = args.seed
    cfg = config_mod.load_config(args.config, overrides, paper_scale=args.paper_scale)

    if args.print_config:
        sys.stdout.write(config_mod.dump_config(cfg))
        return EXIT_OK
    if args.command is None:
        build_parser().print_help()
        return EXIT_USAGE

    if args.command == "gen-scene":
        _, dataset = generate_synthetic_scene(args.recipe, args.views,
                                              (args.res, args.res),
                                              seed=cfg["trainer"]["seed"])
        save_dataset(dataset, args.out)
        print(f"wrote {len(dataset)} views to {args.out}")
        return EXIT_OK

    if args.command == "train-static":
        dataset = load_dataset(args.data)
        train_cfg = config_mod.make_train_config(cfg, iterations=args.iters)
        logger = TrainLogger(args.log)
        model = train_static(dataset, train_cfg, logger)
        save_checkpoint(model, args.out)
        opts = RenderOptions(n_samples=cfg["renderer"]["n_samples"],
                             background=np.asarray(cfg["renderer"]["background"]))
        values = [psnr(render_image(model, v.pose, opts), v.original)
                  for v in dataset.views]
        print(f"checkpoint: {args.out}")
        print(f"reconstruction PSNR: {np.mean(values):.2f} dB over {len(values)} views")
        return EXIT_OK

    if args.command == "edit":
        dataset = load_dataset(args.data)
        dataset.prompt = args.prompt
        if args.backend:
            cfg["backend"]["editor"] = args.backend
        if args.embedder:
            cfg["backend"]["embedder"] = args.embedder
        cfg["backend"]["endpoint"] = _endpoint(args, cfg) or ""
        if args.tau is not None:
            cfg["idu"]["sticky_tau"] = args.tau
        if args.no_sa:
            cfg["idu"]["sa_enabled"] = False
        if args.no_cci:
            cfg["idu"]["cci_enabled"] = False
        idu_cfg = config_mod.make_idu_config(cfg, prompt=args.prompt, iterations=args.iters)
        model = load_checkpoint(args.ckpt)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        logger = TrainLogger(out_dir / "train_log.csv")
        model, dataset, rows = run_edit(model, dataset, idu_cfg, out_dir, logger=logger)
        print(f"finished {len(rows)} rounds; checkpoint in {out_dir}")
        return EXIT_OK

    if args.command == "render":
        model = load_checkpoint(args.ckpt)
        dataset = load_dataset(args.data)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        opts = RenderOptions(
            n_samples=args.samples or cfg["renderer"]["n_samples"],
            gamma=args.gamma,
            background=np.asarray(cfg["renderer"]["background"], dtype=np.float64))
        for i, view in enumerate(dataset.views):
            image = render_image(model, view.pose, opts)
            write_png(out_dir / f"render_{i:04d}.png", image)
            if args.imgf:
                write_imgf(out_dir / f"render_{i:04d}.imgf", image)
        print(f"wrote {len(dataset)} renders to {out_dir}")
        return EXIT_OK

    if args.command == "eval":
        originals = _load_images(args.original)
        edits = _load_images(args.edited)
        embedder = make_embedder(args.embedder or cfg["backend"]["embedder"],
                                 _endpoint(args, cfg))
        captions = CaptionPair(args.caption_original, args.caption_edited)
        report = evaluate_edit(originals, edits, captions, embedder)
        payload = json.dumps(report.to_dict(), indent=2)
        if args.out:
            Path(args.out).write_text(payload + "\n")
        else:
            print(payload)
        if args.csv:
            import csv as csv_mod

            with open(args.csv, "w", newline="") as f:
                writer = csv_mod.DictWriter(f, fieldnames=["view", "psnr", "ssim", "c_t2i"])
                writer.writeheader()
                writer.writerows(report.per_view)
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (DatasetError, config_mod.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (BackendError, RoundError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
