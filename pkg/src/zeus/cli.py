"""Command-line entry point.

Subcommands: gen-data, train, eval, bench, ablate, gradcheck, export-masks.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import ZeusError, BackendError, TrainingError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeus",
                                     description="Union segmentation with text instructions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic multimodal dataset")
    p.add_argument("--out", default="data")
    p.add_argument("--volumes", type=int, default=60)
    p.add_argument("--modalities", type=int, default=4)
    p.add_argument("--slices", type=int, default=16)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)

    for name in ("train", "eval", "bench", "ablate", "export-masks"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="RunConfig JSON path")
        p.add_argument("--seed", type=int)
        p.add_argument("--fusion", choices=["early", "hybrid", "late"])
        p.add_argument("--backend", choices=["stub", "remote"])
        p.add_argument("--network", choices=["zeus", "baseline"])
        p.add_argument("--data")
        p.add_argument("--epochs", type=int)
        p.add_argument("--runs-dir")
        p.add_argument("--run-name")
        if name in ("eval", "export-masks"):
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", default="test")
        if name == "export-masks":
            p.add_argument("--out", default="masks_out")
        if name == "bench":
            p.add_argument("--out")
        if name == "ablate":
            p.add_argument("--subset", action="append", default=[],
                           help="comma-separated modalities; repeatable")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seeds", type=int, default=10)
    return parser


def _load_config(args):
    from .train import RunConfig
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "fusion", None):
        overrides["fusion"] = args.fusion
    if getattr(args, "backend", None):
        overrides["backend"] = {"kind": args.backend}
    if getattr(args, "network", None):
        overrides["network"] = args.network
    if getattr(args, "data", None):
        overrides["data_dir"] = args.data
    if getattr(args, "epochs", None):
        overrides["epochs"] = args.epochs
    if getattr(args, "runs_dir", None):
        overrides["runs_dir"] = args.runs_dir
    if getattr(args, "run_name", None):
        overrides["run_name"] = args.run_name
    return cfg.replace(**overrides) if overrides else cfg


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0

    try:
        if args.command == "gen-data":
            from .data import generate_dataset
            manifest = generate_dataset(args.out, n_volumes=args.volumes,
                                        n_modalities=args.modalities,
                                        dims=(args.slices, args.size, args.size),
                                        seed=args.seed)
            print(f"wrote {len(manifest['subjects'])} subjects to {args.out}")
            return 0

        if args.command == "gradcheck":
            from .gradcheck import render_table, run_all
            rows = run_all(args.seeds)
            print(render_table(rows))
            return 0 if all(r["passed"] for r in rows) else 1

        cfg = _load_config(args)

        if args.command == "train":
            from .train import train
            result = train(cfg)
            print(f"run dir: {result.run_dir}")
            print(f"epochs: {result.epochs_run} (early stop: {result.stopped_early})")
            print(f"final train loss: {result.final_loss:.6g}")
            return 0

        if args.command == "eval":
            from .train import evaluate
            metrics = evaluate(args.checkpoint, args.split, cfg)
            print(json.dumps(metrics, indent=2))
            return 0

        if args.command == "bench":
            from .fusion import benchmark_csv, render_benchmark_table, run_benchmark
            rows = run_benchmark(cfg)
            print(render_benchmark_table(rows))
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(benchmark_csv(rows))
                print(f"wrote {args.out}")
            return 0

        if args.command == "ablate":
            from .train import ablate_modalities, render_ablation_table
            from .data import DatasetIndex
            subsets = [s.split(",") for s in args.subset]
            if not subsets:
                raise ZeusError("ablate requires at least one --subset")
            rows = ablate_modalities(cfg, subsets)
            print(render_ablation_table(rows, DatasetIndex(cfg.data_dir).modalities))
            return 0

        if args.command == "export-masks":
            from .train import export_masks
            paths = export_masks(args.checkpoint, args.split, cfg, args.out)
            print(f"wrote {len(paths)} masks to {args.out}")
            return 0

        parser.error(f"unknown command {args.command}")
        return 1
    except (BackendError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ZeusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
