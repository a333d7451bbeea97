"""Command-line surface: dataset generation, relighting, training, evaluation.

Exit codes (stable, for scripting):
    0  success
    2  configuration error (bad config file, bad flag values)
    3  I/O error (missing inputs, unwritable outputs)
    4  training diverged (non-finite loss)
    5  checkpoint version mismatch

Every command honors --seed; outputs are byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_CKPT_VERSION = 5


def _load_config(path):
    from . import config

    if path is None:
        return config.resolve()
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    return config.load(path)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_gen_data(args) -> int:
    from . import config
    from .datagen import generate_dataset, load_manifest

    cfg = _load_config(args.config)
    ds_cfg = config.dataset_config(cfg)
    if args.n is not None:
        from dataclasses import replace

        ds_cfg = replace(ds_cfg, n_samples=args.n)
        ds_cfg.validate()
    manifest_path = generate_dataset(ds_cfg, seed=args.seed, out_dir=args.out, jobs=args.jobs)
    manifest = load_manifest(manifest_path)
    print(f"manifest: {manifest_path}")
    print(f"manifest sha256: {_sha256(manifest_path)}")
    counts = manifest.task_counts()
    mix = ", ".join(f"{t}={counts[t]}" for t in sorted(counts))
    print(f"task mix ({manifest.n} samples): {mix}")
    return EXIT_OK


def cmd_relight(args) -> int:
    from . import imgio, radiometry

    imgio.require_files(args.amb, args.light)
    amb = imgio.read_pfm(args.amb).astype(np.float64)
    light = imgio.read_pfm(args.light).astype(np.float64)
    tint = tuple(float(x) for x in args.tint.split(","))
    if len(tint) != 3:
        raise ValueError(f"--tint expects r,g,b, got {args.tint!r}")
    gain = radiometry.illumination_gain(args.stops)
    relit = radiometry.relight(amb, light, alpha=args.alpha, gain=gain, tint=tint)
    if args.debug_linear:
        imgio.write_pfm(args.debug_linear, relit)
    e_max = radiometry.luminance_percentile(
        relit, percentile=args.percentile, n_samples=args.n_samples, seed=args.seed
    )
    imgio.write_png(args.out, radiometry.tone_map(relit, e_max))
    print(f"wrote {args.out} (e_max={e_max:.6g}, gain={gain:.6g})")
    return EXIT_OK


def cmd_train(args) -> int:
    from . import config
    from .flowmatch import TrainConfig, train

    cfg = _load_config(args.config)
    train_cfg = config.train_config(cfg, seed=args.seed)
    if args.steps is not None:
        from dataclasses import replace

        train_cfg = replace(train_cfg, steps=args.steps)
    if not os.path.exists(args.manifest):
        raise FileNotFoundError(f"manifest not found: {args.manifest}")

    from .datagen import load_manifest

    manifest = load_manifest(args.manifest)
    w, h = _manifest_image_size(manifest)
    grid = (h // train_cfg.factor, w // train_cfg.factor)
    result = train(
        args.manifest,
        args.out,
        train_cfg=train_cfg,
        model_cfg=config.model_config(cfg, grid),
        policy=config.pruning_policy(cfg),
        stats=config.tokenizer_stats(cfg),
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    print(f"loss: first={result.first_loss:.6g} final={result.final_loss:.6g}")
    return EXIT_OK


def _manifest_image_size(manifest):
    from . import imgio

    sample = manifest.samples[0]
    img = imgio.read_pfm(os.path.join(manifest.base_dir, sample["files"]["amb_a"]))
    return img.shape[1], img.shape[0]


def cmd_eval(args) -> int:
    from . import config
    from .datagen import load_manifest
    from .flowmatch import load_checkpoint
    from .metrics import run_benchmark

    cfg = _load_config(args.config)
    imgs_missing = [p for p in (args.manifest, args.checkpoint) if not os.path.exists(p)]
    if imgs_missing:
        raise FileNotFoundError("missing input file(s): " + ", ".join(imgs_missing))
    manifest = load_manifest(args.manifest)
    bundle = load_checkpoint(args.checkpoint, use_ema=cfg["eval"]["use_ema"])
    os.makedirs(args.out, exist_ok=True)
    limit = args.limit if args.limit is not None else cfg["eval"]["limit"]
    report = run_benchmark(
        bundle,
        manifest,
        sampler=config.sampler_config(cfg),
        seed=args.seed if args.seed is not None else cfg["eval"]["seed"],
        mode=cfg["eval"]["mode"],
        limit=limit,
        dump_dir=os.path.join(args.out, "pred_png") if cfg["eval"]["dump_png"] else None,
    )
    json_path = os.path.join(args.out, "report.json")
    csv_path = os.path.join(args.out, "report.csv")
    report.write_json(json_path)
    report.write_csv(csv_path)
    print(f"report: {json_path}")
    for row in report.rows:
        print(
            f"  task={row['task']} n={row['n']} psnr={row['psnr_mean']:.2f}"
            f" (copy-input {row['psnr_copy_input_mean']:.2f})"
        )
    return EXIT_OK


def cmd_prune_report(args) -> int:
    from . import config
    from .datagen import load_manifest
    from .tokenizer import reduction_report

    cfg = _load_config(args.config)
    if not os.path.exists(args.manifest):
        raise FileNotFoundError(f"manifest not found: {args.manifest}")
    manifest = load_manifest(args.manifest)
    if args.checkpoint:
        from .flowmatch import load_checkpoint

        policy = load_checkpoint(args.checkpoint).policy
    else:
        policy = config.pruning_policy(cfg)
    w, h = _manifest_image_size(manifest)
    report = reduction_report(policy, manifest, (w, h), cfg["tokenizer"]["factor"])
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"report: {args.out}")
    print(f"mean reduction: {report['mean_reduction']:.2f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lumiflow",
        description="Light-editing pipeline: data generation, relighting, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a paired dataset and write its manifest")
    p.add_argument("--config", help="run config JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel render workers")
    p.add_argument("--n", type=int, help="override dataset.n_samples")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("relight", help="recombine ambient/direct PFM renders with edits")
    p.add_argument("--amb", required=True, help="ambient pass PFM")
    p.add_argument("--light", required=True, help="direct-light pass PFM")
    p.add_argument("--alpha", type=float, default=1.0, help="ambient scale in [0,1]")
    p.add_argument("--stops", type=float, default=0.0, help="exposure stops (gain = 2**stops)")
    p.add_argument("--tint", default="1,1,1", help="linear RGB tint, comma separated")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--seed", type=int, default=0, help="percentile sampling seed")
    p.add_argument("--percentile", type=float, default=99.95)
    p.add_argument("--n-samples", type=int, default=1024)
    p.add_argument("--debug-linear", help="also dump the relit linear image as PFM")
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("train", help="train the toy flow-matching transformer")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    p.add_argument("--seed", type=int, default=None, help="override optimizer.seed")
    p.add_argument("--steps", type=int, default=None, help="override optimizer.steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="benchmark a checkpoint against ground truth")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--seed", type=int, default=None, help="override eval.seed")
    p.add_argument("--limit", type=int, default=None, help="evaluate only the first N samples")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune-report", help="token-reduction accounting for a pruning policy")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", help="take the policy from a trained checkpoint")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_prune_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .config import ConfigError
    from .datagen import DatasetConfigError

    try:
        return args.func(args)
    except (ConfigError, DatasetConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:  # ordered: specific runtime failures below
        from .flowmatch import CheckpointVersionError, TrainingDiverged

        if isinstance(e, TrainingDiverged):
            print(f"error: training diverged: {e}", file=sys.stderr)
            return EXIT_DIVERGED
        if isinstance(e, CheckpointVersionError):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CKPT_VERSION
        raise


if __name__ == "__main__":
    sys.exit(main())
