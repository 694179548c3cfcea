"""Command-line interface.

Subcommands:

* ``gen-weights``    write deterministic random weights for an architecture
* ``test-image``     run the selective test on one image file
* ``attention-map``  dump per-pixel attention scores and the region mask
* ``simulate``       type-I / power / timing Monte Carlo campaigns

Exit codes: 0 success, 2 usage error, 3 data error, 4 test skipped because
the selected attention region was degenerate (empty or full).

Relative weight paths that do not exist locally are also looked up under
``$ATTNSI_WEIGHTS_DIR``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, imagefile, weights_io
from .engine import Covariance, GridSearchConfig, run_single_test
from .errors import (
    ConfigError,
    CovarianceError,
    DegenerateRegionError,
    WeightFormatError,
)
from .rollout import make_attention_fn, threshold_region, write_scores_csv
from .vit import ARCH_TABLE, ViTConfig, random_init

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_SKIPPED = 4

WEIGHTS_DIR_ENV = "ATTNSI_WEIGHTS_DIR"


def _resolve_weights(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    env = os.environ.get(WEIGHTS_DIR_ENV)
    if env and not p.is_absolute():
        candidate = Path(env) / p
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"weight file not found: {path}")


def _add_arch_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--arch",
        default="base",
        choices=sorted(ARCH_TABLE),
        help="architecture preset: layers/emb/heads = "
        + ", ".join(f"{k} {v[0]}/{v[1]}/{v[2]}" for k, v in ARCH_TABLE.items())
        + " (default: base)",
    )
    parser.add_argument(
        "--num-layers", type=int, help="override the preset layer count"
    )
    parser.add_argument(
        "--emb-dim", type=int, help="override the preset embedding width"
    )
    parser.add_argument(
        "--num-heads", type=int, help="override the preset head count"
    )
    parser.add_argument(
        "--patch-size",
        type=int,
        help="patch size (default: min(2, side/8) from the image side)",
    )


def _build_config(args, image_side: int) -> ViTConfig:
    layers, emb, heads = ARCH_TABLE[args.arch]
    layers = args.num_layers or layers
    emb = args.emb_dim or emb
    heads = args.num_heads or heads
    patch = args.patch_size
    if patch is None:
        from .vit import default_patch_size

        patch = default_patch_size(image_side)
    return ViTConfig(
        image_side=image_side,
        patch_size=patch,
        num_layers=layers,
        emb_dim=emb,
        num_heads=heads,
    )


def _add_grid_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--mode",
        default="adaptive",
        choices=("adaptive", "fixed", "combination"),
        help="truncation-region grid search mode (default: adaptive)",
    )
    parser.add_argument(
        "--eps-min",
        type=float,
        default=1e-4,
        help="minimum grid width (default: 1e-4)",
    )
    parser.add_argument(
        "--eps-max",
        type=float,
        default=0.2,
        help="maximum grid width (default: 0.2)",
    )
    parser.add_argument(
        "--half-width",
        type=float,
        default=None,
        help="scan half-width S (default: 10 + |z_obs|)",
    )
    parser.add_argument(
        "--fixed-eps",
        type=float,
        default=1e-3,
        help="grid width for --mode fixed (default: 1e-3)",
    )


def _grid_from_args(args) -> GridSearchConfig:
    return GridSearchConfig(
        half_width=args.half_width,
        eps_min=args.eps_min,
        eps_max=args.eps_max,
        mode=args.mode,
        fixed_eps=args.fixed_eps,
    )


def _add_covariance_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--covariance",
        default="identity",
        choices=("identity", "power", "scaled"),
        help="noise covariance model (default: identity)",
    )
    parser.add_argument(
        "--rho",
        type=float,
        default=0.5,
        help="correlation decay for --covariance power (default: 0.5)",
    )
    parser.add_argument(
        "--sigma2",
        type=float,
        default=1.0,
        help="variance for --covariance scaled (default: 1.0)",
    )
    parser.add_argument(
        "--variance",
        default="known",
        choices=("known", "estimated"),
        help="'estimated' replaces the covariance with s^2 I using the "
        "sample variance of the input image (default: known)",
    )


def _covariance_from_args(args, image: np.ndarray | None = None) -> Covariance:
    if args.variance == "estimated":
        if image is None:
            raise CovarianceError(
                "--variance estimated requires a concrete image"
            )
        return Covariance.scaled(float(np.var(image, ddof=1)))
    if args.covariance == "power":
        return Covariance.power(args.rho)
    if args.covariance == "scaled":
        return Covariance.scaled(args.sigma2)
    return Covariance.identity()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_weights(args) -> int:
    config = _build_config(args, args.image_side)
    weights = random_init(config, args.seed)
    weights_io.save_weights(weights, args.out)
    print(
        json.dumps(
            {
                "out": str(args.out),
                "arch": args.arch,
                "image_side": args.image_side,
                "patch_size": config.patch_size,
                "num_layers": config.num_layers,
                "emb_dim": config.emb_dim,
                "num_heads": config.num_heads,
                "seed": args.seed,
            }
        )
    )
    return EXIT_OK


def cmd_test_image(args) -> int:
    image = imagefile.read_image(args.image)
    side = math.isqrt(image.size)
    if side * side != image.size:
        print(
            f"error: image has {image.size} pixels, not a perfect square",
            file=sys.stderr,
        )
        return EXIT_DATA
    config = _build_config(args, side)
    weights = weights_io.load_weights(_resolve_weights(args.weights), config)
    covariance = _covariance_from_args(args, image)
    grid = _grid_from_args(args)
    attention_fn = make_attention_fn(config, weights)
    try:
        result = run_single_test(image, covariance, attention_fn, args.tau, grid)
    except DegenerateRegionError as exc:
        print(json.dumps({"status": "skipped", "reason": str(exc)}))
        return EXIT_SKIPPED
    out = {"status": "ok", "n": int(image.size), "tau": args.tau}
    out.update(result.to_dict())
    out["intervals"] = [[iv.lo, iv.hi] for iv in result.region.intervals]
    print(json.dumps(out))
    return EXIT_OK


def cmd_attention_map(args) -> int:
    image = imagefile.read_image(args.image)
    side = math.isqrt(image.size)
    if side * side != image.size:
        print(
            f"error: image has {image.size} pixels, not a perfect square",
            file=sys.stderr,
        )
        return EXIT_DATA
    config = _build_config(args, side)
    weights = weights_io.load_weights(_resolve_weights(args.weights), config)
    from .vit import forward

    scores = make_attention_fn(config, weights)(image)
    region = threshold_region(scores, args.tau)
    write_scores_csv(args.out, scores, region)
    payload = {
        "out": str(args.out),
        "n": int(image.size),
        "tau": args.tau,
        "region_size": region.size,
    }
    if args.logits_out:
        logits = forward(config, weights, image).logits
        Path(args.logits_out).write_text(
            json.dumps(
                {
                    "logits": [float(v) for v in logits],
                    "scores": [float(v) for v in scores],
                    "region": sorted(region.pixels),
                }
            )
        )
        payload["logits_out"] = str(args.logits_out)
    print(json.dumps(payload))
    return EXIT_OK


def cmd_simulate(args) -> int:
    covariance = _covariance_from_args(args)
    grid = _grid_from_args(args)
    common = dict(
        arch=args.arch,
        n=args.image_size,
        covariance=covariance,
        master_seed=args.master_seed,
        workers=args.workers,
        tau=args.tau,
        grid=grid,
        weights_seed=args.weights_seed,
        weights_path=str(_resolve_weights(args.weights)) if args.weights else None,
        patch_size=args.patch_size,
    )
    if args.kind == "type1":
        batch, summary = experiments.run_type1(
            n_images=args.n_images,
            n_trials=args.n_trials,
            alphas=args.alphas,
            permutation_b=args.permutation_b,
            **common,
        )
    elif args.kind == "power":
        if not args.weights:
            print(
                "warning: power with random-init weights is close to the "
                "significance level; pass --weights with trained weights",
                file=sys.stderr,
            )
        batch, summary = experiments.run_power(
            deltas=args.deltas,
            n_images=args.n_images,
            alpha=args.alphas[1] if len(args.alphas) > 1 else args.alphas[0],
            **common,
        )
    else:
        batch, summary = experiments.run_timing(
            modes=tuple(args.modes),
            n_images=args.n_images,
            **common,
        )
    if args.out_csv:
        experiments.write_rows_csv(args.out_csv, batch.rows)
    if args.out_json:
        experiments.write_summary_json(args.out_json, summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnsi",
        description="Selective significance testing of vision-transformer "
        "attention regions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-weights", help="write deterministic random weights")
    _add_arch_args(p)
    p.add_argument("--image-side", type=int, default=16, help="image side length (default: 16)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    p.add_argument("--out", required=True, help="output weight file path")
    p.set_defaults(fn=cmd_gen_weights)

    p = sub.add_parser("test-image", help="selective test for one image file")
    p.add_argument("--weights", required=True, help="weight file path")
    p.add_argument("--image", required=True, help="image file (one float per line)")
    p.add_argument("--tau", type=float, default=0.6, help="attention threshold (default: 0.6)")
    _add_arch_args(p)
    _add_covariance_args(p)
    _add_grid_args(p)
    p.set_defaults(fn=cmd_test_image)

    p = sub.add_parser("attention-map", help="dump attention scores and region mask")
    p.add_argument("--weights", required=True, help="weight file path")
    p.add_argument("--image", required=True, help="image file (one float per line)")
    p.add_argument("--tau", type=float, default=0.6, help="attention threshold (default: 0.6)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument(
        "--logits-out",
        help="also write classifier logits, scores and region as JSON",
    )
    _add_arch_args(p)
    p.set_defaults(fn=cmd_attention_map)

    p = sub.add_parser("simulate", help="Monte Carlo campaigns")
    p.add_argument("kind", choices=("type1", "power", "timing"))
    _add_arch_args(p)
    _add_covariance_args(p)
    _add_grid_args(p)
    p.add_argument("--image-size", type=int, default=256, help="pixel count n (default: 256)")
    p.add_argument("--tau", type=float, default=0.6, help="attention threshold (default: 0.6)")
    p.add_argument("--n-images", type=int, default=100, help="images per trial / per delta (default: 100)")
    p.add_argument("--n-trials", type=int, default=10, help="trials for type1 (default: 10)")
    p.add_argument(
        "--alphas",
        type=float,
        nargs="+",
        default=list(experiments.DEFAULT_ALPHAS),
        help="significance levels (default: 0.01 0.05 0.1)",
    )
    p.add_argument(
        "--deltas",
        type=float,
        nargs="+",
        default=[1.0, 2.0, 3.0, 4.0],
        help="signal magnitudes for power (default: 1 2 3 4)",
    )
    p.add_argument(
        "--modes",
        nargs="+",
        default=["adaptive", "fixed", "combination"],
        help="grid modes for timing (default: adaptive fixed combination)",
    )
    p.add_argument(
        "--permutation-b",
        type=int,
        default=0,
        help="also run the permutation baseline with this many permutations "
        "(paper-style default when enabled: 1000; 0 disables)",
    )
    p.add_argument("--master-seed", type=int, default=0, help="campaign seed (default: 0)")
    p.add_argument("--workers", type=int, default=1, help="process pool size (default: 1)")
    p.add_argument("--weights", help="weight file (default: random init from --weights-seed)")
    p.add_argument("--weights-seed", type=int, default=0, help="random-init seed (default: 0)")
    p.add_argument("--out-csv", help="write one row per test as CSV")
    p.add_argument("--out-json", help="write the summary as JSON")
    p.set_defaults(fn=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (
        imagefile.ImageParseError,
        WeightFormatError,
        ConfigError,
        CovarianceError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
