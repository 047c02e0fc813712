"""Command-line pipeline: phantom | train | evaluate | infer.

Every command validates its configuration before doing work, writes the
fully resolved RunConfig into the run directory, and exits nonzero with
a one-line diagnostic on failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .fusion import FusionConfig, fuse_views, segment_volume
from .models.checkpoint import ArchiveError, load_generator
from .models.gcn import GeneratorSpec
from .models.patchgan import DiscriminatorSpec
from .morphology import STRUCTURING_ELEMENTS
from .phantom import PhantomError, load_manifest, sample_cohort, write_cohort
from .pipeline import RunConfig, evaluate_run, run_training
from .training import VIEW_ORDER, TrainConfig
from .volio import Mask, MvolError, read_mvol, write_mvol

REGIME_FLAGS = {"axial": "axial-only", "three-view": "three-view"}


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _epochs_arg(text: str):
    if text == "all":
        return None
    return [_positive_int(text)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spleenseg",
        description="Phantom generation, adversarial training, and tri-planar "
        "fused spleen segmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    p.add_argument("--n-train", type=_positive_int, required=True)
    p.add_argument("--n-test", type=_positive_int, required=True)
    p.add_argument("--grid", type=_positive_int, default=64)
    p.add_argument("--spacing", type=float, default=4.0, help="voxel spacing in mm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias", type=float, default=0.2, help="bias field strength")
    p.add_argument("--noise", type=float, default=0.05, help="noise sigma")
    p.add_argument("--distractors", type=int, default=3)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train one regime from a cohort manifest")
    p.add_argument("--config", help="run.json to start from; flags override")
    p.add_argument("--manifest", help="cohort manifest.json")
    p.add_argument("--regime", choices=sorted(REGIME_FLAGS))
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--lambda", dest="lambda_gan", type=float,
                   help="adversarial loss weight")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--no-gan", action="store_true",
                   help="plain segmentation baseline (no discriminator)")
    p.add_argument("--seed", type=int)
    p.add_argument("--paper-scale", action="store_true",
                   help="512-wide architecture preset (needs a 512 cohort)")
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained run on the test split")
    p.add_argument("--run", required=True, help="run directory with checkpoints")
    p.add_argument("--manifest", help="cohort manifest.json (default: from run.json)")
    p.add_argument("--epochs", type=_epochs_arg, default=None,
                   help="'all' (default) or a single epoch number")
    p.add_argument("--fuse", dest="fuse", action="store_true", default=True)
    p.add_argument("--no-fuse", dest="fuse", action="store_false",
                   help="skip union/fused methods")
    p.add_argument("--element", choices=STRUCTURING_ELEMENTS)
    p.add_argument("--open-radius", type=int)
    p.add_argument("--close-radius", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="segment one volume with a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--epoch", type=_positive_int, required=True)
    p.add_argument("--input", required=True, help="input volume (.mvol)")
    p.add_argument("--output", required=True, help="output mask (.mvol)")
    p.add_argument("--views", default="axial,coronal,sagittal",
                   help="comma-separated subset of axial,coronal,sagittal")
    p.add_argument("--element", choices=STRUCTURING_ELEMENTS)
    p.add_argument("--open-radius", type=int)
    p.add_argument("--close-radius", type=int)
    p.set_defaults(func=cmd_infer)

    return parser


def cmd_phantom(args) -> int:
    scans, manifest = sample_cohort(
        args.n_train,
        args.n_test,
        seed=args.seed,
        grid_size=args.grid,
        spacing_mm=args.spacing,
        bias_strength=args.bias,
        noise_sigma=args.noise,
        distractor_count=args.distractors,
    )
    path = write_cohort(scans, manifest, args.out)
    print(f"wrote {len(scans)} scans + {path}")
    return 0


def cmd_train(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        missing = [n for n, v in (("--manifest", args.manifest),
                                  ("--regime", args.regime),
                                  ("--out", args.out)) if not v]
        if missing:
            raise ValueError(f"without --config, required: {', '.join(missing)}")
        config = None

    manifest_path = args.manifest or (
        Path(config.data_dir) / "manifest.json" if config else None
    )
    manifest = load_manifest(manifest_path)
    grid = int(manifest["grid_size"])

    if config is None:
        if args.paper_scale:
            gen, disc = GeneratorSpec.paper_scale(), DiscriminatorSpec.paper_scale()
        else:
            gen, disc = GeneratorSpec(input_size=grid), DiscriminatorSpec.desk()
        config = RunConfig(
            regime=REGIME_FLAGS[args.regime],
            data_dir=str(Path(manifest_path).parent),
            run_dir=args.out,
            n_train=int(manifest["n_train"]),
            n_test=int(manifest["n_test"]),
            grid_size=grid,
            cohort_seed=int(manifest["seed"]),
            train=TrainConfig(),
            generator=gen,
            discriminator=disc,
        )

    train_kwargs = config.train.to_dict()
    if args.epochs is not None:
        train_kwargs["epochs"] = args.epochs
    if args.lambda_gan is not None:
        train_kwargs["lambda_gan"] = args.lambda_gan
    if args.lr is not None:
        train_kwargs["lr"] = args.lr
    if args.batch_size is not None:
        train_kwargs["batch_size"] = args.batch_size
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    if args.no_gan:
        train_kwargs["gan_enabled"] = False
    config.train = TrainConfig.from_dict(train_kwargs)
    if args.regime:
        config.regime = REGIME_FLAGS[args.regime]
    if args.out:
        config.run_dir = args.out

    summary = run_training(config, manifest)
    views = ", ".join(summary["views"])
    print(f"trained {config.regime} ({views}) for {config.train.epochs} epochs "
          f"-> {config.run_dir}")
    return 0


def _fusion_override(args, base: FusionConfig) -> FusionConfig:
    d = base.to_dict()
    if args.element is not None:
        d["structuring_element"] = args.element
    if args.open_radius is not None:
        d["open_radius"] = args.open_radius
    if args.close_radius is not None:
        d["close_radius"] = args.close_radius
    return FusionConfig.from_dict(d)


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    config_path = run_dir / "run.json"
    if not config_path.exists():
        raise FileNotFoundError(f"{config_path} not found; is {run_dir} a run dir?")
    config = RunConfig.load(config_path)
    config.run_dir = str(run_dir)
    config.fusion = _fusion_override(args, config.fusion)
    manifest_path = args.manifest or Path(config.data_dir) / "manifest.json"
    manifest = load_manifest(manifest_path)
    result = evaluate_run(config, manifest, epochs=args.epochs,
                          include_fusion=args.fuse)
    lines = []
    for method, agg in result["report"].aggregates.items():
        lines.append(f"{method}: mean {agg['mean_dsc']:.4f} "
                     f"median {agg['median_dsc']:.4f} (n={agg['n']})")
    print(f"evaluated {run_dir} -> {run_dir / 'eval'}")
    for line in lines:
        print("  " + line)
    return 0


def cmd_infer(args) -> int:
    views = [v.strip() for v in args.views.split(",") if v.strip()]
    bad = [v for v in views if v not in VIEW_ORDER]
    if bad or not views:
        raise ValueError(f"views must be a subset of {VIEW_ORDER}, got {args.views!r}")
    run_dir = Path(args.run)
    volume = read_mvol(args.input)
    if isinstance(volume, Mask):
        raise ValueError(f"{args.input} holds a mask, not an image volume")

    fusion = FusionConfig()
    config_path = run_dir / "run.json"
    if config_path.exists():
        fusion = RunConfig.load(config_path).fusion
    fusion = _fusion_override(args, fusion)

    masks = {}
    for view in views:
        gen_dir = run_dir / f"view-{view}" / f"epoch-{args.epoch}" / "generator"
        if not gen_dir.exists():
            raise FileNotFoundError(f"no checkpoint at {gen_dir}")
        model = load_generator(gen_dir)
        masks[view] = segment_volume(volume, model, view)
    result = masks[views[0]] if len(views) == 1 else fuse_views(masks, fusion)
    write_mvol(result, args.output)
    n_fg = int(result.data.sum())
    print(f"wrote {args.output} ({n_fg} foreground voxels from "
          f"{len(views)} view{'s' if len(views) > 1 else ''})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, MvolError, PhantomError,
            ArchiveError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
