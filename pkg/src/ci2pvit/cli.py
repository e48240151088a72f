"""Command-line entry point: ``ci2p <subcommand> ...``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import codec as codec_mod
from . import flops
from .errors import CI2PError, ConfigError, ContractError, DataError, DimensionError, NonFiniteError
from .harness import checkpoint, config, data, train
from .vit import VARIANTS, ModelDesc, build_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--sizes expects comma-separated integers, got {text!r}") from exc


def _split_dir(root: Path, split: str) -> Path:
    """``root/split`` when it holds a manifest, else ``root`` itself."""
    sub = Path(root) / split
    return sub if (sub / "manifest.csv").is_file() else Path(root)


def _load_codec(path) -> codec_mod.CodecModel:
    state = checkpoint.load_checkpoint(path)
    try:
        n = state["encoder.conv0.weight"].shape[0]
        m = state["encoder.conv3.weight"].shape[0]
    except KeyError as exc:
        raise DataError(f"{path}: not a codec checkpoint (missing {exc})") from exc
    model = codec_mod.CodecModel(n, m)
    model.store.load_state(state.snapshot())
    return model


def _load_run(run_dir: Path):
    run_dir = Path(run_dir)
    desc = ModelDesc.from_mapping(config.read_config(run_dir / "model.cfg")).validate()
    state = checkpoint.load_checkpoint(run_dir / "model.ckpt").snapshot()
    codec = None
    if desc.variant != "vit_b16":
        codec = codec_mod.CodecModel(desc.codec_hidden, desc.codec_latent)
    model, store = build_model(desc, codec)
    store.load_state(state)
    return model


# -- subcommands ------------------------------------------------------------

def cmd_gen_data(args) -> int:
    seed = config.resolve_seed(args.seed)
    splits = data.gen_synthetic(args.classes, args.per_class, args.size, seed)
    for ds in splits:
        data.save_dataset(ds, Path(args.out) / ds.split)
    print(f"wrote {len(splits.train)} train / {len(splits.val)} val images to {args.out}")
    return EXIT_OK


def cmd_train_codec(args) -> int:
    values = config.read_config(args.config) if args.config else {}
    cfg = config.train_config(values, lr=args.lr, seed=args.seed, lam=args.lam, batch_size=args.batch_size)
    ds = data.load_dataset(_split_dir(Path(args.data), "train"))
    model = codec_mod.CodecModel(args.N, args.M, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = codec_mod.train_codec(model, ds.images, args.steps, cfg.lam, cfg.lr, cfg.seed,
                                    batch_size=cfg.batch_size)
    with open(out / "codec_metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["step", "d_mse", "r_bpp", "lambda", "total"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(history)
    checkpoint.save_checkpoint(model.store, out / "codec.ckpt")
    if args.plot and history:
        from .plotting import codec_curves
        codec_curves(history, out / "codec_curves.png")
    psnr = codec_mod.mean_psnr(model, ds.images[:16])
    print(f"codec N={args.N} M={args.M}: {args.steps} steps, eval PSNR {psnr:.2f} dB -> {out / 'codec.ckpt'}")
    return EXIT_OK


def _desc_from_args(args, values: dict) -> ModelDesc:
    merged = dict(values)
    for key in ("variant", "image_size", "depth", "dim", "heads", "mlp_hidden", "num_classes",
                "codec_hidden", "codec_latent", "ds_early_dim", "ds_split", "ds_early_heads",
                "ds_early_mlp"):
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    if args.no_pos_embed:
        merged["use_pos_embed"] = False
    return ModelDesc.from_mapping(merged)


def cmd_train(args) -> int:
    values = config.read_config(args.config) if args.config else {}
    cfg = config.train_config(values, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                              seed=args.seed, flip_prob=args.flip_prob,
                              cosine=True if args.cosine else None)
    root = Path(args.data)
    splits = data.Splits(data.load_dataset(_split_dir(root, "train"), "train"),
                         data.load_dataset(_split_dir(root, "val"), "val"))
    classes = max(splits.train.class_count, splits.val.class_count)
    values.setdefault("num_classes", str(classes))
    values.setdefault("image_size", str(splits.train.image_size[0]))
    desc = _desc_from_args(args, values)
    codec = None
    if desc.variant != "vit_b16":
        if args.codec:
            codec = _load_codec(args.codec)
            values_codec = {"codec_hidden": codec.N, "codec_latent": codec.M}
            desc = ModelDesc.from_mapping({**desc.__dict__, **values_codec})
        elif args.random_codec:
            codec = train.random_frozen_codec(desc, cfg.seed)
        else:
            raise ConfigError(f"{desc.variant} needs --codec CKPT or --random-codec")
    desc.validate()
    result = train.train_classifier(desc, codec, splits, cfg, out_dir=args.out)
    if args.plot and result.history:
        from .plotting import training_curves
        training_curves(result.history, Path(args.out) / "training_curves.png")
    if result.history:
        tr, va = result.final("train"), result.final("val")
        print(f"epoch {tr['epoch']}: train loss {tr['loss']:.4f} acc {tr['accuracy']:.4f}, "
              f"val acc {va['accuracy']:.4f}; encoder frozen: {result.encoder_frozen}")
    else:
        print("epochs=0: nothing trained")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_run(Path(args.run))
    ds = data.load_dataset(Path(args.data))
    acc = train.evaluate(model, ds)
    print(f"top1 {acc:.4f} on {len(ds)} images")
    return EXIT_OK


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    sizes = _sizes(args.sizes)
    variants = list(VARIANTS) if args.variant == "all" else [args.variant]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant '{v}'")
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if args.variant == "all":
        text = flops.reduction_table(sizes, args.format, args.num_classes)
    else:
        reports = [flops.model_flops(ModelDesc(variant=variants[0], num_classes=args.num_classes), s)
                   for s in sizes]
        if args.format == "csv":
            text = flops.breakdown_csv(reports)
        else:
            text = "".join(f"{r.variant} @ {r.image_size}^2: {r.total_flops / flops.GIGA:.3f} GFLOPs, "
                           f"{r.total_params / 1e6:.2f} M params\n" for r in reports)
    sys.stdout.write(text)
    if out is not None:
        reports = [flops.model_flops(ModelDesc(variant=v, num_classes=args.num_classes), s)
                   for v in variants for s in sizes]
        (out / "flops_breakdown.csv").write_text(flops.breakdown_csv(reports))
        if args.variant == "all":
            (out / "flops_table.csv").write_text(flops.reduction_table(sizes, "csv", args.num_classes))
            if args.plot:
                from .plotting import flops_bar_chart
                flops_bar_chart(flops.reduction_rows(sizes, args.num_classes), out / "flops.png")
    if args.verbose:
        print(f"analyzed in {time.perf_counter() - t0:.3f} s", file=sys.stderr)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    model = _load_codec(args.codec)
    img = data.read_ppm(Path(args.image))
    from .core.tensor import Tensor
    x = Tensor(img)
    x_hat, bpp = codec_mod.reconstruct(model, x)
    psnr = codec_mod.psnr(img, x_hat.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    data.write_ppm(out / f"{stem}_side_by_side.ppm", np.concatenate([img, x_hat.data], axis=2))
    with open(out / f"{stem}_metrics.csv", "w") as fh:
        fh.write("psnr_db,bpp\n")
        fh.write(f"{psnr!r},{bpp!r}\n")
    print(f"PSNR {psnr:.2f} dB at {bpp:.4f} bpp")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradsuite import run_suite
    cases = run_suite(config.resolve_seed(args.seed))
    failed = 0
    for c in cases:
        print(f"{'ok  ' if c.ok else 'FAIL'} {c.name:42s} {c.error:.3e}")
        failed += not c.ok
    print(f"{len(cases) - failed}/{len(cases)} within tolerance")
    return EXIT_NUMERIC if failed else EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ci2p", description="CI2P-ViT training and analysis tools")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic polygon dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("train-codec", help="train the compression autoencoder")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--N", type=int, default=32)
    c.add_argument("--M", type=int, default=48)
    c.add_argument("--steps", type=int, default=300)
    c.add_argument("--lr", type=float, default=1e-3)
    c.add_argument("--lam", type=float)
    c.add_argument("--batch-size", type=int, default=8)
    c.add_argument("--seed", type=int)
    c.add_argument("--config")
    c.add_argument("--plot", action="store_true")
    c.set_defaults(func=cmd_train_codec)

    t = sub.add_parser("train", help="train a classifier")
    t.add_argument("--data", required=True, help="directory with train/ and val/ manifests")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="key=value file (model and training keys)")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--codec", help="codec checkpoint from train-codec")
    t.add_argument("--random-codec", action="store_true", help="untrained frozen encoder (ablation)")
    for key in ("image_size", "depth", "dim", "heads", "mlp_hidden", "num_classes", "codec_hidden",
                "codec_latent", "ds_early_dim", "ds_split", "ds_early_heads", "ds_early_mlp"):
        t.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    t.add_argument("--no-pos-embed", action="store_true")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--flip-prob", type=float)
    t.add_argument("--cosine", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--plot", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a trained run")
    e.add_argument("--run", required=True, help="output directory of `train`")
    e.add_argument("--data", required=True, help="dataset directory with manifest.csv")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="analytical FLOPs and parameter counts")
    a.add_argument("--variant", default="all")
    a.add_argument("--sizes", default="256,384,512")
    a.add_argument("--format", choices=("table", "csv"), default="table")
    a.add_argument("--num-classes", type=int, default=1000)
    a.add_argument("--out", help="directory for CSV (and --plot figure) output")
    a.add_argument("--plot", action="store_true")
    a.add_argument("--verbose", action="store_true")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reconstruct", help="codec round trip of one PPM image")
    r.add_argument("--codec", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    k = sub.add_parser("grad-check", help="finite-difference gradient suite")
    k.add_argument("--seed", type=int)
    k.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CI2PError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
