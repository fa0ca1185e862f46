"""Command-line surface: pre-train, reconstruct, convert, count FLOPs, verify.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. Every run
echoes its fully resolved configuration to stdout, and commands taking an
--out directory write config.json plus their artifacts there. Given the same
--seed, every command is deterministic.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import autograd as ag
from .data import DirectoryDataset, load_ppm, save_ppm, synth_dataset
from .masking import generate_mask, masked_pixel_map, patch_stats, denormalize_patches, zero_out_image
from .model import (
    EncoderConfig,
    SparkConfig,
    SparkModel,
    DenseEncoder,
    encoder_flops_table,
    spark_forward,
    to_dense_encoder,
)
from .training import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    model_checkpoint_arrays,
    model_from_checkpoint,
    save_checkpoint,
    train,
)
from .verify import SUITES, run_suites

VARIANTS = {
    "baseline": {},
    "zero-out": {"masking": "zero_out"},
    "no-hierarchy": {"hierarchy": False},
    "ape": {"ape": True},
    "loss-all": {"loss_on": "all"},
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract says 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="sparsemim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("pretrain", help="masked pre-training run")
    src = tr.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of .ppm training images")
    src.add_argument("--synth", type=int, help="number of synthetic images to train on")
    tr.add_argument("--out", required=True, help="run directory for artifacts")
    tr.add_argument("--config", help="JSON config file; explicit flags override its values")
    for name, typ in [("epochs", int), ("batch", int), ("mask-ratio", float), ("patch", int),
                      ("stages", int), ("seed", int), ("image-size", int), ("dec-width", int),
                      ("blocks", int), ("lr", float), ("steps", int), ("weight-decay", float)]:
        tr.add_argument(f"--{name}", type=typ, default=None)
    tr.add_argument("--widths", default=None, help="comma-separated stage widths, e.g. 16,32,64")
    tr.add_argument("--optimizer", choices=["lamb", "adam"], default=None)
    tr.add_argument("--down-kernel", type=int, choices=[2, 3], default=None)
    tr.add_argument("--variant", choices=sorted(VARIANTS), default=None)

    rc = sub.add_parser("reconstruct", help="reconstruct one image with a checkpoint")
    rc.add_argument("--ckpt", required=True)
    rc.add_argument("--image", required=True, help="input .ppm image")
    rc.add_argument("--out", required=True)
    rc.add_argument("--mask-ratio", type=float, default=None, help="default: the ratio the model trained with")
    rc.add_argument("--seed", type=int, default=0)

    cv = sub.add_parser("convert", help="export the dense encoder from a checkpoint")
    cv.add_argument("--ckpt", required=True)
    cv.add_argument("--out", required=True, help="output checkpoint file")

    fl = sub.add_parser("flops", help="per-layer sparse vs dense MAC table (CSV)")
    fl.add_argument("--image-size", type=int, default=224)
    fl.add_argument("--patch", type=int, default=32)
    fl.add_argument("--mask-ratio", type=float, default=0.6)
    fl.add_argument("--stages", type=int, default=4)
    fl.add_argument("--widths", default=None)
    fl.add_argument("--seed", type=int, default=0)
    fl.add_argument("--out", default=None, help="optional directory for flops.csv")

    vf = sub.add_parser("verify", help="run invariant suites")
    vf.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    return p


def _parse_widths(text, stages):
    widths = tuple(int(t) for t in text.split(","))
    if len(widths) != stages:
        raise UsageError(f"--widths lists {len(widths)} values for {stages} stages")
    return widths


def _echo_config(cfg: dict, out_dir=None):
    text = json.dumps(cfg, sort_keys=True, indent=2)
    print(text)
    if out_dir is not None:
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            f.write(text + "\n")


DEFAULTS = {
    "epochs": 2, "batch": 8, "mask_ratio": 0.6, "patch": 32, "stages": 3,
    "widths": "16,32,64", "seed": 0, "image_size": 64, "dec_width": None,
    "blocks": 1, "lr": None, "steps": None, "optimizer": "lamb",
    "weight_decay": 0.04, "variant": "baseline", "down_kernel": 2,
}


def cmd_pretrain(args) -> int:
    resolved = dict(DEFAULTS)
    if args.config:
        with open(args.config) as f:
            file_cfg = json.load(f)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in --config file: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in DEFAULTS:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val

    widths = _parse_widths(str(resolved["widths"]), resolved["stages"])
    try:
        enc = EncoderConfig(stages=resolved["stages"], widths=widths,
                            blocks_per_stage=resolved["blocks"], down_kernel=resolved["down_kernel"])
        flags = VARIANTS[resolved["variant"]]
        model_cfg = SparkConfig(encoder=enc, image_size=resolved["image_size"],
                                patch_size=resolved["patch"], dec_fea_dim=resolved["dec_width"], **flags)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if not (0.0 <= resolved["mask_ratio"] < 1.0):
        raise UsageError(f"--mask-ratio must be in [0, 1), got {resolved['mask_ratio']}")

    train_cfg = TrainConfig(
        epochs=resolved["epochs"], batch_size=resolved["batch"], lr_peak=resolved["lr"],
        weight_decay=resolved["weight_decay"], optimizer=resolved["optimizer"],
        seed=resolved["seed"], max_steps=resolved["steps"], mask_ratio=resolved["mask_ratio"],
    )

    os.makedirs(args.out, exist_ok=True)
    full = {"command": "pretrain", "data": args.data, "synth": args.synth, "out": args.out,
            **{k: resolved[k] for k in DEFAULTS},
            "model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    _echo_config(full, args.out)

    if args.synth is not None:
        dataset = synth_dataset(args.synth, resolved["image_size"], resolved["seed"])
    else:
        dataset = DirectoryDataset(args.data)

    model = SparkModel(model_cfg, np.random.default_rng(np.random.SeedSequence([resolved["seed"], 1])))
    rows, opt = train(model, dataset, train_cfg, metrics_path=os.path.join(args.out, "metrics.csv"))

    run_rng = np.random.default_rng(np.random.SeedSequence([resolved["seed"], 2]))
    ckpt_cfg = {"kind": "spark", "model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                "step": len(rows), "opt_t": opt.t, "rng_state": run_rng.bit_generator.state}
    save_checkpoint(os.path.join(args.out, "final.ckpt"), model_checkpoint_arrays(model, opt), ckpt_cfg)
    print(f"trained {len(rows)} steps; final loss {rows[-1]['loss']:.6f}; "
          f"artifacts in {args.out}")
    return 0


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    c, h, w = img.shape
    if h < size or w < size:
        raise UsageError(f"image {h}x{w} smaller than the model's {size}x{size} input")
    oy, ox = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(img[:, oy : oy + size, ox : ox + size])


def cmd_reconstruct(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model, _ = model_from_checkpoint(ckpt)
    cfg = model.cfg
    ratio = args.mask_ratio if args.mask_ratio is not None else ckpt.config.get("train", {}).get("mask_ratio", 0.6)
    if not (0.0 <= ratio < 1.0):
        raise UsageError(f"--mask-ratio must be in [0, 1), got {ratio}")

    os.makedirs(args.out, exist_ok=True)
    _echo_config({"command": "reconstruct", "ckpt": args.ckpt, "image": args.image,
                  "out": args.out, "mask_ratio": ratio, "seed": args.seed,
                  "model": cfg.to_dict()}, args.out)

    img = _center_crop(load_ppm(args.image), cfg.image_size)[None]
    grid = cfg.image_size // cfg.patch_size
    mask = generate_mask(grid, grid, ratio, np.random.default_rng(args.seed), patch_size=cfg.patch_size)

    with ag.no_grad():
        recon, _, _ = spark_forward(model, img, mask, mode="eval")
    mean, denom = patch_stats(img, cfg.patch_size)
    pred = np.clip(denormalize_patches(recon.data, mean, denom, cfg.patch_size), 0.0, 1.0)
    mm = masked_pixel_map(mask)
    composite = img[0].copy()
    composite[:, mm] = pred[0][:, mm]

    save_ppm(os.path.join(args.out, "masked_input.ppm"), zero_out_image(img[0][None], mask).data[0])
    save_ppm(os.path.join(args.out, "reconstruction.ppm"), pred[0])
    save_ppm(os.path.join(args.out, "composite.ppm"), composite)
    mse = float(((pred[0][:, mm] - img[0][:, mm]) ** 2).mean())
    print(f"masked-region mse {mse:.6f}; wrote 3 images to {args.out}")
    return 0


def cmd_convert(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model, _ = model_from_checkpoint(ckpt)
    dense = to_dense_encoder(model)
    cfg = {"kind": "dense_encoder", "encoder": model.cfg.to_dict()["encoder"],
           "ape": model.cfg.ape, "image_size": model.cfg.image_size}
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(args.out, dense.state_arrays(), cfg)
    _echo_config({"command": "convert", "ckpt": args.ckpt, "out": args.out, **cfg})
    print(f"wrote dense encoder ({len(dense.state_arrays())} arrays) to {args.out}")
    return 0


def dense_encoder_from_checkpoint(ckpt: Checkpoint) -> DenseEncoder:
    if ckpt.config.get("kind") != "dense_encoder":
        raise CheckpointError(f"not a dense-encoder checkpoint (kind={ckpt.config.get('kind')!r})")
    enc = EncoderConfig(**{**ckpt.config["encoder"], "widths": tuple(ckpt.config["encoder"]["widths"])})
    params = {}
    bn_states = {}
    from .autograd import BatchNormState, DiffTensor

    for name, arr in ckpt.arrays.items():
        if name.endswith(".running_mean"):
            bn_states.setdefault(name[: -len(".running_mean")], BatchNormState(arr.size)).running_mean = arr.copy()
        elif name.endswith(".running_var"):
            bn_states.setdefault(name[: -len(".running_var")], BatchNormState(arr.size)).running_var = arr.copy()
        elif name != "ape":
            params[name] = DiffTensor(arr, requires_grad=True)
    ape = DiffTensor(ckpt.arrays["ape"], requires_grad=True) if "ape" in ckpt.arrays else None
    return DenseEncoder(enc, params, bn_states, ape)


def cmd_flops(args) -> int:
    widths_text = args.widths if args.widths is not None else ",".join(
        str(16 * 2 ** i) for i in range(args.stages))
    widths = _parse_widths(widths_text, args.stages)
    try:
        enc = EncoderConfig(stages=args.stages, widths=widths)
        cfg = SparkConfig(encoder=enc, image_size=args.image_size, patch_size=args.patch)
    except ValueError as e:
        raise UsageError(str(e)) from e
    print(json.dumps({"command": "flops", "image_size": args.image_size, "patch": args.patch,
                      "mask_ratio": args.mask_ratio, "stages": args.stages,
                      "widths": list(widths), "seed": args.seed}, sort_keys=True), file=sys.stderr)
    grid = args.image_size // args.patch
    mask = generate_mask(grid, grid, args.mask_ratio, np.random.default_rng(args.seed), patch_size=args.patch)
    rows = encoder_flops_table(enc, mask)
    lines = ["layer,scale,sparse_macs,dense_macs,ratio"]
    for r in rows:
        lines.append(f"{r['layer']},{r['scale']},{r['sparse_macs']},{r['dense_macs']},{r['ratio']:.6f}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "flops.csv"), "w") as f:
            f.write(text + "\n")
    total_s = sum(r["sparse_macs"] for r in rows)
    total_d = sum(r["dense_macs"] for r in rows)
    print(f"# total,{total_s},{total_d},{total_s / total_d:.6f}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    ok, lines = run_suites(names)
    print("\n".join(lines))
    if not ok:
        print("verification FAILED", file=sys.stderr)
        return 2
    print("all suites passed")
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "reconstruct": cmd_reconstruct,
    "convert": cmd_convert,
    "flops": cmd_flops,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (TrainingDiverged, CheckpointError) as e:
        print(f"sparsemim {args.command}: {e}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, FileNotFoundError) as e:
        print(f"sparsemim {args.command}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"sparsemim {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
