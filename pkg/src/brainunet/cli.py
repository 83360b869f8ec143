"""Command-line surface.

Subcommands: phantom, preprocess, train, finetune, predict, evaluate,
benchmark.  Every command validates its inputs, writes its outputs, and
exits 0 on success or nonzero with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .inference import (
    SlidingWindowSpec,
    benchmark_inference,
    crop_predict,
    replay_preprocessing,
    sliding_window_predict,
)
from .io import (
    CaseRecord,
    ScalarVolume,
    load_case,
    load_mask,
    read_manifest,
    save_volume,
    write_manifest,
)
from .metrics import evaluate_case, reports_to_csv
from .model import ModelConfig, build_model
from .phantom import generate_phantom
from .preprocess import apply_crop, compute_crop, normalize, percentile_clip
from .train import TrainConfig, finetune, manifest_dataset, train


def _parse_dims(text):
    parts = [int(p) for p in str(text).split(",")]
    if len(parts) == 1:
        return (parts[0],) * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 1 or 3 comma-separated dims, got {text!r}")
    return tuple(parts)


def _load_model_from_checkpoint(path):
    state, manifest = load_checkpoint(path)
    config = ModelConfig.from_dict(manifest["model_config"])
    model = build_model(config)
    model.load_state_dict(state)
    model.eval()
    return model, manifest


def _split_cases(cases):
    train_cases = [c for c in cases if c.split in (None, "train")]
    val_cases = [c for c in cases if c.split == "val"]
    return train_cases, val_cases


def _train_config_from_args(args, stage):
    if args.config:
        merged = json.loads(Path(args.config).read_text())
    else:
        merged = TrainConfig(stage=stage).to_dict()
    if getattr(args, "stage", None):
        merged["stage"] = args.stage
    if args.epochs is not None:
        merged["epochs"] = args.epochs
    if args.lr is not None:
        merged["learning_rate"] = args.lr
    if args.seed is not None:
        merged["seed"] = args.seed
    if args.crop is not None:
        merged["crop_dims"] = list(args.crop)
    if args.batch_size is not None:
        merged["batch_size"] = args.batch_size
    if args.base_filters is not None:
        merged.setdefault("model", ModelConfig().to_dict())["base_filters"] = args.base_filters
    if args.depth is not None:
        merged.setdefault("model", ModelConfig().to_dict())["depth"] = args.depth
    if args.no_augment:
        merged["augment_enabled"] = False
    if getattr(args, "freeze_encoder", False):
        merged["freeze_encoder"] = True
    return TrainConfig.from_dict(merged)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_phantom(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(args.count):
        case_id = f"phantom-{args.profile}-{args.seed}-{i:04d}"
        vol, mask = generate_phantom(args.seed * 1_000_003 + i, args.dims,
                                     profile=args.profile)
        case_dir = out / case_id
        case_dir.mkdir(exist_ok=True)
        for c, name in enumerate(("flair", "t1ce", "t2w")):
            save_volume(ScalarVolume(data=vol.data[c], spacing=vol.spacing,
                                     affine=vol.affine), case_dir / f"{name}.nii.gz")
        save_volume(mask, case_dir / "seg.nii.gz")
        records.append(CaseRecord(
            case_id=case_id,
            flair=f"{case_id}/flair.nii.gz", t1ce=f"{case_id}/t1ce.nii.gz",
            t2w=f"{case_id}/t2w.nii.gz", mask=f"{case_id}/seg.nii.gz"))
    write_manifest(records, out / "manifest.json")
    print(f"wrote {args.count} phantom case(s) of dims {args.dims} to {out}")
    return 0


def cmd_preprocess(args):
    records = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    new_records = []
    crop_specs = {}
    for rec in records:
        vol, mask = load_case(rec, base)
        vol = percentile_clip(vol, args.clip_lo, args.clip_hi)
        vol = normalize(vol, method=args.normalize)
        spec = compute_crop(mask if mask is not None else vol, args.crop)
        vol_c = apply_crop(vol, spec)
        case_dir = out / rec.case_id
        case_dir.mkdir(exist_ok=True)
        for c, name in enumerate(("flair", "t1ce", "t2w")):
            save_volume(ScalarVolume(data=vol_c.data[c], spacing=vol.spacing,
                                     affine=vol.affine), case_dir / f"{name}.nii.gz")
        entry = CaseRecord(case_id=rec.case_id,
                           flair=f"{rec.case_id}/flair.nii.gz",
                           t1ce=f"{rec.case_id}/t1ce.nii.gz",
                           t2w=f"{rec.case_id}/t2w.nii.gz",
                           split=rec.split, fold=rec.fold)
        if mask is not None:
            mask_c = apply_crop(mask, spec)
            save_volume(mask_c, case_dir / "seg.nii.gz")
            entry.mask = f"{rec.case_id}/seg.nii.gz"
        new_records.append(entry)
        crop_specs[rec.case_id] = spec.to_dict()
    write_manifest(new_records, out / "manifest.json")
    run_manifest = {
        "preprocess": {"clip_percentiles": [args.clip_lo, args.clip_hi],
                       "normalize_method": args.normalize,
                       "crop_dims": list(args.crop)},
        "crop_specs": crop_specs,
        "source_manifest": str(args.manifest),
    }
    (out / "run_manifest.json").write_text(json.dumps(run_manifest, indent=2,
                                                      sort_keys=True) + "\n")
    print(f"preprocessed {len(records)} case(s) into {out}")
    return 0


def cmd_train(args):
    config = _train_config_from_args(args, stage=args.stage or "pretrain")
    cases = manifest_dataset(args.manifest)
    train_cases, val_cases = _split_cases(cases)
    result = train(config, train_cases, val_cases, out_dir=args.out)
    last = result.logs[-1] if result.logs else None
    summary = (f"train_dice={last.train_dice:.3f}" if last else "no epochs run")
    print(f"trained {config.epochs} epoch(s) on {len(train_cases)} case(s); {summary}; "
          f"checkpoints in {args.out}")
    return 0


def cmd_finetune(args):
    config = _train_config_from_args(args, stage="finetune")
    cases = manifest_dataset(args.manifest)
    train_cases, val_cases = _split_cases(cases)
    result = finetune(args.checkpoint, config, train_cases, val_cases,
                      out_dir=args.out)
    report = result.transfer_report
    print(f"fine-tuned from {args.checkpoint} "
          f"(copied {len(report.copied)}, reinitialized {len(report.reinitialized)}); "
          f"checkpoints in {args.out}")
    return 0


def cmd_predict(args):
    if args.seed is not None:
        torch.manual_seed(args.seed)
    model, manifest = _load_model_from_checkpoint(args.checkpoint)
    model = model.to(torch.device(args.device))
    preprocess_params = manifest.get("extra", {}).get("preprocess", {})
    spec = SlidingWindowSpec(patch=args.patch, overlap=args.overlap,
                             blending=args.blending)
    records = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        vol, _ = load_case(rec, base)
        vol = replay_preprocessing(vol, preprocess_params)
        if args.mode == "sliding":
            mask = sliding_window_predict(model, vol, spec)
        else:
            mask = crop_predict(model, vol, spec.patch)
        save_volume(mask, out / f"{rec.case_id}.nii.gz")
    print(f"predicted {len(records)} case(s) into {out} (mode={args.mode})")
    return 0


def cmd_evaluate(args):
    records = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    pred_dir = Path(args.pred)
    reports = []
    for rec in records:
        if rec.mask is None:
            continue
        truth = load_mask(base / rec.mask)
        pred_path = pred_dir / f"{rec.case_id}.nii.gz"
        if not pred_path.exists():
            raise FileNotFoundError(f"no prediction for case {rec.case_id} at {pred_path}")
        pred = load_mask(pred_path)
        if pred.data.shape != truth.data.shape:
            raise ValueError(f"case {rec.case_id}: prediction dims {pred.data.shape} "
                             f"!= truth dims {truth.data.shape}")
        reports.append(evaluate_case(pred, truth, spacing=truth.spacing,
                                     case_id=rec.case_id))
    if not reports:
        raise ValueError("no cases with ground-truth masks to evaluate")
    reports_to_csv(reports, args.out)
    mean_wt = float(np.mean([r.region_dice["WT"] for r in reports]))
    print(f"evaluated {len(reports)} case(s); mean WT dice {mean_wt:.3f}; "
          f"report at {args.out}")
    return 0


def cmd_benchmark(args):
    model, manifest = _load_model_from_checkpoint(args.checkpoint)
    preprocess_params = manifest.get("extra", {}).get("preprocess", {})
    spec = SlidingWindowSpec(patch=args.patch, overlap=args.overlap,
                             blending=args.blending)
    records = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    pred_out = Path(args.pred_out) if args.pred_out else Path(args.out).parent / "benchmark_predictions"
    table = benchmark_inference(records, base, model, pred_out, spec=spec,
                                devices=tuple(args.device), mode=args.mode,
                                preprocess_params=preprocess_params)
    table.to_csv(args.out)
    meta = {"mode": args.mode, "devices": list(args.device),
            "window": spec.to_dict(), "checkpoint": str(args.checkpoint)}
    Path(str(args.out) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for row in table.to_rows():
        print("  ".join(f"{k}={v}" for k, v in row.items()))
    print(f"timing table at {args.out} (mode={args.mode})")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_window_flags(p):
    p.add_argument("--patch", type=_parse_dims, default=(128, 128, 128),
                   help="sliding-window patch dims (one int or D,H,W)")
    p.add_argument("--overlap", type=float, default=0.5,
                   help="window overlap fraction in [0,1)")
    p.add_argument("--blending", choices=["gaussian", "uniform"], default="gaussian",
                   help="window blending weights")
    p.add_argument("--mode", choices=["sliding", "crop"], default="sliding",
                   help="full-volume strategy: sliding windows or center crop")


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file of training configuration keys")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--crop", type=_parse_dims, default=None,
                   help="training crop dims (one int or D,H,W)")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--base-filters", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="brainunet",
        description="3D residual-attention U-Net toolkit for brain tumor segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic cases with known tumors")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_parse_dims, default=(32, 32, 32))
    p.add_argument("--profile", choices=["standard", "lowfield"], default="standard")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="clip, normalize and crop a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clip-lo", type=float, default=0.5)
    p.add_argument("--clip-hi", type=float, default=99.5)
    p.add_argument("--normalize", choices=["minmax", "zscore"], default="minmax")
    p.add_argument("--crop", type=_parse_dims, default=(128, 128, 128))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train from scratch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", choices=["pretrain", "finetune"], default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training from a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--freeze-encoder", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune, stage=None)

    p = sub.add_parser("predict", help="segment volumes with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--device", default="cpu")
    p.add_argument("--seed", type=int, default=None)
    _add_window_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="time the full per-case inference path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="CSV timing table path")
    p.add_argument("--device", action="append", default=None,
                   help="device label (repeatable); defaults to cpu")
    p.add_argument("--pred-out", default=None,
                   help="where predicted masks are written during timing")
    _add_window_flags(p)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "device", None) is None and args.command == "benchmark":
        args.device = ["cpu"]
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"brainunet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
