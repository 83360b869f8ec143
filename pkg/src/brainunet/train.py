"""Training engine: two-stage regimes, k-fold cross-validation, epoch logs.

The loop is deliberately deterministic: a fixed seed pins weight init, case
order, and every augmentation draw, so identical (config, seed, dataset)
runs produce identical checkpoints on a single worker.  Parameter updates
go through the functional Adam in :mod:`brainunet.optim`; exactly one writer
ever touches the model weights.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, apply_pipeline
from .checkpoint import save_checkpoint, transfer_load
from .io import LabelMask, MultiModalVolume, load_case, read_manifest
from .losses import TverskyParams, tversky_loss
from .metrics import dice_score, iou_score
from .model import ModelConfig, build_model
from .optim import adam_step, init_adam_state
from .phantom import generate_phantom
from .preprocess import apply_crop, compute_crop, normalize, percentile_clip

# stage regimes: pretraining runs hotter and shorter than fine-tuning
STAGE_DEFAULTS = {
    "pretrain": {"learning_rate": 1e-3, "epochs": 30},
    "finetune": {"learning_rate": 1e-4, "epochs": 50},
}

# parameter-name prefixes excluded from updates when the encoder is frozen
ENCODER_PREFIXES = ("encoder_blocks.", "downsamplers.")


@dataclass
class TrainConfig:
    stage: str = "finetune"
    learning_rate: float = None
    epochs: int = None
    batch_size: int = 1
    grad_accum: int = 2
    tversky: TverskyParams = field(default_factory=TverskyParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_enabled: bool = True
    clip_percentiles: tuple = (0.5, 99.5)
    normalize_method: str = "minmax"
    crop_dims: tuple = (128, 128, 128)
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    num_folds: int = 5
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise ValueError(f"stage must be one of {sorted(STAGE_DEFAULTS)}, "
                             f"got {self.stage!r}")
        if self.learning_rate is None:
            self.learning_rate = STAGE_DEFAULTS[self.stage]["learning_rate"]
        if self.epochs is None:
            self.epochs = STAGE_DEFAULTS[self.stage]["epochs"]
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        self.crop_dims = tuple(int(d) for d in self.crop_dims)
        factor = 2 ** self.model.depth
        if any(d % factor for d in self.crop_dims):
            raise ValueError(
                f"crop_dims {self.crop_dims} must be divisible by 2**depth = {factor}"
            )

    def to_dict(self):
        return {
            "stage": self.stage, "learning_rate": self.learning_rate,
            "epochs": self.epochs, "batch_size": self.batch_size,
            "grad_accum": self.grad_accum, "tversky": self.tversky.to_dict(),
            "augment": self.augment.to_dict() if self.augment else None,
            "augment_enabled": self.augment_enabled,
            "clip_percentiles": list(self.clip_percentiles),
            "normalize_method": self.normalize_method,
            "crop_dims": list(self.crop_dims), "model": self.model.to_dict(),
            "seed": self.seed, "num_folds": self.num_folds,
            "freeze_encoder": self.freeze_encoder,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "tversky" in d and isinstance(d["tversky"], dict):
            d["tversky"] = TverskyParams.from_dict(d["tversky"])
        if d.get("augment") is not None and isinstance(d["augment"], dict):
            d["augment"] = AugmentConfig.from_dict(d["augment"])
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        for key in ("clip_percentiles", "crop_dims"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_dice: float
    train_iou: float
    val_loss: float = None
    val_dice: float = None
    val_iou: float = None
    seconds: float = 0.0

    CSV_COLUMNS = ("epoch", "train_loss", "train_dice", "train_iou",
                   "val_loss", "val_dice", "val_iou", "seconds")

    def to_row(self):
        return {col: getattr(self, col) for col in self.CSV_COLUMNS}


def logs_to_csv(logs, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EpochLog.CSV_COLUMNS)
        writer.writeheader()
        for log in logs:
            writer.writerow({k: ("" if v is None else v) for k, v in log.to_row().items()})


@dataclass
class TrainingCase:
    """One in-memory training example: raw stacked image plus label mask."""

    case_id: str
    image: np.ndarray   # [3, D, H, W]
    mask: np.ndarray    # [D, H, W] integer labels
    split: str = None
    fold: int = None


def phantom_dataset(num_cases: int, dims=(32, 32, 32), seed: int = 0,
                    profile: str = "standard"):
    """Deterministic list of phantom TrainingCases (one sub-seed per case)."""
    cases = []
    for i in range(num_cases):
        vol, mask = generate_phantom(seed * 1_000_003 + i, dims, profile=profile)
        cases.append(TrainingCase(
            case_id=f"phantom-{profile}-{seed}-{i:03d}",
            image=vol.data, mask=mask.data))
    return cases


def manifest_dataset(manifest_path):
    """Load every manifest case (with its mask) into TrainingCases."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    cases = []
    for rec in read_manifest(manifest_path):
        if rec.mask is None:
            raise ValueError(f"case {rec.case_id} has no mask; cannot train on it")
        vol, mask = load_case(rec, base)
        cases.append(TrainingCase(case_id=rec.case_id, image=vol.data,
                                  mask=mask.data, split=rec.split, fold=rec.fold))
    return cases


def make_folds(case_ids, num_folds: int = 5, seed: int = 0):
    """Partition ids into ``num_folds`` (train_ids, val_ids) splits.

    Every id lands in exactly one validation fold; the split is a pure
    function of (ids, num_folds, seed).
    """
    ids = list(case_ids)
    if num_folds < 2:
        raise ValueError(f"need at least 2 folds to hold out validation data, "
                         f"got {num_folds}")
    if len(ids) < num_folds:
        raise ValueError(f"cannot split {len(ids)} cases into {num_folds} folds")
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    folds = []
    for chunk in np.array_split(order, num_folds):
        val_set = set(int(j) for j in chunk)
        val = [ids[int(j)] for j in chunk]
        train = [ids[int(j)] for j in order if int(j) not in val_set]
        folds.append((train, val))
    return folds


def preprocess_case(case: TrainingCase, config: TrainConfig):
    """Replay the deterministic chain: clip, normalize, crop to train shape."""
    vol = MultiModalVolume(data=case.image)
    vol = percentile_clip(vol, *config.clip_percentiles)
    vol = normalize(vol, method=config.normalize_method)
    mask = LabelMask(data=case.mask.astype(np.int16))
    spec = compute_crop(mask, config.crop_dims)
    img = apply_crop(vol, spec).data.astype(np.float32)
    msk = apply_crop(mask, spec).data
    return img, msk


@dataclass
class TrainResult:
    model: torch.nn.Module
    logs: list
    best_state: dict
    best_epoch: int
    best_metric: float
    trained_case_ids: set
    run_manifest: dict
    out_dir: Path = None
    transfer_report: object = None

    @property
    def final_state(self):
        return self.model.state_dict()


def _tumor_dice_iou(pred_labels, truth_labels):
    dices, ious = [], []
    for k in (1, 2, 3):
        dices.append(dice_score(pred_labels == k, truth_labels == k))
        ious.append(iou_score(pred_labels == k, truth_labels == k))
    return float(np.mean(dices)), float(np.mean(ious))


def _freeze_encoder_modules(model):
    for name, module in model.named_children():
        if name in ("encoder_blocks", "downsamplers"):
            module.eval()  # also pins batch-norm running stats


def train(config: TrainConfig, train_cases, val_cases=None, initial_state=None,
          out_dir=None, source_checkpoint=None) -> TrainResult:
    """Run the configured epochs of Tversky-loss optimization.

    ``train_cases``/``val_cases`` are sequences of TrainingCase.  Fully
    deterministic given (config, datasets).  When ``out_dir`` is given, the
    best- and final-epoch checkpoints, the epoch CSV log, and the run
    manifest are written there.  Aborts with epoch/batch context if the loss
    ever goes non-finite.
    """
    train_cases = list(train_cases)
    if not train_cases:
        raise ValueError("training dataset is empty")
    val_cases = list(val_cases) if val_cases else []

    torch.manual_seed(config.seed)
    model = build_model(config.model)
    if initial_state is not None:
        model.load_state_dict(initial_state)

    prepped = [(c.case_id,) + preprocess_case(c, config) for c in train_cases]
    prepped_val = [(c.case_id,) + preprocess_case(c, config) for c in val_cases]

    def updatable(name):
        return not (config.freeze_encoder and name.startswith(ENCODER_PREFIXES))

    trainable = {n: p for n, p in model.named_parameters()
                 if p.requires_grad and updatable(n)}
    adam_state = init_adam_state({n: p.detach() for n, p in trainable.items()})

    logs = []
    trained_ids = set()
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_epoch = -1
    best_metric = -np.inf

    for epoch in range(config.epochs):
        tic = time.perf_counter()
        model.train()
        if config.freeze_encoder:
            _freeze_encoder_modules(model)
        order = np.random.default_rng([config.seed, 7919, epoch]).permutation(len(prepped))
        batches = [order[i:i + config.batch_size]
                   for i in range(0, len(order), config.batch_size)]
        groups = [batches[i:i + config.grad_accum]
                  for i in range(0, len(batches), config.grad_accum)]

        losses, dices, ious = [], [], []
        batch_index = 0
        for group in groups:
            model.zero_grad(set_to_none=False)
            for batch in group:
                images, onehots, hards = [], [], []
                for j in batch:
                    case_id, img, msk = prepped[j]
                    trained_ids.add(case_id)
                    if config.augment_enabled and config.augment is not None:
                        rng = np.random.default_rng([config.seed, 104729, epoch, int(j)])
                        img, msk = apply_pipeline(img, msk, config.augment, rng)
                    images.append(img)
                    onehots.append(np.stack([(msk == k) for k in
                                             range(config.model.out_classes)]).astype(np.float32))
                    hards.append(msk)
                x = torch.from_numpy(np.stack(images)).float()
                y = torch.from_numpy(np.stack(onehots)).float()
                probs = model(x)
                loss = torch.stack([
                    tversky_loss(probs[b], y[b], config.tversky)
                    for b in range(probs.shape[0])
                ]).mean()
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite training loss at epoch {epoch}, batch "
                        f"{batch_index} (cases {[prepped[j][0] for j in batch]})"
                    )
                (loss / len(group)).backward()
                losses.append(float(loss.detach()))
                pred_labels = probs.detach().argmax(dim=1).numpy()
                for b in range(pred_labels.shape[0]):
                    d, i = _tumor_dice_iou(pred_labels[b], hards[b])
                    dices.append(d)
                    ious.append(i)
                batch_index += 1
            grads = {n: p.grad.detach().clone() for n, p in trainable.items()}
            params = {n: p.detach().clone() for n, p in trainable.items()}
            new_params, adam_state = adam_step(params, grads, adam_state,
                                               lr=config.learning_rate)
            with torch.no_grad():
                for n, p in trainable.items():
                    p.copy_(new_params[n])

        log = EpochLog(epoch=epoch, train_loss=float(np.mean(losses)),
                       train_dice=float(np.mean(dices)),
                       train_iou=float(np.mean(ious)))
        if prepped_val:
            log.val_loss, log.val_dice, log.val_iou = _validate(model, prepped_val,
                                                                config)
        log.seconds = time.perf_counter() - tic
        logs.append(log)

        metric = log.val_dice if prepped_val else log.train_dice
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    run_manifest = {
        "train_config": config.to_dict(),
        "preprocess": {"clip_percentiles": list(config.clip_percentiles),
                       "normalize_method": config.normalize_method,
                       "crop_dims": list(config.crop_dims)},
        "seed": config.seed,
        "source_checkpoint": source_checkpoint,
        "train_case_ids": sorted(c.case_id for c in train_cases),
        "val_case_ids": sorted(c.case_id for c in val_cases),
        "best_epoch": best_epoch,
        "best_metric": best_metric if np.isfinite(best_metric) else None,
    }

    result = TrainResult(model=model, logs=logs, best_state=best_state,
                         best_epoch=best_epoch, best_metric=best_metric,
                         trained_case_ids=trained_ids, run_manifest=run_manifest)
    if out_dir is not None:
        result.out_dir = Path(out_dir)
        result.out_dir.mkdir(parents=True, exist_ok=True)
        last = logs[-1] if logs else None
        save_checkpoint(model, result.out_dir / "checkpoint_final", config.model,
                        stage=config.stage, epoch=config.epochs - 1,
                        metrics=(last.to_row() if last else {}), extra=run_manifest)
        save_checkpoint(best_state, result.out_dir / "checkpoint_best", config.model,
                        stage=config.stage, epoch=best_epoch,
                        metrics={"best_metric": run_manifest["best_metric"]},
                        extra=run_manifest)
        logs_to_csv(logs, result.out_dir / "epoch_log.csv")
        (result.out_dir / "run_manifest.json").write_text(
            json.dumps(run_manifest, indent=2, sort_keys=True) + "\n")
    return result


def _validate(model, prepped_val, config):
    model.eval()
    losses, dices, ious = [], [], []
    with torch.no_grad():
        for case_id, img, msk in prepped_val:
            x = torch.from_numpy(img).float().unsqueeze(0)
            onehot = np.stack([(msk == k) for k in
                               range(config.model.out_classes)]).astype(np.float32)
            probs = model(x)[0]
            losses.append(float(tversky_loss(probs, torch.from_numpy(onehot),
                                             config.tversky)))
            d, i = _tumor_dice_iou(probs.argmax(dim=0).numpy(), msk)
            dices.append(d)
            ious.append(i)
    model.train()
    return float(np.mean(losses)), float(np.mean(dices)), float(np.mean(ious))


@dataclass
class CrossValResult:
    folds: list            # (train_ids, val_ids) per fold
    results: list          # TrainResult per fold
    mean_logs: list        # per-epoch arithmetic mean across folds

    @property
    def fold_logs(self):
        return [r.logs for r in self.results]


def cross_validate(config: TrainConfig, cases, out_dir=None) -> CrossValResult:
    """Train one model per fold from identical initial conditions.

    Emits per-fold logs plus their per-epoch arithmetic mean.  Validation
    leakage is asserted away: the ids whose gradients were applied must be
    disjoint from the fold's validation ids.
    """
    cases = list(cases)
    folds = make_folds([c.case_id for c in cases], config.num_folds, config.seed)
    by_id = {c.case_id: c for c in cases}
    results = []
    for i, (train_ids, val_ids) in enumerate(folds):
        fold_dir = Path(out_dir) / f"fold_{i}" if out_dir is not None else None
        result = train(config, [by_id[c] for c in train_ids],
                       [by_id[c] for c in val_ids], out_dir=fold_dir)
        leaked = result.trained_case_ids & set(val_ids)
        if leaked:
            raise RuntimeError(f"validation leakage in fold {i}: {sorted(leaked)}")
        results.append(result)

    mean_logs = []
    for epoch in range(config.epochs):
        per_fold = [r.logs[epoch] for r in results]
        mean_logs.append(EpochLog(
            epoch=epoch,
            train_loss=float(np.mean([l.train_loss for l in per_fold])),
            train_dice=float(np.mean([l.train_dice for l in per_fold])),
            train_iou=float(np.mean([l.train_iou for l in per_fold])),
            val_loss=float(np.mean([l.val_loss for l in per_fold])),
            val_dice=float(np.mean([l.val_dice for l in per_fold])),
            val_iou=float(np.mean([l.val_iou for l in per_fold])),
            seconds=float(np.mean([l.seconds for l in per_fold])),
        ))
    if out_dir is not None:
        logs_to_csv(mean_logs, Path(out_dir) / "mean_epoch_log.csv")
    return CrossValResult(folds=folds, results=results, mean_logs=mean_logs)


def finetune(pretrained_path, config: TrainConfig, train_cases, val_cases=None,
             out_dir=None) -> TrainResult:
    """Continue training from a pretrained checkpoint via transfer loading."""
    if config.stage != "finetune":
        config = replace(config, stage="finetune",
                         learning_rate=config.learning_rate, epochs=config.epochs)
    model, report = transfer_load(pretrained_path, config.model, seed=config.seed)
    result = train(config, train_cases, val_cases,
                   initial_state=model.state_dict(), out_dir=out_dir,
                   source_checkpoint=str(pretrained_path))
    result.transfer_report = report
    return result
