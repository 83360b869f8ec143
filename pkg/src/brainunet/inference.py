"""Full-volume prediction and the per-case timing benchmark.

A trained network consumes fixed-size patches, so arbitrary volumes
(e.g. 240x240x155 cases) are covered with overlapping windows whose class
probabilities are blended back together, Gaussian-weighted by default so
window centers dominate over their seams.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .io import LabelMask, MultiModalVolume, load_case, save_volume
from .model import BrainUNet, predict_probabilities
from .preprocess import apply_crop, compute_crop, normalize, percentile_clip, restore_prediction


@dataclass(frozen=True)
class SlidingWindowSpec:
    """Patch geometry and blending for full-volume prediction."""

    patch: tuple = (128, 128, 128)
    overlap: float = 0.5
    blending: str = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(p) for p in self.patch))
        if len(self.patch) != 3 or any(p < 1 for p in self.patch):
            raise ValueError(f"patch must be three positive dims, got {self.patch}")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.blending not in ("gaussian", "uniform"):
            raise ValueError(f"blending must be gaussian or uniform, got {self.blending!r}")

    def to_dict(self):
        return {"patch": list(self.patch), "overlap": self.overlap,
                "blending": self.blending}


def window_starts(length: int, patch: int, stride: int):
    """Start offsets covering [0, length) with patch-sized windows."""
    if patch >= length:
        return [0]
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] != length - patch:
        starts.append(length - patch)
    return starts


def _blend_weights(spec: SlidingWindowSpec) -> np.ndarray:
    if spec.blending == "uniform":
        return np.ones(spec.patch, dtype=np.float64)
    # separable gaussian, sigma = patch/8, peak-normalized with a small
    # floor so corner voxels keep nonzero influence
    axes = []
    for p in spec.patch:
        coords = np.arange(p, dtype=np.float64)
        center = (p - 1) / 2
        sigma = max(p / 8.0, 1.0)
        axes.append(np.exp(-0.5 * ((coords - center) / sigma) ** 2))
    w = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return np.maximum(w / w.max(), 1e-6)


def sliding_window_predict(model: BrainUNet, vol, spec: SlidingWindowSpec = None,
                           return_debug: bool = False):
    """Predict a label mask for a volume of any size.

    The volume is zero-padded up to the patch size if needed, covered with
    overlapping windows, and the per-window class probabilities are
    accumulated under the blending weights.  After weight normalization the
    per-voxel argmax (lowest label index wins ties) gives the mask, cut back
    to the input dims.  A single covering window reduces exactly to one
    forward pass plus argmax.
    """
    spec = spec or SlidingWindowSpec()
    if isinstance(vol, MultiModalVolume):
        data = vol.data
        spacing, affine = vol.spacing, vol.affine
    else:
        data = np.asarray(vol)
        spacing, affine = (1.0, 1.0, 1.0), None
    if data.ndim != 4:
        raise ValueError(f"expected [C, D, H, W], got shape {data.shape}")

    factor = 2 ** model.config.depth
    if any(p % factor for p in spec.patch):
        raise ValueError(f"patch {spec.patch} must be divisible by 2**depth = {factor}")

    spatial = data.shape[1:]
    pad = [(max(0, p - s) // 2, max(0, p - s) - max(0, p - s) // 2)
           for s, p in zip(spatial, spec.patch)]
    padded = np.pad(data, [(0, 0)] + pad, mode="constant") \
        if any(p != (0, 0) for p in pad) else data
    padded_dims = padded.shape[1:]

    strides = [max(1, int(round(p * (1.0 - spec.overlap)))) for p in spec.patch]
    starts = [window_starts(L, p, s) for L, p, s in zip(padded_dims, spec.patch, strides)]

    n_classes = model.config.out_classes
    prob_acc = np.zeros((n_classes,) + tuple(padded_dims), dtype=np.float32)
    weight_acc = np.zeros(padded_dims, dtype=np.float32)
    weights = _blend_weights(spec).astype(np.float32)

    n_windows = 0
    for d0 in starts[0]:
        for h0 in starts[1]:
            for w0 in starts[2]:
                sl = (slice(d0, d0 + spec.patch[0]),
                      slice(h0, h0 + spec.patch[1]),
                      slice(w0, w0 + spec.patch[2]))
                window_probs = predict_probabilities(model, padded[(slice(None),) + sl])
                prob_acc[(slice(None),) + sl] += window_probs * weights
                weight_acc[sl] += weights
                n_windows += 1

    if not np.all(weight_acc > 0):
        raise RuntimeError("window placement bug: some voxels were never covered")
    probs = prob_acc / weight_acc

    unpad = tuple(slice(b, b + s) for (b, _), s in zip(pad, spatial))
    probs = probs[(slice(None),) + unpad]
    labels = np.argmax(probs, axis=0).astype(np.int16)
    mask = LabelMask(data=labels, spacing=spacing, affine=affine)
    if return_debug:
        return mask, {"probabilities": probs, "weight_sum": weight_acc[unpad],
                      "num_windows": n_windows}
    return mask


def crop_predict(model: BrainUNet, vol, crop_dims=(128, 128, 128)):
    """Alternative to sliding windows: center-crop, predict once, restore."""
    if not isinstance(vol, MultiModalVolume):
        vol = MultiModalVolume(data=np.asarray(vol))
    spec = compute_crop(vol, crop_dims)
    cropped = apply_crop(vol, spec)
    probs = predict_probabilities(model, cropped)
    pred = np.argmax(probs, axis=0).astype(np.int16)
    restored = restore_prediction(pred, spec)
    return LabelMask(data=restored, spacing=vol.spacing, affine=vol.affine)


def replay_preprocessing(vol: MultiModalVolume, preprocess_params: dict) -> MultiModalVolume:
    """Apply the clip/normalize chain recorded in a run manifest."""
    lo, hi = preprocess_params.get("clip_percentiles", (0.5, 99.5))
    vol = percentile_clip(vol, lo, hi)
    return normalize(vol, method=preprocess_params.get("normalize_method", "minmax"))


# --------------------------------------------------------------------------
# Timing benchmark
# --------------------------------------------------------------------------

@dataclass
class TimingRow:
    case_id: str
    device: str
    seconds: float

    def __post_init__(self):
        if self.seconds <= 0:
            raise ValueError(f"wall time must be positive, got {self.seconds}")


@dataclass
class TimingTable:
    """Per-case wall times, one column per device, plus an Average row."""

    rows: list = field(default_factory=list)   # TimingRow entries
    devices: tuple = ("cpu",)
    mode: str = "sliding"

    def seconds_for(self, case_id, device):
        for row in self.rows:
            if row.case_id == case_id and row.device == device:
                return row.seconds
        raise KeyError((case_id, device))

    @property
    def case_ids(self):
        seen = []
        for row in self.rows:
            if row.case_id not in seen:
                seen.append(row.case_id)
        return seen

    def mean_seconds(self, device):
        vals = [r.seconds for r in self.rows if r.device == device]
        return float(np.mean(vals))

    def columns(self):
        return ["Case ID"] + [f"{d.upper()} Time (s)" for d in self.devices]

    def to_rows(self):
        out = []
        for case_id in self.case_ids:
            row = {"Case ID": case_id}
            for d in self.devices:
                row[f"{d.upper()} Time (s)"] = round(self.seconds_for(case_id, d), 4)
            out.append(row)
        avg = {"Case ID": "Average"}
        for d in self.devices:
            avg[f"{d.upper()} Time (s)"] = round(self.mean_seconds(d), 4)
        out.append(avg)
        return out

    def to_csv(self, path):
        with open(Path(path), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.columns())
            writer.writeheader()
            for row in self.to_rows():
                writer.writerow(row)


def benchmark_inference(records, base_dir, model: BrainUNet, out_dir, spec=None,
                        devices=("cpu",), mode: str = "sliding",
                        preprocess_params=None) -> TimingTable:
    """Time the full per-case path: load, preprocess, predict, save.

    ``records`` are manifest CaseRecords resolved against ``base_dir``; the
    predicted masks land in ``out_dir`` so the measured span really covers
    deployment's load-to-save round trip.  The table holds one row per case
    and one time column per device, with a final Average row; absolute times
    are reported, never asserted.
    """
    records = list(records)
    if not records:
        raise ValueError("benchmark needs at least one case")
    if mode not in ("sliding", "crop"):
        raise ValueError(f"mode must be sliding or crop, got {mode!r}")
    spec = spec or SlidingWindowSpec()
    preprocess_params = preprocess_params or {}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    table = TimingTable(devices=tuple(devices), mode=mode)
    for device in devices:
        model_dev = model.to(torch.device(device))
        for rec in records:
            tic = time.perf_counter()
            vol, _ = load_case(rec, base_dir)
            vol = replay_preprocessing(vol, preprocess_params)
            if mode == "sliding":
                mask = sliding_window_predict(model_dev, vol, spec)
            else:
                mask = crop_predict(model_dev, vol, spec.patch)
            save_volume(mask, out_dir / f"{rec.case_id}.nii.gz")
            toc = time.perf_counter()
            table.rows.append(TimingRow(case_id=rec.case_id, device=device,
                                        seconds=toc - tic))
    return table
