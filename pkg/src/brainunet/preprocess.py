"""Deterministic preprocessing: clipping, normalization, cropping, one-hot.

All intensity statistics are computed over nonzero voxels only.  BraTS-style
images are mostly zero background, so including it would pin the low
percentile and the channel minimum to 0 and make both ops vacuous.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .io import LabelMask, MultiModalVolume

DEFAULT_CLIP = (0.5, 99.5)
DEFAULT_CROP_DIMS = (128, 128, 128)

# Percentiles use the lower order statistic (numpy method="lower").  Unlike
# interpolated percentiles, a data-valued rule makes clipping exactly
# idempotent: re-running with the same bounds recomputes the same cut points.
PERCENTILE_METHOD = "lower"


class DegenerateChannelWarning(UserWarning):
    """A channel had no usable intensity spread; it was passed through."""


def percentile_clip(vol: MultiModalVolume, p_lo: float = DEFAULT_CLIP[0],
                    p_hi: float = DEFAULT_CLIP[1]) -> MultiModalVolume:
    """Clamp each channel's nonzero voxels to its (p_lo, p_hi) percentiles.

    Percentiles are computed over nonzero voxels of that channel; zero
    (background) voxels are untouched.  Applying the op twice with the same
    bounds equals applying it once.
    """
    if not (0 <= p_lo < p_hi <= 100):
        raise ValueError(f"need 0 <= p_lo < p_hi <= 100, got ({p_lo}, {p_hi})")
    out = vol.data.copy()
    for c in range(out.shape[0]):
        chan = out[c]
        nz = chan != 0
        if not nz.any():
            warnings.warn(f"channel {c} is all zeros; clipping skipped",
                          DegenerateChannelWarning, stacklevel=2)
            continue
        lo, hi = np.percentile(chan[nz], [p_lo, p_hi], method=PERCENTILE_METHOD)
        chan[nz] = np.clip(chan[nz], lo, hi)
    return MultiModalVolume(data=out, spacing=vol.spacing, affine=vol.affine)


def normalize(vol: MultiModalVolume, method: str = "minmax") -> MultiModalVolume:
    """Harmonize channel intensities; background (zero) voxels stay zero.

    "minmax" maps each channel's nonzero intensities affinely to [0, 1]
    (min -> 0, max -> 1); note the minimum voxels land exactly on 0 and so
    join the background.  "zscore" centers nonzero voxels to zero mean and
    unit variance.  A channel with no spread is mapped to 0 with a warning.
    """
    if method not in ("minmax", "zscore"):
        raise ValueError(f"unknown normalization method {method!r}")
    out = vol.data.astype(np.float32, copy=True)
    for c in range(out.shape[0]):
        chan = out[c]
        nz = chan != 0
        if not nz.any():
            warnings.warn(f"channel {c} is all zeros; normalization skipped",
                          DegenerateChannelWarning, stacklevel=2)
            continue
        vals = chan[nz]
        lo, hi = float(vals.min()), float(vals.max())
        if hi == lo:
            warnings.warn(f"channel {c} has constant nonzero intensity; mapped to 0",
                          DegenerateChannelWarning, stacklevel=2)
            chan[nz] = 0.0
            continue
        if method == "minmax":
            chan[nz] = (vals - lo) / (hi - lo)
        else:
            mu, sd = float(vals.mean()), float(vals.std())
            chan[nz] = (vals - mu) / sd
    return MultiModalVolume(data=out, spacing=vol.spacing, affine=vol.affine)


@dataclass(frozen=True)
class CropSpec:
    """Where to cut a training crop, including any zero-padding applied first.

    ``pad_before``/``pad_after`` describe the symmetric padding that brings a
    too-small source up to the crop size; ``start`` indexes into the padded
    array.  ``source_dims`` are the original (unpadded) dims, kept so a
    prediction can be restored to them.
    """

    start: tuple
    dims: tuple
    pad_before: tuple
    pad_after: tuple
    source_dims: tuple

    def __post_init__(self):
        for name in ("start", "dims", "pad_before", "pad_after", "source_dims"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        padded = tuple(s + b + a for s, b, a in
                       zip(self.source_dims, self.pad_before, self.pad_after))
        if any(s < 0 for s in self.start):
            raise ValueError(f"negative crop start {self.start}")
        if any(st + d > p for st, d, p in zip(self.start, self.dims, padded)):
            raise ValueError(
                f"crop start {self.start} + dims {self.dims} exceeds padded dims {padded}"
            )

    @property
    def padded_dims(self):
        return tuple(s + b + a for s, b, a in
                     zip(self.source_dims, self.pad_before, self.pad_after))

    def to_dict(self):
        return {"start": list(self.start), "dims": list(self.dims),
                "pad_before": list(self.pad_before), "pad_after": list(self.pad_after),
                "source_dims": list(self.source_dims)}

    @classmethod
    def from_dict(cls, d):
        return cls(start=d["start"], dims=d["dims"], pad_before=d["pad_before"],
                   pad_after=d["pad_after"], source_dims=d["source_dims"])


def _spatial_data(obj):
    if isinstance(obj, MultiModalVolume):
        return obj.data, True
    if isinstance(obj, LabelMask):
        return obj.data, False
    arr = np.asarray(obj)
    if arr.ndim == 4:
        return arr, True
    if arr.ndim == 3:
        return arr, False
    raise ValueError(f"expected 3D or 4D data, got shape {arr.shape}")


def compute_crop(mask_or_volume, target_dims=DEFAULT_CROP_DIMS) -> CropSpec:
    """Place a crop of ``target_dims`` centered on the foreground bounding box.

    Foreground means nonzero voxels (tumor labels for a mask, brain for a
    volume; for a multi-channel volume, any channel nonzero).  Axes where the
    source is smaller than the target are zero-padded symmetrically first.
    The start is clamped so the window stays inside the padded source.
    """
    data, is_multichannel = _spatial_data(mask_or_volume)
    spatial = data.shape[1:] if is_multichannel else data.shape
    target_dims = tuple(int(t) for t in target_dims)

    pad_before, pad_after = [], []
    for src, tgt in zip(spatial, target_dims):
        short = max(0, tgt - src)
        pad_before.append(short // 2)
        pad_after.append(short - short // 2)

    fg = np.any(data != 0, axis=0) if is_multichannel else data != 0
    if fg.any():
        idx = np.nonzero(fg)
        centers = [(int(ix.min()) + int(ix.max())) / 2 for ix in idx]
    else:
        centers = [s / 2 for s in spatial]

    start = []
    for c, b, tgt, src, a in zip(centers, pad_before, target_dims, spatial, pad_after):
        padded = src + b + a
        s = int(round(c + b - tgt / 2))
        start.append(min(max(s, 0), padded - tgt))
    return CropSpec(start=start, dims=target_dims, pad_before=pad_before,
                    pad_after=pad_after, source_dims=spatial)


def apply_crop(vol_or_mask, spec: CropSpec):
    """Cut the window described by ``spec`` (zero-padding first if it says so).

    Returns the same container type as the input.  Pure voxel copy, no
    resampling.
    """
    data, is_multichannel = _spatial_data(vol_or_mask)
    spatial = data.shape[1:] if is_multichannel else data.shape
    if tuple(spatial) != spec.source_dims:
        raise ValueError(
            f"crop spec was computed for dims {spec.source_dims}, got {tuple(spatial)}"
        )
    pad = [(b, a) for b, a in zip(spec.pad_before, spec.pad_after)]
    if is_multichannel:
        pad = [(0, 0)] + pad
    if any(p != (0, 0) for p in pad):
        data = np.pad(data, pad, mode="constant")
    window = tuple(slice(s, s + d) for s, d in zip(spec.start, spec.dims))
    if is_multichannel:
        window = (slice(None),) + window
    cropped = data[window].copy()

    if isinstance(vol_or_mask, MultiModalVolume):
        return MultiModalVolume(data=cropped, spacing=vol_or_mask.spacing,
                                affine=vol_or_mask.affine)
    if isinstance(vol_or_mask, LabelMask):
        return LabelMask(data=cropped, spacing=vol_or_mask.spacing,
                         affine=vol_or_mask.affine)
    return cropped


def restore_prediction(pred, spec: CropSpec, original_dims=None):
    """Embed a crop-sized prediction back into the original volume shape.

    Voxels outside the crop window become background (0); padding introduced
    by compute_crop is removed.  Inverse of apply_crop on the crop window.
    """
    if isinstance(pred, LabelMask):
        data = pred.data
        spacing, affine = pred.spacing, pred.affine
    else:
        data = np.asarray(pred)
        spacing, affine = (1.0, 1.0, 1.0), None
    if original_dims is not None and tuple(original_dims) != spec.source_dims:
        raise ValueError(
            f"original dims {tuple(original_dims)} disagree with crop spec "
            f"source dims {spec.source_dims}"
        )
    if data.shape != spec.dims:
        raise ValueError(f"prediction dims {data.shape} != crop dims {spec.dims}")

    padded = np.zeros(spec.padded_dims, dtype=data.dtype)
    window = tuple(slice(s, s + d) for s, d in zip(spec.start, spec.dims))
    padded[window] = data
    unpad = tuple(slice(b, b + s) for b, s in zip(spec.pad_before, spec.source_dims))
    restored = padded[unpad].copy()
    if isinstance(pred, LabelMask):
        return LabelMask(data=restored, spacing=spacing, affine=affine)
    return restored


def one_hot_encode(mask, num_classes: int = 4) -> np.ndarray:
    """Integer mask [D,H,W] -> binary one-hot [K,D,H,W] (float32)."""
    data = mask.data if isinstance(mask, LabelMask) else np.asarray(mask)
    if data.max(initial=0) >= num_classes or data.min(initial=0) < 0:
        raise ValueError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{data.min()}, {data.max()}]"
        )
    onehot = np.zeros((num_classes,) + data.shape, dtype=np.float32)
    for k in range(num_classes):
        onehot[k] = data == k
    return onehot


def one_hot_decode(onehot: np.ndarray) -> np.ndarray:
    """One-hot or soft class map [K,D,H,W] -> integer mask [D,H,W].

    Soft inputs take the per-voxel argmax; ties break to the lowest class
    index.
    """
    onehot = np.asarray(onehot)
    if onehot.ndim != 4:
        raise ValueError(f"expected [K,D,H,W], got shape {onehot.shape}")
    return np.argmax(onehot, axis=0).astype(np.int16)
