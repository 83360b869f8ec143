"""Evaluation metrics: Dice, IoU, 95th-percentile Hausdorff, lesion-wise Dice.

Empty-mask conventions follow the public BraTS challenge scoring: Dice/IoU
are 1 when both masks are empty and 0 when exactly one is; HD95 is 0 for
two empty masks and the fixed sentinel 373.13 when exactly one is empty.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .io import LabelMask

HD95_EMPTY_SENTINEL = 373.13

# Composite evaluation regions over the label convention 1=NETC, 2=SNFH, 3=ET
REGION_LABELS = {"ET": (3,), "TC": (1, 3), "WT": (1, 2, 3)}

# 26-connectivity: used for lesion components and their 1-voxel matching halo
_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)

# boundary extraction uses face (6-) connectivity
_STRUCT_6 = ndimage.generate_binary_structure(3, 1)

# above this many candidate pairs, hd95 switches from exact chunked
# broadcasting to the Euclidean distance transform
_EDT_PAIR_THRESHOLD = 40_000_000


def _as_binary(arr):
    data = arr.data if isinstance(arr, LabelMask) else np.asarray(arr)
    return data.astype(bool) if data.dtype != bool else data


def _check_same_shape(pred, truth):
    if pred.shape != truth.shape:
        raise ValueError(f"pred shape {pred.shape} != truth shape {truth.shape}")


def dice_score(pred, truth) -> float:
    """2|P∩T| / (|P|+|T|) on binarized inputs; both empty -> 1, one empty -> 0."""
    p = _as_binary(pred)
    t = _as_binary(truth)
    _check_same_shape(p, t)
    p_sum = int(p.sum())
    t_sum = int(t.sum())
    if p_sum == 0 and t_sum == 0:
        return 1.0
    if p_sum == 0 or t_sum == 0:
        return 0.0
    inter = int(np.logical_and(p, t).sum())
    return 2.0 * inter / (p_sum + t_sum)


def iou_score(pred, truth) -> float:
    """|P∩T| / |P∪T| with the same empty conventions as dice_score."""
    p = _as_binary(pred)
    t = _as_binary(truth)
    _check_same_shape(p, t)
    union = int(np.logical_or(p, t).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(p, t).sum())
    return inter / union


def boundary_voxels(mask) -> np.ndarray:
    """Mask voxels with at least one face neighbor outside the mask.

    Voxels on the array border count as boundary (outside the array is
    treated as background).
    """
    m = _as_binary(mask)
    if not m.any():
        return np.zeros_like(m)
    eroded = ndimage.binary_erosion(m, structure=_STRUCT_6, border_value=0)
    return m & ~eroded


def _directed_nearest_exact(src, dst, spacing):
    # exact nearest distances by chunked broadcasting; squared terms are
    # accumulated per axis in index order so results are reproducible
    src_s = src.astype(np.float64) * spacing
    dst_s = dst.astype(np.float64) * spacing
    chunk = max(1, int(48_000_000 / (8 * 3 * len(dst_s))))
    mins = np.empty(len(src_s), dtype=np.float64)
    for i in range(0, len(src_s), chunk):
        diff = src_s[i:i + chunk, None, :] - dst_s[None, :, :]
        mins[i:i + chunk] = np.sqrt((diff ** 2).sum(-1).min(axis=1))
    return mins


def _directed_nearest_edt(src_mask, dst_mask, spacing):
    dist_to_dst = ndimage.distance_transform_edt(~dst_mask, sampling=spacing)
    return dist_to_dst[src_mask]


def hd95(pred, truth, spacing=(1.0, 1.0, 1.0)) -> float:
    """95th percentile of symmetric boundary-to-boundary nearest distances.

    Distances are Euclidean in mm (voxel offsets scaled by ``spacing``);
    the two directed nearest-distance sets are pooled and the percentile
    taken with numpy's default linear interpolation rule.  Both masks empty
    -> 0; exactly one empty -> HD95_EMPTY_SENTINEL.
    """
    p = _as_binary(pred)
    t = _as_binary(truth)
    _check_same_shape(p, t)
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (3,) or np.any(spacing <= 0):
        raise ValueError(f"spacing must be three positive values, got {spacing}")
    p_any = bool(p.any())
    t_any = bool(t.any())
    if not p_any and not t_any:
        return 0.0
    if p_any != t_any:
        return HD95_EMPTY_SENTINEL

    pb = boundary_voxels(p)
    tb = boundary_voxels(t)
    pc = np.argwhere(pb)
    tc = np.argwhere(tb)
    if len(pc) * len(tc) <= _EDT_PAIR_THRESHOLD:
        d_pt = _directed_nearest_exact(pc, tc, spacing)
        d_tp = _directed_nearest_exact(tc, pc, spacing)
    else:
        d_pt = _directed_nearest_edt(pb, tb, spacing)
        d_tp = _directed_nearest_edt(tb, pb, spacing)
    pooled = np.concatenate([d_pt, d_tp])
    return float(np.percentile(pooled, 95))


def compose_regions(mask) -> dict:
    """Binary maps for the composite regions ET={3}, TC={1,3}, WT={1,2,3}."""
    data = mask.data if isinstance(mask, LabelMask) else np.asarray(mask)
    return {name: np.isin(data, labels) for name, labels in REGION_LABELS.items()}


def lesion_wise_dice(pred, truth, spacing=None) -> float:
    """Mean per-lesion Dice, penalizing missed and spurious lesions.

    Ground-truth lesions are 26-connected components; each is dilated by one
    voxel to build its matching halo.  Predicted components overlapping a
    halo are matched to that lesion, and the lesion scores the Dice between
    the union of its matched components and the (undilated) lesion.
    Unmatched ground-truth lesions score 0; every predicted component
    matched to no lesion contributes an extra 0.  The result is the mean
    over all scored entities.  ``spacing`` is accepted for interface
    symmetry; matching is purely voxel-based.
    """
    p = _as_binary(pred)
    t = _as_binary(truth)
    _check_same_shape(p, t)
    gt_labels, n_gt = ndimage.label(t, structure=_STRUCT_26)
    pred_labels, n_pred = ndimage.label(p, structure=_STRUCT_26)
    if n_gt == 0 and n_pred == 0:
        return 1.0

    scores = []
    matched_pred = set()
    for lesion_id in range(1, n_gt + 1):
        lesion = gt_labels == lesion_id
        halo = ndimage.binary_dilation(lesion, structure=_STRUCT_26)
        overlapping = set(np.unique(pred_labels[halo])) - {0}
        if overlapping:
            union = np.isin(pred_labels, sorted(overlapping))
            scores.append(dice_score(union, lesion))
            matched_pred.update(overlapping)
        else:
            scores.append(0.0)
    false_components = n_pred - len(matched_pred)
    scores.extend([0.0] * false_components)
    return float(np.mean(scores))


@dataclass
class MetricsReport:
    """Per-case results: per-label metrics plus composite-region summaries."""

    case_id: str
    dice: dict = field(default_factory=dict)          # label -> Dice
    iou: dict = field(default_factory=dict)           # label -> IoU
    hausdorff95: dict = field(default_factory=dict)   # label -> HD95 (mm)
    region_dice: dict = field(default_factory=dict)   # region -> Dice
    region_hd95: dict = field(default_factory=dict)   # region -> HD95 (mm)
    lesion_dice: dict = field(default_factory=dict)   # region -> lesion-wise Dice

    _LABELS = (1, 2, 3)
    _REGIONS = ("ET", "TC", "WT")

    @classmethod
    def csv_columns(cls):
        cols = ["case_id"]
        cols += [f"dice_{k}" for k in cls._LABELS]
        cols += [f"iou_{k}" for k in cls._LABELS]
        cols += [f"hd95_{k}" for k in cls._LABELS]
        cols += [f"dice_{r}" for r in cls._REGIONS]
        cols += [f"hd95_{r}" for r in cls._REGIONS]
        cols += [f"lesion_dice_{r}" for r in cls._REGIONS]
        return cols

    def to_row(self):
        row = {"case_id": self.case_id}
        row.update({f"dice_{k}": self.dice[k] for k in self._LABELS})
        row.update({f"iou_{k}": self.iou[k] for k in self._LABELS})
        row.update({f"hd95_{k}": self.hausdorff95[k] for k in self._LABELS})
        row.update({f"dice_{r}": self.region_dice[r] for r in self._REGIONS})
        row.update({f"hd95_{r}": self.region_hd95[r] for r in self._REGIONS})
        row.update({f"lesion_dice_{r}": self.lesion_dice[r] for r in self._REGIONS})
        return row


def evaluate_case(pred, truth, spacing=(1.0, 1.0, 1.0), case_id: str = "") -> MetricsReport:
    """Score a predicted mask against ground truth on every report field."""
    p = pred.data if isinstance(pred, LabelMask) else np.asarray(pred)
    t = truth.data if isinstance(truth, LabelMask) else np.asarray(truth)
    _check_same_shape(p, t)
    report = MetricsReport(case_id=case_id)
    for k in MetricsReport._LABELS:
        pk = p == k
        tk = t == k
        report.dice[k] = dice_score(pk, tk)
        report.iou[k] = iou_score(pk, tk)
        report.hausdorff95[k] = hd95(pk, tk, spacing)
    pred_regions = compose_regions(p)
    truth_regions = compose_regions(t)
    for name in MetricsReport._REGIONS:
        pr, tr = pred_regions[name], truth_regions[name]
        report.region_dice[name] = dice_score(pr, tr)
        report.region_hd95[name] = hd95(pr, tr, spacing)
        report.lesion_dice[name] = lesion_wise_dice(pr, tr)
    return report


def _rows_with_mean(reports):
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to write")
    cols = MetricsReport.csv_columns()
    rows = [r.to_row() for r in reports]
    mean_row = {"case_id": "mean"}
    for col in cols[1:]:
        mean_row[col] = float(np.mean([row[col] for row in rows]))
    return cols, rows + [mean_row]


def reports_to_csv(reports, path) -> None:
    """One row per case plus a final arithmetic-mean row."""
    cols, rows = _rows_with_mean(reports)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def reports_to_json(reports, path) -> None:
    """Same rows as the CSV export, as a structured JSON document."""
    cols, rows = _rows_with_mean(reports)
    payload = {"columns": cols, "rows": rows}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
