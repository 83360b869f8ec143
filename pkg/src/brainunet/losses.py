"""Tversky overlap index and loss.

The index generalizes soft Dice: false positives are weighted by alpha and
false negatives by beta, so beta > alpha pushes the optimizer toward recall
on small structures.  With alpha = beta = 0.5 the index reduces exactly to
soft Dice (with twice the smoothing constant).

The math is written against the common array protocol of numpy and torch,
so the same code serves metric evaluation (numpy) and training (torch
tensors with autograd).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TverskyParams:
    """alpha weights false positives, beta false negatives.

    Defaults (0.3, 0.7) are the canonical recall-leaning choice for
    imbalanced tumor classes.  ``smooth`` guards the 0/0 case of classes
    absent from both prediction and truth.  ``include_background`` switches
    class 0 into the mean (off by default: background dominance would swamp
    the imbalance correction the loss exists for).
    """

    alpha: float = 0.3
    beta: float = 0.7
    smooth: float = 1e-6
    include_background: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be >= 0, got ({self.alpha}, {self.beta})")
        if self.alpha + self.beta == 0:
            raise ValueError("alpha + beta must be positive")
        if self.smooth <= 0:
            raise ValueError(f"smooth must be > 0, got {self.smooth}")

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "smooth": self.smooth,
                "include_background": self.include_background}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _class_flatten(arr):
    return arr.reshape(arr.shape[0], -1)


def tversky_index(pred, truth, params: TverskyParams = TverskyParams()):
    """Per-class Tversky index and its mean.

    ``pred`` is a soft class map and ``truth`` a one-hot mask, both shaped
    [K, ...] with matching shapes.  Returns (per_class, mean) where
    per_class covers the classes entering the mean (all K classes when
    include_background is set, classes 1..K-1 otherwise).

    TI_k = (sum y*p + s) / (sum y*p + alpha * sum p*(1-y) + beta * sum y*(1-p) + s)
    """
    if pred.shape != truth.shape:
        raise ValueError(f"pred shape {tuple(pred.shape)} != truth shape {tuple(truth.shape)}")
    p = _class_flatten(pred)
    y = _class_flatten(truth)
    if not params.include_background:
        p = p[1:]
        y = y[1:]
    tp = (p * y).sum(-1)
    fp = (p * (1 - y)).sum(-1)
    fn = ((1 - p) * y).sum(-1)
    ti = (tp + params.smooth) / (tp + params.alpha * fp + params.beta * fn + params.smooth)
    return ti, ti.mean()


def tversky_loss(pred, truth, params: TverskyParams = TverskyParams()):
    """1 - mean Tversky index; 0 for a perfect hard prediction."""
    _, mean_ti = tversky_index(pred, truth, params)
    return 1 - mean_ti
