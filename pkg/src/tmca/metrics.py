"""Segmentation metrics (Jaccard, Dice, pixel accuracy) and corpus-level
evaluation with per-image averaging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import DICE_EPS, mask_dice


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    """Smoothed intersection over union of two binary masks."""
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    inter = np.logical_and(p, g).sum()
    union = np.logical_or(p, g).sum()
    return float((inter + DICE_EPS) / (union + DICE_EPS))


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    return mask_dice(pred, gt)


def pixel_accuracy(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return float((pred.astype(bool) == gt.astype(bool)).mean())


@dataclass
class EvalReport:
    """Per-split metrics in percent, averaged over images."""

    split: str
    n_samples: int
    jaccard_pct: float
    dice_pct: float
    accuracy_pct: float
    config_fingerprint: str = ""
    per_sample_dice: list[float] = field(default_factory=list, repr=False)
    per_sample_ids: list[str] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "n_samples": self.n_samples,
            "jaccard_pct": self.jaccard_pct,
            "dice_pct": self.dice_pct,
            "accuracy_pct": self.accuracy_pct,
            "config_fingerprint": self.config_fingerprint,
        }


def summarize(split: str, ids: list[str], preds: list[np.ndarray], gts: list[np.ndarray], fingerprint: str = "") -> EvalReport:
    """Aggregate per-image metrics; asserts the Dice/Jaccard set identity
    J = D / (2 - D) on every image as a self-check."""
    if not preds:
        raise ValueError("cannot evaluate an empty corpus")
    js, ds, accs = [], [], []
    for p, g in zip(preds, gts):
        j, d = jaccard(p, g), dice(p, g)
        if d + DICE_EPS < j:
            raise AssertionError(f"Dice {d} < Jaccard {j}")
        if abs(j - d / (2.0 - d)) > 1e-6:
            raise AssertionError(f"metric identity violated: J={j}, D={d}")
        js.append(j)
        ds.append(d)
        accs.append(pixel_accuracy(p, g))
    return EvalReport(
        split=split,
        n_samples=len(preds),
        jaccard_pct=100.0 * float(np.mean(js)),
        dice_pct=100.0 * float(np.mean(ds)),
        accuracy_pct=100.0 * float(np.mean(accs)),
        config_fingerprint=fingerprint,
        per_sample_dice=[float(d) for d in ds],
        per_sample_ids=list(ids),
    )
