"""Batch alignment between image and text features.

Targets are soft distributions built from pairwise mask overlap (Dice), so
two samples with similar foregrounds attract rather than repel. Predicted
distributions come from cosine similarity between pooled per-level image
vectors and the projected global text vector. The loss is the bidirectional
cross-entropy between the two, averaged over the enabled pyramid levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import AblationFlags, ConfigError, ModelConfig
from .encoders import FeaturePyramid, TextFeatures

DICE_EPS = 1e-6
NORM_EPS = 1e-12

GLOBAL_LEVEL = "G"
LEVEL_STRIDES = {"8": 8, "16": 16, "32": 32}


def mask_dice(a: np.ndarray, b: np.ndarray) -> float:
    """Smoothed Dice overlap of two binary masks; both-empty pairs score 1."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    inter = np.logical_and(a, b).sum()
    return float((2.0 * inter + DICE_EPS) / (a.sum() + b.sum() + DICE_EPS))


@dataclass
class AlignmentTargets:
    """Soft target distributions from pairwise mask Dice."""

    raw: torch.Tensor  # B x B symmetric Dice matrix
    i2t: torch.Tensor  # row-stochastic (softmax over text index)
    t2i: torch.Tensor  # column-stochastic (softmax over image index)


@dataclass
class SimilarityMatrix:
    """Predicted distributions from cosine similarity."""

    raw_cos: torch.Tensor
    i2t: torch.Tensor
    t2i: torch.Tensor


@torch.no_grad()
def build_targets(masks: torch.Tensor, temp: float) -> AlignmentTargets:
    """Pairwise mask Dice normalized per row (image-to-text) and per column
    (text-to-image). Targets are supervision constants: no gradient."""
    if temp <= 0:
        raise ValueError("temperature must be > 0")
    b = masks.shape[0]
    flat = masks.reshape(b, -1).to(torch.float32)
    inter = flat @ flat.T
    areas = flat.sum(dim=1)
    raw = (2.0 * inter + DICE_EPS) / (areas[:, None] + areas[None, :] + DICE_EPS)
    return AlignmentTargets(
        raw=raw,
        i2t=torch.softmax(raw / temp, dim=1),
        t2i=torch.softmax(raw / temp, dim=0),
    )


def one_hot_targets(batch_size: int, dtype=torch.float32, device=None) -> AlignmentTargets:
    """Identity targets: each image matches only its own text (hard pairing)."""
    eye = torch.eye(batch_size, dtype=dtype, device=device)
    return AlignmentTargets(raw=eye, i2t=eye, t2i=eye)


def pool_level(feature_map: torch.Tensor) -> torch.Tensor:
    """Spatial average over the last two dims."""
    return feature_map.mean(dim=(-2, -1))


def level_similarity(img_vecs: torch.Tensor, txt_vecs: torch.Tensor, temp: float) -> SimilarityMatrix:
    """Cosine similarity of every (image, text) pair, softmaxed per row and
    per column with the given temperature."""
    if temp <= 0:
        raise ValueError("temperature must be > 0")
    img_n = img_vecs / img_vecs.norm(dim=1, keepdim=True).clamp_min(NORM_EPS)
    txt_n = txt_vecs / txt_vecs.norm(dim=1, keepdim=True).clamp_min(NORM_EPS)
    raw = img_n @ txt_n.T
    return SimilarityMatrix(
        raw_cos=raw,
        i2t=torch.softmax(raw / temp, dim=1),
        t2i=torch.softmax(raw / temp, dim=0),
    )


def soft_contrastive_loss(similarity: SimilarityMatrix, targets: AlignmentTargets) -> torch.Tensor:
    """Bidirectional soft cross-entropy, averaged over the two directions."""
    b = similarity.i2t.shape[0]
    if targets.i2t.shape[0] != b:
        raise ValueError("similarity and target batch sizes differ")
    loss_i2t = -(targets.i2t * torch.log(similarity.i2t)).sum() / b
    loss_t2i = -(targets.t2i * torch.log(similarity.t2i)).sum() / b
    return (loss_i2t + loss_t2i) / 2


class AlignmentHead(nn.Module):
    """Per-level text projections plus the multi-level loss.

    Text is projected into each level's image channel width; the global level
    uses the identity when the pooled image dim equals the text dim.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.projections = nn.ModuleDict(
            {name: nn.Linear(config.text_dim, config.width_at(stride)) for name, stride in LEVEL_STRIDES.items()}
        )
        self.global_proj = (
            nn.Identity() if config.global_dim == config.text_dim else nn.Linear(config.text_dim, config.global_dim)
        )
        self.logit_temp = config.logit_temp
        self.target_temp = config.target_temp

    def level_vectors(self, level: str, pyramid: FeaturePyramid, text: TextFeatures) -> tuple[torch.Tensor, torch.Tensor]:
        if level == GLOBAL_LEVEL:
            return pyramid.global_vec, self.global_proj(text.global_vec)
        stride = LEVEL_STRIDES[level]
        return pool_level(pyramid.levels[stride]), self.projections[level](text.global_vec)

    def forward(
        self,
        pyramid: FeaturePyramid,
        text: TextFeatures,
        masks: torch.Tensor,
        levels: tuple[str, ...],
        flags: AblationFlags,
    ) -> tuple[torch.Tensor, dict[str, float]]:
        """Multi-level alignment loss and its per-level breakdown."""
        if not flags.contrastive or not flags.text:
            return torch.zeros((), device=masks.device), {}
        if not flags.mas:
            levels = (GLOBAL_LEVEL,)
        if not levels:
            raise ConfigError("alignment enabled but no levels to align")
        b = masks.shape[0]
        if flags.tsdm:
            targets = build_targets(masks, self.target_temp)
        else:
            targets = one_hot_targets(b, device=masks.device)
        per_level: dict[str, float] = {}
        total = torch.zeros((), device=masks.device)
        for level in levels:
            img_vec, txt_vec = self.level_vectors(level, pyramid, text)
            sim = level_similarity(img_vec, txt_vec, self.logit_temp)
            loss = soft_contrastive_loss(sim, targets)
            per_level[level] = float(loss.detach())
            total = total + loss
        return total / len(levels), per_level
