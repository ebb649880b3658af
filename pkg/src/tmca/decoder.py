"""Language-guided decoder: text-gated attention maps, cross-attention
decoder blocks with deconvolution and encoder skips, segmentation head and
the Dice + cross-entropy segmentation loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import AblationFlags
from .encoders import TextFeatures, _conv_block, _norm

SEG_EPS = 1e-6


class NonFiniteLoss(RuntimeError):
    """A loss term became NaN/Inf; training must abort with diagnostics."""


@dataclass
class AttentionMap:
    """Text-to-region attention: raw scores, the softmax over sub-regions,
    and the mean-1 rescaled map upsampled by 2 for gating decoded features."""

    scores: torch.Tensor  # B x (h*w)
    probs: torch.Tensor   # B x (h*w), sums to 1 per row
    gate: torch.Tensor    # B x 1 x 2h x 2w, spatial mean 1 before upsampling


def attention_map(scores: torch.Tensor, h: int, w: int, temp: float) -> AttentionMap:
    """Normalize region scores with a temperature softmax, rescale to mean 1
    (multiply by h*w) and bilinearly upsample by a factor of 2."""
    if temp <= 0:
        raise ValueError("temperature must be > 0")
    probs = torch.softmax(scores / temp, dim=-1)
    gate = (probs * (h * w)).reshape(-1, 1, h, w)
    gate = F.interpolate(gate, scale_factor=2, mode="bilinear", align_corners=False)
    return AttentionMap(scores=scores, probs=probs, gate=gate)


class LtemGate(nn.Module):
    """Scores each image sub-region against the projected global text vector
    and turns the result into a multiplicative spatial gate."""

    def __init__(self, text_dim: int, feat_dim: int):
        super().__init__()
        self.text_proj = nn.Linear(text_dim, feat_dim)
        # start neutral: zero scores give a uniform, all-ones gate
        nn.init.zeros_(self.text_proj.weight)
        nn.init.zeros_(self.text_proj.bias)

    def forward(self, feats: torch.Tensor, text_global: torch.Tensor, temp: float) -> AttentionMap:
        b, _, h, w = feats.shape
        query = self.text_proj(text_global)  # B x C
        scores = torch.einsum("bchw,bc->bhw", feats, query).reshape(b, h * w)
        return attention_map(scores, h, w, temp)


class DecoderBlock(nn.Module):
    """One language-guided decoder stage: positional self-attention, image-to-
    text cross-attention, x2 deconvolution, encoder skip fusion, then the
    text-derived gate from this block's input features."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        skip_ch: int,
        text_dim: int,
        heads: int,
        base_hw: int,
    ):
        super().__init__()
        self.base_hw = base_hw
        self.pos = nn.Parameter(torch.zeros(1, in_ch, base_hw, base_hw))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.sa_norm = nn.LayerNorm(in_ch)
        self.self_attn = nn.MultiheadAttention(in_ch, heads, batch_first=True)
        self.ca_norm = nn.LayerNorm(in_ch)
        self.text_proj = nn.Linear(text_dim, in_ch)
        self.cross_attn = nn.MultiheadAttention(in_ch, heads, batch_first=True)
        # zero the residual branches so each block starts as identity and the
        # attention pathways grow in during training
        for attn in (self.self_attn, self.cross_attn):
            nn.init.zeros_(attn.out_proj.weight)
            nn.init.zeros_(attn.out_proj.bias)
        self.deconv = nn.Sequential(
            nn.ConvTranspose2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1),
            _norm(out_ch),
            nn.GELU(),
        )
        self.fuse = nn.Sequential(nn.Conv2d(out_ch + skip_ch, out_ch, kernel_size=1), _norm(out_ch), nn.GELU())
        self.ltem = LtemGate(text_dim, in_ch)

    def _positional(self, b: int, h: int, w: int) -> torch.Tensor:
        pos = self.pos
        if (h, w) != (self.base_hw, self.base_hw):
            pos = F.interpolate(pos, size=(h, w), mode="bilinear", align_corners=False)
        return pos.reshape(1, pos.shape[1], h * w).transpose(1, 2).expand(b, -1, -1)

    def forward(
        self,
        feats: torch.Tensor,
        text: TextFeatures | None,
        skip: torch.Tensor,
        attn_temp: float,
        flags: AblationFlags,
    ) -> torch.Tensor:
        b, c, h, w = feats.shape
        if skip.shape[-2:] != (2 * h, 2 * w):
            raise ValueError(f"skip features {tuple(skip.shape[-2:])} do not match upsampled size {(2 * h, 2 * w)}")
        tokens = feats.reshape(b, c, h * w).transpose(1, 2) + self._positional(b, h, w)
        q = self.sa_norm(tokens)
        enhanced = tokens + self.self_attn(q, q, q, need_weights=False)[0]
        if flags.text and text is not None:
            words = self.text_proj(text.words)
            fused = (
                enhanced
                + self.cross_attn(
                    self.ca_norm(enhanced),
                    words,
                    words,
                    key_padding_mask=~text.valid_mask,
                    need_weights=False,
                )[0]
            )
        else:
            fused = enhanced
        spatial = fused.transpose(1, 2).reshape(b, c, h, w)
        up = self.deconv(spatial)
        out = self.fuse(torch.cat([up, skip], dim=1))
        if flags.ltem and flags.text and text is not None:
            out = out * self.ltem(feats, text.global_vec, attn_temp).gate
        return out


class SegHead(nn.Module):
    """Full-resolution refinement: two deconv stages fused with the stride-2
    and stride-1 encoder skips, then a 1x1 projection to one logit."""

    def __init__(self, in_ch: int, skip2_ch: int, skip1_ch: int):
        super().__init__()
        self.up1 = nn.Sequential(
            nn.ConvTranspose2d(in_ch, skip2_ch, kernel_size=4, stride=2, padding=1),
            _norm(skip2_ch),
            nn.GELU(),
        )
        self.fuse1 = _conv_block(2 * skip2_ch, skip2_ch)
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(skip2_ch, skip1_ch, kernel_size=4, stride=2, padding=1),
            _norm(skip1_ch),
            nn.GELU(),
        )
        self.fuse2 = _conv_block(2 * skip1_ch, skip1_ch)
        self.out = nn.Conv2d(skip1_ch, 1, kernel_size=1)
        # bias the initial prediction towards background; foreground is sparse
        nn.init.constant_(self.out.bias, -2.0)

    def forward(self, feats: torch.Tensor, skip2: torch.Tensor, skip1: torch.Tensor) -> torch.Tensor:
        x = self.up1(feats)
        if x.shape[-2:] != skip2.shape[-2:]:
            raise ValueError(f"stride-2 skip {tuple(skip2.shape[-2:])} does not match {tuple(x.shape[-2:])}")
        x = self.fuse1(torch.cat([x, skip2], dim=1))
        x = self.up2(x)
        if x.shape[-2:] != skip1.shape[-2:]:
            raise ValueError(f"stride-1 skip {tuple(skip1.shape[-2:])} does not match {tuple(x.shape[-2:])}")
        x = self.fuse2(torch.cat([x, skip1], dim=1))
        return self.out(x)


def seg_loss(logits: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    """Per-sample Dice loss on sigmoid probabilities plus mean binary
    cross-entropy."""
    if logits.ndim == gt_mask.ndim + 1 and logits.shape[1] == 1:
        logits = logits[:, 0]
    if logits.shape != gt_mask.shape:
        raise ValueError(f"logit shape {tuple(logits.shape)} != mask shape {tuple(gt_mask.shape)}")
    gt = gt_mask.to(logits.dtype)
    probs = torch.sigmoid(logits)
    dims = tuple(range(1, logits.ndim))
    inter = (probs * gt).sum(dim=dims)
    denom = probs.sum(dim=dims) + gt.sum(dim=dims)
    dice_loss = 1.0 - ((2.0 * inter + SEG_EPS) / (denom + SEG_EPS)).mean()
    bce = F.binary_cross_entropy_with_logits(logits, gt, reduction="mean")
    return dice_loss + bce


def total_loss(loss_ca: torch.Tensor, loss_seg: torch.Tensor) -> torch.Tensor:
    """Unweighted sum of the alignment and segmentation losses."""
    for name, term in (("alignment", loss_ca), ("segmentation", loss_seg)):
        if not torch.isfinite(term).all():
            raise NonFiniteLoss(f"{name} loss is not finite: {float(term)}")
    return loss_ca + loss_seg
