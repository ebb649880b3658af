"""The full language-guided segmenter: pyramid image encoder, text encoder,
alignment head, three language-guided decoder stages (strides 32 to 4) and a
full-resolution segmentation head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .alignment import AlignmentHead
from .config import ModelConfig
from .decoder import DecoderBlock, SegHead, seg_loss
from .encoders import FeaturePyramid, ImagePyramidEncoder, TextEncoder, TextFeatures


@dataclass
class ModelOutput:
    logits: torch.Tensor              # B x 1 x H x W
    pyramid: FeaturePyramid
    text: TextFeatures | None


@dataclass
class LossBreakdown:
    total: torch.Tensor
    seg: torch.Tensor
    align: torch.Tensor
    align_per_level: dict[str, float]


class Segmenter(nn.Module):
    """End-to-end model; ablation behavior follows config.ablation."""

    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        config = config.resolved()
        self.config = config
        self.flags = config.ablation
        self.image_encoder = ImagePyramidEncoder(config.in_channels, config.widths, config.global_dim)
        self.text_encoder = TextEncoder(
            vocab_size, config.text_dim, config.text_layers, config.attn_heads, config.max_len
        )
        self.alignment = AlignmentHead(config)
        w1, w2, w4, w8, w16, w32 = config.widths
        base = config.image_size // 32
        self.blocks = nn.ModuleList(
            [
                DecoderBlock(w32, w16, skip_ch=w16, text_dim=config.text_dim, heads=config.attn_heads, base_hw=base),
                DecoderBlock(w16, w8, skip_ch=w8, text_dim=config.text_dim, heads=config.attn_heads, base_hw=base * 2),
                DecoderBlock(w8, w4, skip_ch=w4, text_dim=config.text_dim, heads=config.attn_heads, base_hw=base * 4),
            ]
        )
        self.seg_head = SegHead(w4, skip2_ch=w2, skip1_ch=w1)

    def forward(self, images: torch.Tensor, token_ids: torch.Tensor, valid_mask: torch.Tensor) -> ModelOutput:
        pyramid = self.image_encoder(images)
        text = self.text_encoder(token_ids, valid_mask) if self.flags.text else None
        x = pyramid.levels[32]
        for block, skip_stride in zip(self.blocks, (16, 8, 4)):
            x = block(x, text, pyramid.levels[skip_stride], self.config.attn_temp, self.flags)
        logits = self.seg_head(x, pyramid.levels[2], pyramid.levels[1])
        return ModelOutput(logits=logits, pyramid=pyramid, text=text)

    def losses(self, output: ModelOutput, masks: torch.Tensor) -> LossBreakdown:
        """Segmentation loss plus (when enabled) the multi-level alignment
        loss; the total is their unweighted sum."""
        from .decoder import total_loss

        l_seg = seg_loss(output.logits, masks)
        if self.flags.contrastive and output.text is not None:
            l_ca, per_level = self.alignment(output.pyramid, output.text, masks, self.config.levels, self.flags)
        else:
            l_ca, per_level = torch.zeros((), device=masks.device), {}
        return LossBreakdown(total=total_loss(l_ca, l_seg), seg=l_seg, align=l_ca, align_per_level=per_level)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Named trainable groups, used to verify gradient flow per component."""
        ltem_params = [p for b in self.blocks for p in b.ltem.parameters()]
        ltem_ids = {id(p) for p in ltem_params}
        decoder_params = [
            p
            for m in (*self.blocks, self.seg_head)
            for p in m.parameters()
            if id(p) not in ltem_ids
        ]
        return {
            "image_encoder": list(self.image_encoder.parameters()),
            "text_encoder": list(self.text_encoder.parameters()),
            "alignment_projections": list(self.alignment.parameters()),
            "decoder": decoder_params,
            "ltem_projections": ltem_params,
        }

    def active_groups(self) -> set[str]:
        """Groups expected to accumulate gradient under the current flags."""
        active = {"image_encoder", "decoder"}
        flags = self.flags
        if flags.text:
            active.add("text_encoder")
            if flags.ltem:
                active.add("ltem_projections")
            if flags.contrastive:
                has_params = any(True for _ in self.alignment.parameters())
                strided = any(lv != "G" for lv in self.config.levels)
                if strided or (("G" in self.config.levels) and not isinstance(self.alignment.global_proj, nn.Identity)):
                    if has_params:
                        active.add("alignment_projections")
        return active
