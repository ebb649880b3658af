"""Image pyramid encoder, text encoder, and the whitespace/punctuation
tokenizer with its vocabulary.

The image encoder is a U-Net style convolutional chain producing feature maps
at every stride from 1 to 32 plus a pooled global vector; strides 8/16/32 feed
the alignment levels, the finer strides serve only as decoder skips. The text
encoder is a small transformer whose per-word readout averages the hidden
states of the last 3 layers; the global text vector is the masked mean over
valid tokens.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, ModelConfig

PAD_ID = 0
UNK_ID = 1
_TOKEN_RE = re.compile(r"[a-z0-9]+")


class Vocabulary:
    """Token to id map with reserved PAD=0 and UNK=1."""

    def __init__(self, token_to_id: dict[str, int]):
        if token_to_id.get("<pad>") != PAD_ID or token_to_id.get("<unk>") != UNK_ID:
            raise ValueError("vocabulary must reserve <pad>=0 and <unk>=1")
        ids = sorted(token_to_id.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        self.token_to_id = dict(token_to_id)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    @classmethod
    def build(cls, texts: list[str]) -> "Vocabulary":
        """Build from training-split texts only; tokens sorted for stability."""
        seen = set()
        for text in texts:
            seen.update(split_words(text))
        mapping = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        for i, tok in enumerate(sorted(seen)):
            mapping[tok] = 2 + i
        return cls(mapping)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.token_to_id, indent=0, sort_keys=True))

    @classmethod
    def from_json(cls, path: str | Path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text()))


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary, max_len: int = 32) -> tuple[torch.Tensor, torch.Tensor]:
    """Lowercase, split on whitespace/punctuation, map through the vocab,
    pad or truncate to max_len. Returns (ids, valid_mask)."""
    words = split_words(text)[:max_len]
    ids = torch.full((max_len,), PAD_ID, dtype=torch.long)
    valid = torch.zeros(max_len, dtype=torch.bool)
    for i, w in enumerate(words):
        ids[i] = vocab.id_of(w)
        valid[i] = True
    return ids, valid


@dataclass
class FeaturePyramid:
    """Per-stride feature maps plus the pooled global image vector."""

    levels: dict[int, torch.Tensor]  # stride -> B x C_s x (H/s) x (W/s)
    global_vec: torch.Tensor         # B x C_g


@dataclass
class TextFeatures:
    """Per-word features (padded rows zeroed) plus the masked-mean global."""

    words: torch.Tensor       # B x K x D
    valid_mask: torch.Tensor  # B x K bool
    global_vec: torch.Tensor  # B x D


def _norm(ch: int) -> nn.GroupNorm:
    groups = 8
    while ch % groups != 0:
        groups //= 2
    return nn.GroupNorm(groups, ch)


def _conv_block(in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2),
        _norm(out_ch),
        nn.GELU(),
    )


class ImagePyramidEncoder(nn.Module):
    """Six-stage conv chain: full-resolution stem then five stride-2 stages,
    yielding feature maps at strides 1, 2, 4, 8, 16 and 32."""

    STRIDES = (1, 2, 4, 8, 16, 32)

    def __init__(self, in_channels: int, widths: tuple[int, ...], global_dim: int):
        super().__init__()
        if len(widths) != len(self.STRIDES):
            raise ConfigError(f"expected {len(self.STRIDES)} widths, got {len(widths)}")
        self.stem = nn.Sequential(_conv_block(in_channels, widths[0]), _conv_block(widths[0], widths[0]))
        self.stages = nn.ModuleList(
            nn.Sequential(_conv_block(widths[i - 1], widths[i], stride=2), _conv_block(widths[i], widths[i]))
            for i in range(1, len(widths))
        )
        self.global_proj = nn.Linear(widths[-1], global_dim)

    def forward(self, images: torch.Tensor) -> FeaturePyramid:
        _, _, h, w = images.shape
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"input size {h}x{w} not divisible by 32")
        levels = {}
        x = self.stem(images)
        levels[1] = x
        for stride, stage in zip(self.STRIDES[1:], self.stages):
            x = stage(x)
            levels[stride] = x
        pooled = levels[32].mean(dim=(2, 3))
        return FeaturePyramid(levels=levels, global_vec=self.global_proj(pooled))


class TextEncoder(nn.Module):
    """Small transformer over token embeddings with learned positions.

    The word readout is the elementwise mean of the last 3 layers' hidden
    states, so at least 3 layers are required.
    """

    READOUT_LAYERS = 3

    def __init__(self, vocab_size: int, dim: int, n_layers: int, heads: int, max_len: int):
        super().__init__()
        if n_layers < self.READOUT_LAYERS:
            raise ConfigError(f"text encoder needs >= {self.READOUT_LAYERS} layers, got {n_layers}")
        self.embed = nn.Embedding(vocab_size, dim, padding_idx=PAD_ID)
        self.pos = nn.Parameter(torch.zeros(1, max_len, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=dim,
                nhead=heads,
                dim_feedforward=2 * dim,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
            )
            for _ in range(n_layers)
        )

    def forward(self, token_ids: torch.Tensor, valid_mask: torch.Tensor) -> TextFeatures:
        if not valid_mask.any(dim=1).all():
            raise ValueError("text encoder got an all-padding token sequence")
        k = token_ids.shape[1]
        h = self.embed(token_ids) + self.pos[:, :k]
        pad_mask = ~valid_mask
        states = []
        for layer in self.layers:
            h = layer(h, src_key_padding_mask=pad_mask)
            states.append(h)
        words = torch.stack(states[-self.READOUT_LAYERS :]).mean(dim=0)
        words = words * valid_mask.unsqueeze(-1)
        counts = valid_mask.sum(dim=1, keepdim=True).clamp_min(1)
        global_vec = words.sum(dim=1) / counts
        return TextFeatures(words=words, valid_mask=valid_mask, global_vec=global_vec)


def build_encoders(config: ModelConfig, vocab_size: int) -> tuple[ImagePyramidEncoder, TextEncoder]:
    image_enc = ImagePyramidEncoder(config.in_channels, config.widths, config.global_dim)
    text_enc = TextEncoder(vocab_size, config.text_dim, config.text_layers, config.attn_heads, config.max_len)
    return image_enc, text_enc
