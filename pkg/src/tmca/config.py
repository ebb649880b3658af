"""Model/run configuration, ablation switches, and config file handling."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # py<3.11
    import tomli as tomllib

VALID_LEVELS = ("8", "16", "32", "G")
ABLATION_TOKENS = ("tsdm", "ltem", "mas", "ca", "text")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class AblationFlags:
    """Component on/off switches. All on reproduces the full model."""

    tsdm: bool = True
    ltem: bool = True
    mas: bool = True
    contrastive: bool = True
    text: bool = True

    def with_tokens_off(self, tokens: list[str]) -> "AblationFlags":
        """Turn off the components named by CLI tokens (ca == contrastive)."""
        kwargs = dataclasses.asdict(self)
        for tok in tokens:
            tok = tok.strip().lower()
            if tok not in ABLATION_TOKENS:
                raise ConfigError(f"unknown ablation token {tok!r}, expected one of {ABLATION_TOKENS}")
            kwargs["contrastive" if tok == "ca" else tok] = False
        return AblationFlags(**kwargs)


@dataclass(frozen=True)
class ModelConfig:
    """All hyperparameters for the segmenter and its training run.

    Levels are alignment sites: encoder strides "8"/"16"/"32" plus "G" for
    the pooled global feature.
    """

    image_size: int = 64
    in_channels: int = 1
    # channel widths at encoder strides 1, 2, 4, 8, 16, 32
    widths: tuple[int, ...] = (8, 16, 32, 48, 64, 96)
    global_dim: int = 64
    text_dim: int = 64
    text_layers: int = 3
    attn_heads: int = 4
    max_len: int = 32
    target_temp: float = 1.0   # softens the mask-overlap target distribution
    logit_temp: float = 0.07   # scales cosine logits before softmax
    attn_temp: float = 1.0     # scales text-to-region attention scores
    levels: tuple[str, ...] = ("8", "16", "32", "G")
    ablation: AblationFlags = field(default_factory=AblationFlags)
    lr0: float = 3e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("target_temp", "logit_temp", "attn_temp"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.image_size < 32 or self.image_size % 32 != 0:
            raise ConfigError("image_size must be a positive multiple of 32")
        if len(self.widths) != 6 or any(w < 1 for w in self.widths):
            raise ConfigError("widths must be six positive channel counts (strides 1,2,4,8,16,32)")
        if self.text_layers < 3:
            raise ConfigError("text_layers must be >= 3 (readout averages the last 3 layers)")
        bad = [lv for lv in self.levels if lv not in VALID_LEVELS]
        if bad:
            raise ConfigError(f"unknown alignment levels {bad}, allowed: {VALID_LEVELS}")
        if len(set(self.levels)) != len(self.levels):
            raise ConfigError("duplicate alignment levels")
        if self.ablation.contrastive and not self.levels:
            raise ConfigError("alignment enabled but no levels configured")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        # attention runs over text_dim and the three coarse image widths
        for dim in (self.text_dim, *self.widths[3:]):
            if dim % self.attn_heads != 0:
                raise ConfigError(f"attention dim {dim} not divisible by {self.attn_heads} heads")

    def resolved(self) -> "ModelConfig":
        """Apply flag implications: no text forces ltem/contrastive off, no
        multi-level alignment restricts levels to the global site."""
        flags = self.ablation
        if not flags.text:
            flags = dataclasses.replace(flags, ltem=False, contrastive=False)
        levels = self.levels
        if not flags.mas:
            levels = ("G",)
        if not flags.contrastive:
            levels = ()
        return dataclasses.replace(self, ablation=flags, levels=levels)

    def width_at(self, stride: int) -> int:
        table = dict(zip((1, 2, 4, 8, 16, 32), self.widths))
        if stride not in table:
            raise ConfigError(f"no pyramid level at stride {stride}")
        return table[stride]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "widths" in d:
            d["widths"] = tuple(int(w) for w in d["widths"])
        if "levels" in d:
            d["levels"] = tuple(str(lv).upper() if str(lv).upper() == "G" else str(lv) for lv in d["levels"])
        if "ablation" in d and not isinstance(d["ablation"], AblationFlags):
            d["ablation"] = AblationFlags(**d["ablation"])
        return cls(**d)

    def fingerprint(self) -> str:
        """Stable short hash of the fully resolved configuration."""
        blob = json.dumps(self.resolved().to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_levels(text: str) -> tuple[str, ...]:
    """Parse a comma list like "G,32,16" into canonical level order."""
    wanted = {tok.strip().upper() if tok.strip().upper() == "G" else tok.strip() for tok in text.split(",") if tok.strip()}
    bad = wanted - set(VALID_LEVELS)
    if bad:
        raise ConfigError(f"unknown alignment levels {sorted(bad)}, allowed: {VALID_LEVELS}")
    return tuple(lv for lv in VALID_LEVELS if lv in wanted)


def load_config(path: str | Path) -> ModelConfig:
    """Read a config file. TOML and JSON are both accepted."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        data = json.loads(raw)
    elif path.suffix.lower() == ".toml":
        data = tomllib.loads(raw.decode())
    else:
        try:
            data = json.loads(raw)
        except json.JSONDecodeError:
            data = tomllib.loads(raw.decode())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a table/object at top level")
    return ModelConfig.from_dict(data)


def save_config(config: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
