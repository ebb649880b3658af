"""Language-guided binary segmentation with soft contrastive image-text
alignment, text-conditioned attention gating, and a cross-attention decoder."""

from .config import AblationFlags, ConfigError, ModelConfig, load_config, save_config
from .data import Corpus, CorpusError, Sample, load_corpus, save_corpus, subset_by_ratio
from .metrics import EvalReport, dice, jaccard, pixel_accuracy, summarize
from .model import Segmenter
from .synthetic import SynthSpec, generate_synthetic
from .training import (
    SegmenterBundle,
    TrainingAbort,
    TrainResult,
    evaluate,
    load_checkpoint,
    lr_at,
    run_ablation_suite,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "ConfigError",
    "Corpus",
    "CorpusError",
    "EvalReport",
    "ModelConfig",
    "Sample",
    "Segmenter",
    "SegmenterBundle",
    "SynthSpec",
    "TrainResult",
    "TrainingAbort",
    "dice",
    "evaluate",
    "generate_synthetic",
    "jaccard",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "lr_at",
    "pixel_accuracy",
    "run_ablation_suite",
    "save_checkpoint",
    "save_config",
    "save_corpus",
    "subset_by_ratio",
    "summarize",
    "train",
]
