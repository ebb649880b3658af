"""Harness for the long synthetic-benchmark runs behind the acceptance
suite.

Each (variant, seed) run trains for ~7 minutes, so results are cached on
disk under .bench_cache/ keyed by a hash of the numeric modules plus the
resolved config fingerprint. Editing any module that feeds the numbers
invalidates the cache and the next test run retrains from scratch.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from tmca.config import ModelConfig
from tmca.synthetic import SynthSpec, all_blobs_dice_ceiling, generate_synthetic
from tmca.training import evaluate, train

REPO = Path(__file__).resolve().parents[1]
CACHE_DIR = REPO / ".bench_cache"

BENCH_SPEC = SynthSpec(seed=0, n_samples=2000)
N_VAL = 200
N_TEST = 200
EPOCHS = 30
SEEDS = (0, 1, 2)
VARIANTS = ("full", "image-only", "levels-g", "no-ca")

_NUMERIC_MODULES = (
    "config.py",
    "data.py",
    "synthetic.py",
    "encoders.py",
    "alignment.py",
    "decoder.py",
    "model.py",
    "metrics.py",
    "training.py",
)


def code_hash() -> str:
    """Digest of the modules whose behaviour determines the cached numbers."""
    h = hashlib.sha256()
    for name in _NUMERIC_MODULES:
        h.update(name.encode())
        h.update((REPO / "src" / "tmca" / name).read_bytes())
    return h.hexdigest()[:16]


def benchmark_corpora():
    train_c = generate_synthetic(BENCH_SPEC, "train")
    val_c = generate_synthetic(dataclasses.replace(BENCH_SPEC, n_samples=N_VAL), "val")
    test_c = generate_synthetic(dataclasses.replace(BENCH_SPEC, n_samples=N_TEST), "test")
    return train_c, val_c, test_c


def variant_config(name: str, seed: int) -> ModelConfig:
    cfg = ModelConfig(seed=seed, epochs=EPOCHS)
    if name == "full":
        return cfg
    if name == "image-only":
        return dataclasses.replace(cfg, ablation=cfg.ablation.with_tokens_off(["text"]))
    if name == "levels-g":
        return dataclasses.replace(cfg, levels=("G",))
    if name == "no-ca":
        return dataclasses.replace(cfg, ablation=cfg.ablation.with_tokens_off(["ca"]))
    raise ValueError(f"unknown benchmark variant {name!r}")


def run_path(name: str, seed: int) -> Path:
    return CACHE_DIR / f"{name}-s{seed}-{code_hash()}-{variant_config(name, seed).fingerprint()}.json"


def ensure_run(name: str, seed: int, corpora=None, log_fn=None) -> dict:
    """Return cached benchmark metrics for (variant, seed), training first
    if no cache entry matches the current code and config."""
    path = run_path(name, seed)
    if path.exists():
        return json.loads(path.read_text())
    if corpora is None:
        corpora = benchmark_corpora()
    train_c, val_c, test_c = corpora
    cfg = variant_config(name, seed)
    t0 = time.monotonic()
    result = train(cfg, train_c, val_c, log_fn=log_fn)
    report = evaluate(result.bundle, test_c)
    record = {
        "variant": name,
        "seed": seed,
        "config_fingerprint": cfg.fingerprint(),
        "test_dice_pct": report.dice_pct,
        "test_jaccard_pct": report.jaccard_pct,
        "per_sample_dice": report.per_sample_dice,
        "per_sample_ids": report.per_sample_ids,
        "best_val_dice": result.best_val_dice,
        "final_loss_total": result.history[-1]["loss_total"],
        "final_loss_ca": result.history[-1]["loss_ca"],
        "train_seconds": round(time.monotonic() - t0, 1),
    }
    CACHE_DIR.mkdir(exist_ok=True)
    path.write_text(json.dumps(record))
    return record


def test_ceilings(test_corpus) -> np.ndarray:
    """Per-sample all-blobs Dice ceiling 2t/(t+U) for the test split."""
    return np.array([all_blobs_dice_ceiling(r) for r in test_corpus.gen_records])
