"""Pilot run of the synthetic benchmark: full model vs text-ablated model,
one seed, printing the Dice gap and the image-only ceiling check."""

import dataclasses
import sys
import time

import numpy as np

from tmca.config import ModelConfig
from tmca.synthetic import SynthSpec, all_blobs_dice_ceiling, generate_synthetic
from tmca.training import evaluate, train

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 30
N_TRAIN = int(sys.argv[3]) if len(sys.argv) > 3 else 2000


def main() -> None:
    spec = SynthSpec(seed=0, n_samples=N_TRAIN)
    t0 = time.time()
    train_c = generate_synthetic(spec, "train")
    val_c = generate_synthetic(dataclasses.replace(spec, n_samples=200), "val")
    test_c = generate_synthetic(dataclasses.replace(spec, n_samples=200), "test")
    print(f"corpus in {time.time() - t0:.1f}s", flush=True)

    cfg = ModelConfig(seed=SEED, epochs=EPOCHS)
    t0 = time.time()
    full = train(cfg, train_c, val_c)
    print(f"full model trained in {(time.time() - t0) / 60:.1f} min", flush=True)
    full_report = evaluate(full.bundle, test_c)
    print(f"full: test dice {full_report.dice_pct:.2f}% jaccard {full_report.jaccard_pct:.2f}%", flush=True)

    cfg_blind = dataclasses.replace(cfg, ablation=cfg.ablation.with_tokens_off(["text"]))
    t0 = time.time()
    blind = train(cfg_blind, train_c, val_c)
    print(f"text-off model trained in {(time.time() - t0) / 60:.1f} min", flush=True)
    blind_report = evaluate(blind.bundle, test_c)
    print(f"text-off: test dice {blind_report.dice_pct:.2f}%", flush=True)

    ceilings = np.array([all_blobs_dice_ceiling(r) for r in test_c.gen_records])
    blind_dice = np.array(blind_report.per_sample_dice)
    print(f"ceiling mean {ceilings.mean():.4f}  blind mean {blind_dice.mean():.4f}")
    print(f"blind - ceiling avg margin {float((blind_dice - ceilings).mean()):+.4f} (must be <= +0.02)")
    gap = (full_report.dice_pct - blind_report.dice_pct) / 100.0
    print(f"full-blind gap {gap:+.4f} (need >= +0.10); full >= 0.80: {full_report.dice_pct >= 80.0}")
    hist = [h["loss_total"] for h in full.history]
    print("loss first/5th/last:", round(hist[0], 4), round(hist[4], 4) if len(hist) > 4 else "-", round(hist[-1], 4))


if __name__ == "__main__":
    main()
