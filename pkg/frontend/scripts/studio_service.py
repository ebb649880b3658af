#!/usr/bin/env python3
"""Live-service fixture for the studio tests.

Trains (or reuses) a small prompt-following checkpoint, writes one ambiguous
scene plus two prompts that pick out different blobs, then serves the HTTP
API on a free port. Prints a single READY line with the connection details
and blocks until killed.
"""

from __future__ import annotations

import dataclasses
import json
import socket
import sys
from pathlib import Path

import cv2
import numpy as np

REPO = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPO / "tests"))

import benchlib  # noqa: E402  (shared cache dir + code hash)
from tmca.config import ModelConfig  # noqa: E402
from tmca.metrics import dice  # noqa: E402
from tmca.service import create_app  # noqa: E402
from tmca.synthetic import SynthSpec, blob_text, generate_synthetic  # noqa: E402
from tmca.training import load_checkpoint, train  # noqa: E402

# seed 11: disjoint from the benchmark corpus (0) and the python test corpus (3)
SPEC = SynthSpec(seed=11, n_samples=1200)
VAL_SAMPLES = 80
CFG = ModelConfig(seed=0, epochs=14)


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def ensure_checkpoint() -> Path:
    # corpus params belong in the key: a changed SPEC must not reuse a stale model
    corpus_tag = f"{SPEC.seed}x{SPEC.n_samples}"
    run_dir = benchlib.CACHE_DIR / f"studio-{corpus_tag}-{benchlib.code_hash()}-{CFG.fingerprint()}"
    ckpt = run_dir / "checkpoint.pt"
    if ckpt.exists():
        log(f"reusing studio checkpoint {ckpt}")
        return ckpt
    log(f"training studio checkpoint into {run_dir} (a couple of minutes on CPU)")
    train_c = generate_synthetic(SPEC, "train")
    val_c = generate_synthetic(dataclasses.replace(SPEC, n_samples=VAL_SAMPLES), "val")
    result = train(CFG, train_c, val_c, out_dir=run_dir)
    log(f"trained: best val dice {result.best_val_dice}")
    assert result.checkpoint_path is not None
    return result.checkpoint_path


def pick_fixture(bundle) -> dict:
    """An ambiguous scene plus two prompts whose predicted masks differ.

    Probes a held-out split and keeps the scene where the two prompts'
    masks overlap least, so the studio test exercises genuine text-driven
    disambiguation rather than luck."""
    probe = generate_synthetic(dataclasses.replace(SPEC, n_samples=24), "studio-fixture")
    best = None
    for sample, record in zip(probe.samples, probe.gen_records):
        blobs = record["blobs"]
        if len(blobs) < 2:
            continue
        a = record["target_index"]
        b = (a + 1) % len(blobs)
        prompt_a = blob_text(blobs[a]["size"], blobs[a]["shape"], blobs[a]["cell"])
        prompt_b = blob_text(blobs[b]["size"], blobs[b]["shape"], blobs[b]["cell"])
        mask_a = (bundle.segment_image(sample.image, prompt_a) >= 0.5).astype(np.uint8)
        mask_b = (bundle.segment_image(sample.image, prompt_b) >= 0.5).astype(np.uint8)
        if mask_a.sum() == 0 or mask_b.sum() == 0:
            continue
        d = float(dice(mask_a, mask_b))
        if best is None or d < best["cross_dice"]:
            best = {"sample": sample, "prompt_a": prompt_a, "prompt_b": prompt_b, "cross_dice": d}
        if d < 0.2:
            break
    if best is None:
        raise SystemExit("no usable fixture scene found; checkpoint too weak?")
    log(f"fixture scene {best['sample'].id}: cross-prompt dice {best['cross_dice']:.3f}")
    return best


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def main() -> None:
    ckpt = ensure_checkpoint()
    bundle = load_checkpoint(ckpt)
    fix = pick_fixture(bundle)

    fixture_dir = ckpt.parent / "fixture"
    fixture_dir.mkdir(exist_ok=True)
    img8 = np.rint(fix["sample"].image[..., 0] * 255.0).astype(np.uint8)
    cv2.imwrite(str(fixture_dir / "image.png"), img8)
    (fixture_dir / "prompts.json").write_text(
        json.dumps(
            {
                "prompt_a": fix["prompt_a"],
                "prompt_b": fix["prompt_b"],
                "cross_dice": fix["cross_dice"],
                "width": int(img8.shape[1]),
                "height": int(img8.shape[0]),
            },
            indent=2,
        )
    )

    port = free_port()
    print("READY " + json.dumps({"port": port, "fixture_dir": str(fixture_dir)}), flush=True)

    import uvicorn

    uvicorn.run(create_app(ckpt), host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
