"""Command-line entry points.

Exit codes: 0 success, 2 usage/config error, 3 numerical abort during
training. TMCA_SEED overrides the default seed when no --seed flag is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig, load_config
from .data import Corpus, CorpusError, load_corpus, save_corpus, subset_by_ratio
from .report import ReportError, build_report
from .synthetic import GenerationError, SynthSpec, generate_synthetic

USAGE_ERROR = 2
ABORT_ERROR = 3


def tree_hash(root: str | Path) -> str:
    """Order-independent content hash of a directory tree (16 hex chars)."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(hashlib.sha256(path.read_bytes()).digest())
    return h.hexdigest()[:16]


def write_manifest(out_dir: Path, command: str, config: dict | None, seed: int | None,
                   inputs: dict[str, str], outputs: list[str], extra: dict | None = None) -> Path:
    """Record how a run was invoked, before any long computation starts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "input_hashes": inputs,
        "outputs": outputs,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def default_seed(args_seed: int | None) -> int:
    if args_seed is not None:
        return args_seed
    env = os.environ.get("TMCA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as err:
            raise ConfigError(f"TMCA_SEED is not an integer: {env!r}") from err
    return 0


def _load_model_config(args) -> ModelConfig:
    """Precedence: explicit flags > config file > defaults."""
    config = load_config(args.config) if getattr(args, "config", None) else ModelConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None or os.environ.get("TMCA_SEED"):
        overrides["seed"] = default_seed(getattr(args, "seed", None))
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        overrides["batch_size"] = args.batch_size
    if overrides:
        config = dataclasses.replace(config, **overrides)
    ablate = getattr(args, "ablate", None)
    if ablate:
        tokens = [t.strip() for t in ablate.split(",") if t.strip()]
        config = dataclasses.replace(config, ablation=config.ablation.with_tokens_off(tokens))
    return config


def cmd_synth(args) -> int:
    if args.spec:
        blob = json.loads(Path(args.spec).read_text())
        counts = {s: int(blob.pop(s, d)) for s, d in (("n_train", 2000), ("n_val", 200), ("n_test", 200))}
        blob.pop("n_samples", None)
        spec = SynthSpec(**blob)
    else:
        counts = {"n_train": args.n_train, "n_val": args.n_val, "n_test": args.n_test}
        spec = SynthSpec(
            image_size=args.image_size,
            blob_count_range=(args.blob_min, args.blob_max),
            seed=default_seed(args.seed),
        )
    for split, n in counts.items():
        if n <= 0:
            raise ConfigError(f"{split} must be positive, got {n}")

    out = Path(args.out)
    write_manifest(out, "synth", dataclasses.asdict(spec), spec.seed, {}, [str(out)],
                   extra={"counts": counts})
    for split, n in counts.items():
        split_name = split.removeprefix("n_")
        corpus = generate_synthetic(dataclasses.replace(spec, n_samples=n), split=split_name)
        save_corpus(corpus, out)
    print(f"wrote {sum(counts.values())} samples under {out} (tree hash {tree_hash(out)})")
    return 0


def cmd_train(args) -> int:
    from .training import TrainingAbort, train

    config = _load_model_config(args)
    data_root = Path(args.data)
    train_corpus = load_corpus(data_root, "train")
    try:
        val_corpus = load_corpus(data_root, "val")
    except CorpusError:
        val_corpus = None
    if args.data_ratio is not None:
        if not 0.0 < args.data_ratio <= 1.0:
            raise ConfigError(f"--data-ratio outside (0, 1], got {args.data_ratio}")
        train_corpus = subset_by_ratio(train_corpus, args.data_ratio, config.seed)

    out = Path(args.out)
    write_manifest(
        out, "train", config.resolved().to_dict(), config.seed,
        {"data": tree_hash(data_root)},
        [str(out / "checkpoint.pt"), str(out / "metrics.jsonl")],
        extra={"n_train": len(train_corpus), "n_val": len(val_corpus) if val_corpus else 0},
    )

    def log_fn(entry: dict) -> None:
        dice = entry["val_dice"]
        dice_s = f"{dice:.2f}" if dice is not None else "-"
        print(f"epoch {entry['epoch']:3d}  loss {entry['loss_total']:.4f}  val dice {dice_s}")

    try:
        result = train(config, train_corpus, val_corpus, out_dir=out, log_fn=log_fn if not args.quiet else None)
    except TrainingAbort as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return ABORT_ERROR
    best = f"{result.best_val_dice:.2f}" if result.best_val_dice is not None else "n/a"
    print(f"checkpoint: {result.checkpoint_path} (best val dice {best})")
    return 0


def cmd_eval(args) -> int:
    from .training import evaluate, load_checkpoint

    bundle = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.data, args.split)
    size = bundle.config.image_size
    for s in corpus.samples:
        if s.image.shape[:2] != (size, size):
            raise ConfigError(
                f"sample {s.id} is {s.image.shape[1]}x{s.image.shape[0]} but the checkpoint "
                f"was trained at {size}x{size}; regenerate or resize the corpus"
            )
    report = evaluate(bundle, corpus)
    payload = report.to_dict()
    payload["model_fingerprint"] = bundle.fingerprint
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_infer(args) -> int:
    import cv2

    from .training import load_checkpoint

    if not args.text.strip():
        raise ConfigError("--text must be non-empty")
    bundle = load_checkpoint(args.checkpoint)
    flag = cv2.IMREAD_GRAYSCALE if bundle.config.in_channels == 1 else cv2.IMREAD_COLOR
    raw = cv2.imread(str(args.image), flag)
    if raw is None:
        raise ConfigError(f"cannot read image {args.image}")
    probs = bundle.segment_image(raw.astype(np.float32) / 255.0, args.text)
    mask = (probs >= args.threshold).astype(np.uint8) * 255
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(out), mask)
    if args.overlay:
        gray = raw if raw.ndim == 2 else cv2.cvtColor(raw, cv2.COLOR_BGR2GRAY)
        rgb = np.stack([gray] * 3, axis=-1).astype(np.float32)
        tint = np.zeros_like(rgb)
        tint[..., 2] = 255.0  # red channel in BGR order
        alpha = (mask > 0)[..., None] * 0.45
        blended = (rgb * (1 - alpha) + tint * alpha).astype(np.uint8)
        overlay = np.dstack([blended, np.full(mask.shape, 255, np.uint8)])
        cv2.imwrite(str(args.overlay), overlay)
    print(f"mask: {out} ({int((mask > 0).sum())} foreground px)")
    return 0


def cmd_ablate(args) -> int:
    from .training import TrainingAbort, run_ablation_suite

    config = _load_model_config(args)
    data_root = Path(args.data)
    train_corpus = load_corpus(data_root, "train")
    try:
        val_corpus = load_corpus(data_root, "val")
    except CorpusError:
        val_corpus = None
    test_corpus = load_corpus(data_root, "test")

    out = Path(args.out)
    write_manifest(out, "ablate", config.resolved().to_dict(), config.seed,
                   {"data": tree_hash(data_root)}, [str(out / "ablation_report.json")])
    try:
        report = run_ablation_suite(config, train_corpus, val_corpus, test_corpus, out_dir=out)
    except TrainingAbort as err:
        print(f"ablation aborted: {err}", file=sys.stderr)
        return ABORT_ERROR
    n_rows = sum(len(v) for v in report["tables"].values())
    print(f"{n_rows} ladder rows -> {out / 'ablation_report.json'}")
    return 0


def cmd_report(args) -> int:
    run_dirs = sorted(p for p in Path(args.runs).iterdir() if (p / "metrics.jsonl").is_file()) \
        if Path(args.runs).is_dir() else []
    if (Path(args.runs) / "metrics.jsonl").is_file():
        run_dirs = [Path(args.runs)]
    if not run_dirs:
        raise ReportError(f"no runs with metrics.jsonl under {args.runs}")
    result = build_report(run_dirs, args.out)
    print(f"report: {result['markdown']} + {len(result['figures'])} figures")
    return 0


def cmd_serve(args) -> int:
    from .service import run_server

    run_server(args.checkpoint, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmca", description="Language-guided segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ambiguous-scene corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON file of generator settings")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--blob-min", type=int, default=2)
    p.add_argument("--blob-max", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--data-ratio", type=float)
    p.add_argument("--ablate", help="comma list from {tsdm,ltem,mas,ca,text}")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="write the metrics JSON here as well")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="segment one image with a text prompt")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("ablate", help="run the component/level/data-ratio ladders")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="render metrics logs to tables and figures")
    p.add_argument("--runs", required=True, help="run directory, or a directory of run directories")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("serve", help="start the inference HTTP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CorpusError, GenerationError, ReportError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
