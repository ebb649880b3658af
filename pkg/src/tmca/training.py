"""Training loop with cosine-annealed AdamW, per-epoch metrics logging,
best-checkpoint tracking, corpus evaluation and the ablation ladders."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

from .config import ModelConfig
from .data import Corpus, Sample, make_batches, preprocess, sample_rng, subset_by_ratio
from .decoder import NonFiniteLoss
from .encoders import Vocabulary, tokenize
from .metrics import EvalReport, summarize
from .model import Segmenter

CHECKPOINT_VERSION = 1
PRED_THRESHOLD = 0.5


class TrainingAbort(RuntimeError):
    """Non-finite loss encountered; message names the offending batch."""


def lr_at(step: int, total_steps: int, lr0: float = 3e-4, lr_min: float = 1e-6) -> float:
    """Cosine annealing from lr0 (step 0) to lr_min (final step)."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class SegmenterBundle:
    """A usable trained model: weights + vocabulary + config."""

    model: Segmenter
    vocab: Vocabulary
    config: ModelConfig
    fingerprint: str = ""

    def collate(self, samples: list[Sample]) -> tuple[torch.Tensor, ...]:
        images = torch.from_numpy(np.stack([s.image for s in samples])).permute(0, 3, 1, 2)
        masks = torch.from_numpy(np.stack([s.mask for s in samples]).astype(np.float32))
        toks = [tokenize(s.text, self.vocab, self.config.max_len) for s in samples]
        ids = torch.stack([t[0] for t in toks])
        valid = torch.stack([t[1] for t in toks])
        return images, masks, ids, valid

    @torch.no_grad()
    def predict_probs(self, samples: list[Sample]) -> np.ndarray:
        """Sigmoid probabilities at config resolution for preprocessed samples."""
        self.model.eval()
        images, _, ids, valid = self.collate(samples)
        out = self.model(images, ids, valid)
        return torch.sigmoid(out.logits[:, 0]).numpy()

    def segment_image(self, image: np.ndarray, text: str) -> np.ndarray:
        """Probabilities for one arbitrary-size image, resized back to the
        input resolution."""
        h, w = image.shape[:2]
        size = self.config.image_size
        img = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
        if img.ndim == 2:
            img = img[..., None]
        sample = Sample(id="query", image=img.astype(np.float32), mask=np.zeros((size, size), np.uint8), text=text)
        probs = self.predict_probs([sample])[0]
        if (h, w) != (size, size):
            probs = cv2.resize(probs, (w, h), interpolation=cv2.INTER_LINEAR)
        return probs


@dataclass
class TrainResult:
    bundle: SegmenterBundle
    history: list[dict]
    best_val_dice: float | None
    checkpoint_path: Path | None = None
    aborted_batch: str | None = None


def evaluate(bundle: SegmenterBundle, corpus: Corpus, threshold: float = PRED_THRESHOLD) -> EvalReport:
    """Deterministic per-image evaluation at the given threshold."""
    if len(corpus) == 0:
        raise ValueError("cannot evaluate an empty corpus")
    bundle.model.eval()
    size = bundle.config.image_size
    rng = np.random.default_rng(0)  # unused: augment off
    preds, gts, ids = [], [], []
    bs = bundle.config.batch_size
    for start in range(0, len(corpus), bs):
        chunk = [preprocess(s, size, rng, augment=False) for s in corpus.samples[start : start + bs]]
        probs = bundle.predict_probs(chunk)
        for s, p in zip(chunk, probs):
            preds.append((p >= threshold).astype(np.uint8))
            gts.append(s.mask)
            ids.append(s.id)
    return summarize(corpus.split, ids, preds, gts, fingerprint=bundle.config.fingerprint())


def save_checkpoint(path: str | Path, model: Segmenter, vocab: Vocabulary, config: ModelConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "state_dict": model.state_dict(),
            "config": config.to_dict(),
            "vocab": vocab.token_to_id,
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> SegmenterBundle:
    path = Path(path)
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('format_version')!r}")
    config = ModelConfig.from_dict(blob["config"])
    vocab = Vocabulary(blob["vocab"])
    model = Segmenter(config, len(vocab))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    return SegmenterBundle(model=model, vocab=vocab, config=config, fingerprint=digest)


def train(
    config: ModelConfig,
    train_corpus: Corpus,
    val_corpus: Corpus | None = None,
    out_dir: str | Path | None = None,
    log_fn=None,
) -> TrainResult:
    """Run the full training loop.

    Deterministic for a fixed (config, corpora): the seed drives parameter
    init, batch shuffling and augmentation. The best-val-Dice weights are
    retained (falling back to the final weights without a val split).
    """
    config = config.resolved()
    torch.manual_seed(config.seed)
    vocab = Vocabulary.build(train_corpus.texts())
    model = Segmenter(config, len(vocab))
    bundle = SegmenterBundle(model=model, vocab=vocab, config=config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr0, weight_decay=config.weight_decay)

    n_batches = math.ceil(len(train_corpus) / config.batch_size)
    total_steps = config.epochs * n_batches
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")

    history: list[dict] = []
    best_dice, best_state, step = None, None, 0
    t0 = time.monotonic()
    try:
        for epoch in range(config.epochs):
            model.train()
            sums = {"total": 0.0, "seg": 0.0, "ca": 0.0}
            level_sums: dict[str, float] = {}
            lr = config.lr0
            for bi, idxs in enumerate(make_batches(len(train_corpus), config.batch_size, config.seed, epoch)):
                lr = lr_at(step, total_steps, config.lr0, config.lr_min)
                for g in opt.param_groups:
                    g["lr"] = lr
                batch = [
                    preprocess(train_corpus[i], config.image_size, sample_rng(config.seed, epoch, i), augment=True)
                    for i in idxs
                ]
                images, masks, ids, valid = bundle.collate(batch)
                out = model(images, ids, valid)
                try:
                    losses = model.losses(out, masks)
                except NonFiniteLoss as err:
                    raise TrainingAbort(f"epoch {epoch} batch {bi}: {err}") from err
                opt.zero_grad(set_to_none=True)
                losses.total.backward()
                opt.step()
                step += 1
                sums["total"] += float(losses.total.detach())
                sums["seg"] += float(losses.seg.detach())
                sums["ca"] += float(losses.align.detach())
                for lv, v in losses.align_per_level.items():
                    level_sums[lv] = level_sums.get(lv, 0.0) + v

            entry = {
                "epoch": epoch,
                "lr": lr,
                "loss_total": sums["total"] / n_batches,
                "loss_seg": sums["seg"] / n_batches,
                "loss_ca": sums["ca"] / n_batches,
                "loss_ca_per_level": {lv: v / n_batches for lv, v in level_sums.items()},
                "val_jaccard": None,
                "val_dice": None,
                "val_acc": None,
                "elapsed_s": round(time.monotonic() - t0, 3),
            }
            if val_corpus is not None and len(val_corpus) > 0:
                report = evaluate(bundle, val_corpus)
                entry["val_jaccard"] = report.jaccard_pct
                entry["val_dice"] = report.dice_pct
                entry["val_acc"] = report.accuracy_pct
                if best_dice is None or report.dice_pct > best_dice:
                    best_dice = report.dice_pct
                    best_state = copy.deepcopy(model.state_dict())
            history.append(entry)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(entry) + "\n")
                metrics_fh.flush()
            if log_fn is not None:
                log_fn(entry)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = save_checkpoint(out_dir / "checkpoint.pt", model, vocab, config)
        vocab.to_json(out_dir / "vocab.json")
        bundle.fingerprint = hashlib.sha256(checkpoint_path.read_bytes()).hexdigest()[:16]
    return TrainResult(bundle=bundle, history=history, best_val_dice=best_dice, checkpoint_path=checkpoint_path)


@dataclass
class AblationRow:
    ladder: str
    label: str
    config_fingerprint: str
    data_ratio: float
    test: EvalReport
    final_loss_ca: float

    def to_dict(self) -> dict:
        d = {
            "ladder": self.ladder,
            "label": self.label,
            "config_fingerprint": self.config_fingerprint,
            "data_ratio": self.data_ratio,
            "final_loss_ca": self.final_loss_ca,
        }
        d.update({k: v for k, v in self.test.to_dict().items() if k != "config_fingerprint"})
        return d


def component_ladder(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """Progressive component-removal configurations."""
    import dataclasses as dc

    def off(**kw):
        return dc.replace(base, ablation=dc.replace(base.ablation, **kw))

    return [
        ("full", base),
        ("-tsdm", off(tsdm=False)),
        ("-ltem", off(ltem=False)),
        ("-mas", off(mas=False)),
        ("-ca", off(contrastive=False)),
    ]


def level_ladder(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """Alignment-level ladder from global-only to all levels."""
    import dataclasses as dc

    sets = [("G",), ("32", "G"), ("16", "32", "G"), ("8", "16", "32", "G")]
    return [("levels:" + "+".join(lv), dc.replace(base, levels=lv)) for lv in sets]


def ratio_ladder() -> list[float]:
    return [0.25, 0.5, 0.75, 1.0]


def run_ablation_suite(
    base_config: ModelConfig,
    train_corpus: Corpus,
    val_corpus: Corpus | None,
    test_corpus: Corpus,
    out_dir: str | Path | None = None,
    log_fn=None,
) -> dict:
    """Train and test every rung of the three ablation ladders, deduplicating
    identical configurations, and emit one consolidated report."""
    out_dir = Path(out_dir) if out_dir is not None else None
    cache: dict[tuple[str, float], tuple[EvalReport, float]] = {}

    def run_one(label: str, cfg: ModelConfig, ratio: float) -> AblationRow:
        key = (cfg.fingerprint(), ratio)
        if key not in cache:
            sub = subset_by_ratio(train_corpus, ratio, cfg.seed) if ratio < 1.0 else train_corpus
            run_dir = out_dir / label.replace(":", "_").replace("+", "") if out_dir is not None else None
            result = train(cfg, sub, val_corpus, out_dir=run_dir, log_fn=log_fn)
            report = evaluate(result.bundle, test_corpus)
            cache[key] = (report, result.history[-1]["loss_ca"])
        report, loss_ca = cache[key]
        return AblationRow(
            ladder="",
            label=label,
            config_fingerprint=cfg.fingerprint(),
            data_ratio=ratio,
            test=report,
            final_loss_ca=loss_ca,
        )

    tables: dict[str, list[dict]] = {}
    rows = []
    for label, cfg in component_ladder(base_config):
        row = run_one(label, cfg, 1.0)
        row.ladder = "component_removal"
        rows.append(row)
    tables["component_removal"] = [r.to_dict() for r in rows]

    rows = []
    for label, cfg in level_ladder(base_config):
        row = run_one(label, cfg, 1.0)
        row.ladder = "level_ladder"
        rows.append(row)
    tables["level_ladder"] = [r.to_dict() for r in rows]

    rows = []
    for ratio in ratio_ladder():
        row = run_one(f"ratio:{int(ratio * 100)}%", base_config, ratio)
        row.ladder = "data_ratio"
        rows.append(row)
    tables["data_ratio"] = [r.to_dict() for r in rows]

    report = {
        "base_config": base_config.resolved().to_dict(),
        "base_fingerprint": base_config.fingerprint(),
        "tables": tables,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
