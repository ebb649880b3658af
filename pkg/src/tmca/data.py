"""Image/mask/text corpora: loading, preprocessing, subsetting, batching.

Directory layout for a corpus root:

    <root>/<split>/images/*.png|jpg
    <root>/<split>/masks/<same stem>.png
    <root>/<split>/texts.csv          (UTF-8, header "filename,text")
    <root>/<split>/gen_records.jsonl  (synthetic corpora only)
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

IMAGE_EXTS = (".png", ".jpg", ".jpeg")
ZOOM_PROB = 0.10
ZOOM_MAX = 1.2


class CorpusError(ValueError):
    """Malformed corpus directory or invalid sample contents."""


@dataclass
class Sample:
    """One (image, binary mask, text report) triplet."""

    id: str
    image: np.ndarray  # float32, H x W x C, values in [0, 1]
    mask: np.ndarray   # uint8, H x W, values in {0, 1}
    text: str

    def validate(self) -> "Sample":
        if self.image.ndim != 3:
            raise CorpusError(f"{self.id}: image must be H x W x C, got shape {self.image.shape}")
        if float(self.image.min()) < 0.0 or float(self.image.max()) > 1.0:
            raise CorpusError(f"{self.id}: image values outside [0, 1]")
        if self.mask.shape != self.image.shape[:2]:
            raise CorpusError(f"{self.id}: mask shape {self.mask.shape} != image spatial {self.image.shape[:2]}")
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, (0, 1))):
            raise CorpusError(f"{self.id}: mask is not binary, values {vals[:8]}")
        if not self.text.strip():
            raise CorpusError(f"{self.id}: empty text report")
        return self


@dataclass
class Corpus:
    samples: list[Sample]
    split: str
    source: str  # "medical-dir" | "synthetic"
    gen_records: list[dict] | None = field(default=None, repr=False)

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate sample ids in corpus")
        if self.gen_records is not None and len(self.gen_records) != len(self.samples):
            raise CorpusError("gen_records length does not match samples")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def texts(self) -> list[str]:
        return [s.text for s in self.samples]


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float32)[..., None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return (arr >= 0.5).astype(np.uint8)


def load_corpus(root: str | Path, split: str) -> Corpus:
    """Load one split from a corpus root. Raises CorpusError naming the
    first image that lacks a mask or a text row."""
    base = Path(root) / split
    img_dir, mask_dir = base / "images", base / "masks"
    if not img_dir.is_dir():
        raise CorpusError(f"missing images directory: {img_dir}")
    texts_path = base / "texts.csv"
    if not texts_path.is_file():
        raise CorpusError(f"missing text table: {texts_path}")
    text_by_name: dict[str, str] = {}
    with open(texts_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:2]] != ["filename", "text"]:
            raise CorpusError(f"{texts_path}: expected header 'filename,text'")
        for row in reader:
            text_by_name[row["filename"]] = row["text"]

    samples = []
    for img_path in sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS):
        mask_path = mask_dir / (img_path.stem + ".png")
        if not mask_path.is_file():
            raise CorpusError(f"no mask for image {img_path.name} (expected {mask_path})")
        if img_path.name not in text_by_name:
            raise CorpusError(f"no text row for image {img_path.name} in {texts_path}")
        samples.append(
            Sample(
                id=img_path.stem,
                image=_load_image(img_path),
                mask=_load_mask(mask_path),
                text=text_by_name[img_path.name],
            ).validate()
        )

    records = None
    rec_path = base / "gen_records.jsonl"
    if rec_path.is_file():
        by_id = {}
        with open(rec_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    by_id[rec["id"]] = rec
        records = [by_id[s.id] for s in samples]

    return Corpus(samples=samples, split=split, source="medical-dir", gen_records=records)


def save_corpus(corpus: Corpus, root: str | Path) -> Path:
    """Write a corpus in the standard directory layout. Images are stored as
    8-bit PNGs, masks as 0/255 PNGs."""
    base = Path(root) / corpus.split
    (base / "images").mkdir(parents=True, exist_ok=True)
    (base / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in corpus.samples:
        arr = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
        img = Image.fromarray(arr[..., 0], mode="L") if arr.shape[2] == 1 else Image.fromarray(arr, mode="RGB")
        img.save(base / "images" / f"{s.id}.png")
        Image.fromarray(s.mask * 255, mode="L").save(base / "masks" / f"{s.id}.png")
        rows.append((f"{s.id}.png", s.text))
    with open(base / "texts.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "text"])
        writer.writerows(rows)
    if corpus.gen_records is not None:
        with open(base / "gen_records.jsonl", "w", encoding="utf-8") as fh:
            for rec in corpus.gen_records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return base


def _resize(image: np.ndarray, mask: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    # cv2 drops trailing singleton channels; restore them
    img = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    if img.ndim == 2:
        img = img[..., None]
    msk = cv2.resize(mask, (size, size), interpolation=cv2.INTER_NEAREST)
    return img.astype(np.float32), msk.astype(np.uint8)


def preprocess(sample: Sample, target_size: int, rng: np.random.Generator, augment: bool) -> Sample:
    """Resize to target_size; with augment, apply a 10%-probability center
    zoom (scale in [1.0, 1.2], cropped back). Masks stay strictly binary."""
    if target_size < 16:
        raise ValueError("target_size must be >= 16")
    zoom = augment and rng.uniform() < ZOOM_PROB
    if zoom:
        scale = rng.uniform(1.0, ZOOM_MAX)
        big = max(target_size + 1, int(round(target_size * scale)))
        img, msk = _resize(sample.image, sample.mask, big)
        off = (big - target_size) // 2
        img = img[off : off + target_size, off : off + target_size]
        msk = msk[off : off + target_size, off : off + target_size]
        return Sample(sample.id, np.ascontiguousarray(img), np.ascontiguousarray(msk), sample.text)
    if sample.image.shape[0] == target_size and sample.image.shape[1] == target_size:
        return Sample(sample.id, sample.image, sample.mask, sample.text)
    img, msk = _resize(sample.image, sample.mask, target_size)
    return Sample(sample.id, img, msk, sample.text)


def subset_by_ratio(corpus: Corpus, ratio: float, seed: int) -> Corpus:
    """Uniform subsample without replacement, keeping corpus order.
    ratio=1.0 returns the corpus unchanged."""
    if not 0 < ratio <= 1:
        raise CorpusError(f"ratio must be in (0, 1], got {ratio}")
    if ratio == 1.0:
        return corpus
    n = int(ratio * len(corpus))
    if n < 1:
        raise CorpusError(f"ratio {ratio} of {len(corpus)} samples selects nothing")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    idx = np.sort(rng.choice(len(corpus), size=n, replace=False))
    records = [corpus.gen_records[i] for i in idx] if corpus.gen_records is not None else None
    return Corpus(
        samples=[corpus.samples[i] for i in idx],
        split=corpus.split,
        source=corpus.source,
        gen_records=records,
    )


def make_batches(n_samples: int, batch_size: int, shuffle_seed: int, epoch: int = 0) -> list[list[int]]:
    """Deterministic shuffled index batches for one epoch. Every index
    appears exactly once; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((shuffle_seed, epoch)))
    order = rng.permutation(n_samples)
    return [order[i : i + batch_size].tolist() for i in range(0, n_samples, batch_size)]


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample generator; augmentation outcomes depend only on
    (seed, epoch, sample index) so parallel loading cannot change them."""
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, index)))
