"""
Corpus directory layout:

    <dir>/images/<name>.ppm
    <dir>/annotations.jsonl
    <dir>/manifest.json      {"seed": N, "count": N, "splits": {"train": [...], "val": [...], "test": [...]}}
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from backend.domain.errors import AnnotationParseError
from backend.domain.models import AnnotatedImage
from backend.infrastructure.annotations import ImageAnnotation, load_annotations, save_annotations
from backend.infrastructure.image_io import load_image, save_image

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
ANNOTATIONS_FILE = "annotations.jsonl"
MANIFEST_FILE = "manifest.json"
IMAGES_DIR = "images"


def split_names(names: Sequence[str], seed: int) -> Dict[str, List[str]]:
    """Seeded shuffle cut 80/10/10; each split keeps corpus order."""
    n = len(names)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(n * SPLIT_FRACTIONS[0])
    n_val = int(n * SPLIT_FRACTIONS[1])
    cuts = {"train": order[:n_train], "val": order[n_train:n_train + n_val], "test": order[n_train + n_val:]}
    return {split: [names[i] for i in sorted(idx.tolist())] for split, idx in cuts.items()}


def save_corpus(out_dir: Path, corpus: Sequence[AnnotatedImage], seed: int) -> Dict[str, List[str]]:
    out_dir = Path(out_dir)
    images_dir = out_dir / IMAGES_DIR
    images_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for item in corpus:
        file_name = f"{item.name}.ppm"
        save_image(images_dir / file_name, item.image)
        records.append(ImageAnnotation(image=file_name, boxes=list(item.boxes), landmarks=list(item.landmarks)))
    save_annotations(out_dir / ANNOTATIONS_FILE, records)
    splits = split_names([item.name for item in corpus], seed)
    manifest = {"seed": seed, "count": len(corpus), "splits": splits}
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(
        "Wrote corpus of %d images to %s (%s)",
        len(corpus), out_dir, ", ".join(f"{k}={len(v)}" for k, v in splits.items()),
    )
    return splits


def load_manifest(corpus_dir: Path) -> Dict:
    path = Path(corpus_dir) / MANIFEST_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(exc.lineno, f"{path}: {exc.msg}") from exc


def load_corpus(corpus_dir: Path, split: Optional[str] = None) -> List[AnnotatedImage]:
    """
    Load every image of the corpus, or only those of one split when the
    manifest is present.
    """
    corpus_dir = Path(corpus_dir)
    records = load_annotations(corpus_dir / ANNOTATIONS_FILE)
    wanted = None
    if split is not None:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}; expected one of {', '.join(SPLITS)}")
        wanted = set(load_manifest(corpus_dir)["splits"][split])
    corpus = []
    for record in records:
        name = Path(record.image).stem
        if wanted is not None and name not in wanted:
            continue
        image = load_image(corpus_dir / IMAGES_DIR / record.image)
        corpus.append(AnnotatedImage(image=image, boxes=record.boxes, landmarks=record.landmarks, name=name))
    logger.debug("Loaded %d images from %s (split=%s)", len(corpus), corpus_dir, split)
    return corpus
