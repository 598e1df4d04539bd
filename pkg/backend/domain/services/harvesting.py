"""
Training-sample harvesting: IoU categories, random crops for P-Net and
cascade-prefix hard examples for R-Net and O-Net.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from backend.domain.config import CascadeConfig, HarvestConfig
from backend.domain.errors import BoxOutsideImageError
from backend.domain.geometry import (
    boxes_to_array,
    crop_with_padding,
    encode_box_target,
    encode_landmark_target,
    iou_to_many,
)
from backend.domain.models import AnnotatedImage, Box, SampleCategory, SampleType, TrainingSample
from backend.domain.nn.networks import INPUT_SIZES
from backend.domain.services.cascade import CascadeNets, require_trained, stage1_propose, stage2_refine
from backend.domain.services.training import StageDataset

logger = logging.getLogger(__name__)

NEGATIVE_BELOW = 0.3
PART_FROM = 0.4
POSITIVE_ABOVE = 0.65
MIN_CROP = 12


def _best_match(crop: Box, ground_truths: Sequence[Box]) -> tuple:
    if not ground_truths:
        return 0.0, -1
    overlaps = iou_to_many(crop, boxes_to_array(ground_truths))
    best = int(np.argmax(overlaps))
    return float(overlaps[best]), best


def category_for_iou(m: float) -> SampleCategory:
    if m < NEGATIVE_BELOW:
        return SampleCategory.NEGATIVE
    if m < PART_FROM:
        return SampleCategory.DISCARD
    if m <= POSITIVE_ABOVE:
        return SampleCategory.PART
    return SampleCategory.POSITIVE


def classify_sample(crop: Box, ground_truths: Sequence[Box]) -> SampleCategory:
    """Category from the maximum IoU of `crop` against the ground-truth faces."""
    return category_for_iou(_best_match(crop, ground_truths)[0])


def counts_from_config(harvest: HarvestConfig) -> Dict[SampleType, int]:
    return {
        SampleType.NEGATIVE: harvest.negatives,
        SampleType.POSITIVE: harvest.positives,
        SampleType.PART: harvest.parts,
        SampleType.LANDMARK: harvest.landmarks,
    }


def _make_sample(
    annotated: AnnotatedImage, crop: Box, sample_type: SampleType, out_size: int, best: int
) -> Optional[TrainingSample]:
    try:
        patch = crop_with_padding(annotated.image, crop, out_size)
    except BoxOutsideImageError:
        return None
    if sample_type is SampleType.NEGATIVE:
        return TrainingSample(patch, sample_type, y_det=0, crop=crop)
    if sample_type is SampleType.POSITIVE:
        return TrainingSample(patch, sample_type, y_det=1,
                              y_box=encode_box_target(crop, annotated.boxes[best]), crop=crop)
    if sample_type is SampleType.PART:
        return TrainingSample(patch, sample_type, y_box=encode_box_target(crop, annotated.boxes[best]), crop=crop)
    return TrainingSample(patch, sample_type,
                          y_landmark=encode_landmark_target(crop, annotated.landmarks[best]), crop=crop)


def sample_for_crop(annotated: AnnotatedImage, crop: Box, out_size: int) -> Optional[TrainingSample]:
    """Classify `crop` against the image's faces and cut its sample (None for Discard or off-image crops)."""
    m, best = _best_match(crop, annotated.boxes)
    sample_type = category_for_iou(m).sample_type()
    if sample_type is None:
        return None
    return _make_sample(annotated, crop, sample_type, out_size, best)


def _random_square(rng: np.random.Generator, width: int, height: int) -> Optional[Box]:
    largest = min(width, height) // 2
    if largest < MIN_CROP:
        largest = min(width, height)
    if largest < MIN_CROP:
        return None
    size = int(rng.integers(MIN_CROP, largest + 1))
    x = int(rng.integers(0, width - size + 1))
    y = int(rng.integers(0, height - size + 1))
    return Box(float(x), float(y), float(x + size), float(y + size))


def _jittered_square(rng: np.random.Generator, face: Box, size_range: tuple, shift: float) -> Box:
    side = max(face.width, face.height)
    size = max(float(MIN_CROP), rng.uniform(*size_range) * side)
    cx, cy = face.center
    cx += rng.uniform(-shift, shift) * face.width
    cy += rng.uniform(-shift, shift) * face.height
    return Box(cx - size / 2.0, cy - size / 2.0, cx + size / 2.0, cy + size / 2.0)


def _points_inside(points, crop: Box) -> bool:
    return all(crop.x1 <= x <= crop.x2 and crop.y1 <= y <= crop.y2 for x, y in points)


def harvest_landmark_crops(
    annotated: AnnotatedImage, count: int, rng: np.random.Generator, out_size: int, attempts: int
) -> List[TrainingSample]:
    """Jittered ground-truth crops around landmark-annotated faces (Positive-band IoU, all points inside)."""
    faces = [i for i, lm in enumerate(annotated.landmarks) if lm is not None]
    samples: List[TrainingSample] = []
    if not faces or count == 0:
        return samples
    for _ in range(attempts * count):
        if len(samples) >= count:
            break
        best = faces[int(rng.integers(len(faces)))]
        crop = _jittered_square(rng, annotated.boxes[best], (0.9, 1.15), 0.08)
        m, matched = _best_match(crop, annotated.boxes)
        if matched != best or category_for_iou(m) is not SampleCategory.POSITIVE:
            continue
        if not _points_inside(annotated.landmarks[best], crop):
            continue
        sample = _make_sample(annotated, crop, SampleType.LANDMARK, out_size, best)
        if sample is not None:
            samples.append(sample)
    return samples


def harvest_crops(
    annotated: AnnotatedImage,
    counts: Mapping[SampleType, int],
    seed: int,
    out_size: int = INPUT_SIZES["pnet"],
    attempts_per_sample: int = 40,
) -> List[TrainingSample]:
    """
    Random square crops classified by IoU until each category's quota is met
    or the attempt budget runs out (then a partial result is returned).
    """
    if any(c < 0 for c in counts.values()):
        raise ValueError("sample counts must be non-negative")
    rng = np.random.default_rng(seed)
    wanted = {t: int(counts.get(t, 0)) for t in (SampleType.NEGATIVE, SampleType.POSITIVE, SampleType.PART)}
    got: Dict[SampleType, List[TrainingSample]] = {t: [] for t in wanted}
    faces = annotated.boxes

    budget = attempts_per_sample * max(1, sum(wanted.values()))
    for _ in range(budget):
        need_neg = len(got[SampleType.NEGATIVE]) < wanted[SampleType.NEGATIVE]
        need_face = bool(faces) and (
            len(got[SampleType.POSITIVE]) < wanted[SampleType.POSITIVE]
            or len(got[SampleType.PART]) < wanted[SampleType.PART]
        )
        if not need_neg and not need_face:
            break
        if need_face and (not need_neg or rng.random() < 0.5):
            face = faces[int(rng.integers(len(faces)))]
            crop = _jittered_square(rng, face, (0.8, 1.25), 0.25)
        else:
            crop = _random_square(rng, annotated.width, annotated.height)
            if crop is None:
                break
        m, best = _best_match(crop, faces)
        sample_type = category_for_iou(m).sample_type()
        if sample_type is None or len(got[sample_type]) >= wanted[sample_type]:
            continue
        sample = _make_sample(annotated, crop, sample_type, out_size, best)
        if sample is not None:
            got[sample_type].append(sample)

    landmarks = harvest_landmark_crops(
        annotated, int(counts.get(SampleType.LANDMARK, 0)), rng, out_size, attempts_per_sample
    )
    short = {
        t.value: wanted[t] - len(got[t])
        for t in wanted
        if len(got[t]) < wanted[t] and (faces or t is SampleType.NEGATIVE)
    }
    if short:
        logger.warning("Image %s: quota not reached after %d attempts, missing %s", annotated.name, budget, short)
    samples = [s for t in wanted for s in got[t]]
    return samples + landmarks


def harvest_hard_examples(
    stage: int,
    prefix: CascadeNets,
    annotated: Sequence[AnnotatedImage],
    config: CascadeConfig,
    harvest: HarvestConfig,
    seed: int,
) -> List[TrainingSample]:
    """
    Run the trained cascade prefix (P-Net for stage 2, P-Net + R-Net for stage 3)
    and turn every surviving candidate into a sample at the next stage's input size.
    """
    if stage not in (2, 3):
        raise ValueError(f"hard examples are collected for stage 2 or 3, not {stage}")
    pnet = require_trained(prefix.pnet, "pnet")
    rnet = require_trained(prefix.rnet, "rnet") if stage == 3 else None
    out_size = INPUT_SIZES["rnet"] if stage == 2 else INPUT_SIZES["onet"]

    samples: List[TrainingSample] = []
    for index, item in enumerate(annotated):
        rng = np.random.default_rng(seed ^ index)
        candidates = stage1_propose(item.image, pnet, config)
        if rnet is not None:
            candidates = stage2_refine(item.image, candidates, rnet, config)
        negatives: List[TrainingSample] = []
        for crop in candidates:
            sample = sample_for_crop(item, crop, out_size)
            if sample is None:
                continue
            (negatives if sample.sample_type is SampleType.NEGATIVE else samples).append(sample)
        if len(negatives) > harvest.max_negatives_per_image:
            keep = np.sort(rng.choice(len(negatives), harvest.max_negatives_per_image, replace=False))
            negatives = [negatives[i] for i in keep]
        samples.extend(negatives)
        samples.extend(
            harvest_landmark_crops(item, harvest.landmarks, rng, out_size, harvest.attempts_per_sample)
        )
    return samples


def random_crop_samples(
    corpus: Sequence[AnnotatedImage], out_size: int, harvest: HarvestConfig, seed: int, max_workers: int = 1
) -> List[TrainingSample]:
    counts = counts_from_config(harvest)

    def one(index: int) -> List[TrainingSample]:
        return harvest_crops(corpus[index], counts, seed ^ index, out_size, harvest.attempts_per_sample)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_image = list(pool.map(one, range(len(corpus))))
    else:
        per_image = [one(i) for i in range(len(corpus))]
    return [s for chunk in per_image for s in chunk]


def build_stage_dataset(
    corpus: Sequence[AnnotatedImage],
    kind: str,
    harvest: HarvestConfig,
    seed: int,
    config: Optional[CascadeConfig] = None,
    prefix: Optional[CascadeNets] = None,
    max_workers: int = 1,
) -> StageDataset:
    """
    Samples for one stage: random crops for P-Net, cascade-prefix hard examples
    for R-Net and O-Net. Each image is seeded with seed XOR its index, so
    serial and threaded runs emit the same dataset.
    """
    size = INPUT_SIZES[kind]
    if kind == "pnet":
        samples = random_crop_samples(corpus, size, harvest, seed, max_workers)
    else:
        if prefix is None:
            raise ValueError(f"{kind} samples need the trained cascade prefix")
        stage = 2 if kind == "rnet" else 3
        samples = harvest_hard_examples(stage, prefix, corpus, config or CascadeConfig(), harvest, seed)
        present = {s.sample_type for s in samples}
        missing = [t for t in (SampleType.NEGATIVE, SampleType.POSITIVE, SampleType.PART) if t not in present]
        if missing:
            logger.warning(
                "Cascade prefix produced no %s samples for %s; topping up with random crops",
                ", ".join(t.value for t in missing), kind,
            )
            extra = random_crop_samples(corpus, size, harvest, seed, max_workers)
            samples.extend(s for s in extra if s.sample_type in missing)
    dataset = StageDataset.from_samples(samples, size)
    logger.info("Harvested %s dataset: %s", kind, {t.value: c for t, c in dataset.counts().items()})
    return dataset
