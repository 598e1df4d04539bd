"""
Procedural toy-face corpus: light ellipses with five dark dots over textured
noise, with ground-truth boxes and landmarks emitted by construction.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from backend.domain.config import CascadeConfig
from backend.domain.geometry import boxes_to_array, iou_to_many, nms, resample
from backend.domain.models import AnnotatedImage, Box, Landmarks
from backend.domain.services.evaluation import match_detections

logger = logging.getLogger(__name__)

# Canonical dot positions as fractions of the face box (x, y).
LANDMARK_LAYOUT = ((0.3, 0.4), (0.7, 0.4), (0.5, 0.6), (0.35, 0.78), (0.65, 0.78))
LANDMARK_JITTER = 0.03
# Faces span the sizes the default pyramid searches, over a 4x range.
MIN_FACE_SIZE = int(math.ceil(CascadeConfig().min_face))
MAX_FACE_SIZE = 4 * MIN_FACE_SIZE
MAX_FACES = 3
MAX_DISTRACTORS = 4
TEMPLATE_BACKGROUND = 95.0

ImageSize = Union[int, Tuple[int, int]]


@dataclass(frozen=True)
class FaceLayout:
    """What was actually painted for one face."""

    box: Box
    dot_centers: Landmarks
    dot_radius: float
    skin: Tuple[float, float, float]


@dataclass
class ToyImage:
    annotated: AnnotatedImage
    faces: List[FaceLayout]


def _size_hw(image_size: ImageSize) -> Tuple[int, int]:
    if isinstance(image_size, int):
        return image_size, image_size
    h, w = image_size
    return int(h), int(w)


def _pixel_grid(h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w]
    return xs + 0.5, ys + 0.5


def _draw_disc(canvas: np.ndarray, center: Tuple[float, float], radius: float, color) -> None:
    xs, ys = _pixel_grid(*canvas.shape[1:])
    mask = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius ** 2
    canvas[:, mask] = np.asarray(color, dtype=canvas.dtype)[:, None]


def _draw_ellipse(canvas: np.ndarray, box: Box, color) -> None:
    xs, ys = _pixel_grid(*canvas.shape[1:])
    cx, cy = box.center
    ax, ay = box.width / 2.0, box.height / 2.0
    mask = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 <= 1.0
    canvas[:, mask] = np.asarray(color, dtype=canvas.dtype)[:, None]


def _draw_rectangle(canvas: np.ndarray, box: Box, color) -> None:
    x1, y1, x2, y2 = (int(round(v)) for v in box.coords())
    canvas[:, y1:y2, x1:x2] = np.asarray(color, dtype=canvas.dtype)[:, None, None]


def draw_face(
    canvas: np.ndarray,
    box: Box,
    skin,
    dot_color=(25.0, 20.0, 20.0),
    jitter: Optional[np.ndarray] = None,
) -> FaceLayout:
    """Paint one face into `canvas` (3×H×W float) and report the dot centers used."""
    _draw_ellipse(canvas, box, skin)
    radius = max(1.0, 0.07 * box.width)
    offsets = np.zeros((5, 2)) if jitter is None else np.asarray(jitter, dtype=np.float64)
    centers = []
    for (fx, fy), (dx, dy) in zip(LANDMARK_LAYOUT, offsets):
        center = (box.x1 + (fx + dx) * box.width, box.y1 + (fy + dy) * box.height)
        _draw_disc(canvas, center, radius, dot_color)
        centers.append((float(center[0]), float(center[1])))
    return FaceLayout(box=box, dot_centers=tuple(centers), dot_radius=radius, skin=tuple(float(v) for v in skin))


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    base = rng.uniform(50.0, 140.0, size=3)
    ch, cw = h // 8 + 2, w // 8 + 2
    coarse = rng.uniform(-30.0, 30.0, size=(3, ch, cw)).astype(np.float32)
    texture = resample(coarse, Box(0.0, 0.0, float(cw), float(ch)), h, w)
    noise = rng.normal(0.0, 6.0, size=(3, h, w))
    return base[:, None, None] + texture + noise


def _overlaps(box: Box, others: Sequence[Box], margin: float) -> bool:
    if not others:
        return False
    grown = Box(box.x1 - margin, box.y1 - margin, box.x2 + margin, box.y2 + margin)
    return bool(np.any(iou_to_many(grown, boxes_to_array(others)) > 0.0))


def _place_faces(rng: np.random.Generator, h: int, w: int) -> List[Box]:
    largest = min(MAX_FACE_SIZE, min(h, w) - 2)
    if largest < MIN_FACE_SIZE:
        return []
    boxes: List[Box] = []
    wanted = int(rng.integers(0, MAX_FACES + 1))
    for _ in range(wanted * 30):
        if len(boxes) >= wanted:
            break
        fw = int(round(math.exp(rng.uniform(math.log(MIN_FACE_SIZE), math.log(largest)))))
        fh = min(int(round(fw * rng.uniform(1.0, 1.15))), h - 1)
        x = int(rng.integers(0, w - fw + 1))
        y = int(rng.integers(0, h - fh + 1))
        box = Box(float(x), float(y), float(x + fw), float(y + fh))
        if not _overlaps(box, boxes, margin=2.0):
            boxes.append(box)
    return boxes


def _draw_distractors(canvas: np.ndarray, rng: np.random.Generator, faces: Sequence[Box]) -> None:
    _, h, w = canvas.shape
    for _ in range(int(rng.integers(0, MAX_DISTRACTORS + 1))):
        size = float(rng.uniform(6.0, max(7.0, min(h, w) / 3.0)))
        x = float(rng.uniform(0.0, max(0.0, w - size)))
        y = float(rng.uniform(0.0, max(0.0, h - size)))
        shape = Box(x, y, x + size, y + size * float(rng.uniform(0.5, 1.5)))
        if _overlaps(shape, faces, margin=3.0):
            continue
        color = rng.uniform(0.0, 255.0, size=3)
        if rng.random() < 0.5:
            _draw_rectangle(canvas, shape, color)
        else:
            _draw_disc(canvas, shape.center, size / 2.0, color)


def render_toy_image(index: int, image_size: ImageSize, seed: int) -> ToyImage:
    """One corpus image with the layout of every painted face; seeded by (seed, index)."""
    h, w = _size_hw(image_size)
    rng = np.random.default_rng((seed, index))
    canvas = _background(rng, h, w)
    faces = _place_faces(rng, h, w)
    _draw_distractors(canvas, rng, faces)
    layouts = []
    for box in faces:
        skin = rng.uniform(185.0, 240.0, size=3)
        jitter = rng.uniform(-LANDMARK_JITTER, LANDMARK_JITTER, size=(5, 2))
        layouts.append(draw_face(canvas, box, skin, jitter=jitter))
    image = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    annotated = AnnotatedImage(
        image=image,
        boxes=[f.box for f in layouts],
        landmarks=[f.dot_centers for f in layouts],
        name=f"toy_{index:05d}",
    )
    return ToyImage(annotated=annotated, faces=layouts)


def generate_toy_corpus(n_images: int, image_size: ImageSize = 96, seed: int = 0) -> List[AnnotatedImage]:
    if n_images < 1:
        raise ValueError(f"n_images must be at least 1, got {n_images}")
    h, w = _size_hw(image_size)
    if min(h, w) < MIN_FACE_SIZE + 2:
        raise ValueError(f"image size {w}×{h} cannot hold a {MIN_FACE_SIZE}-pixel face")
    corpus = [render_toy_image(i, (h, w), seed).annotated for i in range(n_images)]
    logger.info("Generated %d toy images (%d faces)", n_images, sum(len(a.boxes) for a in corpus))
    return corpus


def face_template(width: int, height: int) -> np.ndarray:
    """Grayscale rendering of the unjittered face on a flat background."""
    canvas = np.full((3, height, width), TEMPLATE_BACKGROUND, dtype=np.float64)
    draw_face(canvas, Box(0.0, 0.0, float(width), float(height)), (212.0, 212.0, 212.0))
    return canvas.mean(axis=0)


def _ncc_map(gray: np.ndarray, template: np.ndarray) -> np.ndarray:
    th, tw = template.shape
    windows = np.lib.stride_tricks.sliding_window_view(gray, (th, tw))
    t0 = template - template.mean()
    t0 /= np.linalg.norm(t0)
    n = th * tw
    sums = windows.sum(axis=(2, 3))
    squares = np.einsum("mnij,mnij->mn", windows, windows)
    spread = np.sqrt(np.maximum(squares - sums * sums / n, 0.0))
    dot = np.einsum("mnij,ij->mn", windows, t0)
    return np.where(spread > 1e-9, dot / np.maximum(spread, 1e-9), 0.0)


def matched_filter_detect(
    image: np.ndarray,
    sizes: Optional[Sequence[int]] = None,
    threshold: float = 0.5,
    per_size: int = 200,
    nms_threshold: float = 0.3,
) -> List[Box]:
    """
    Brute-force sliding-window normalized cross-correlation against the face
    template at every size; scores are mapped from [-1, 1] into [0, 1].
    """
    gray = image.astype(np.float64).mean(axis=0)
    h, w = gray.shape
    if sizes is None:
        sizes = template_sizes()
    candidates: List[Box] = []
    for size in sizes:
        th = int(round(size * 1.075))
        if size > w or th > h:
            continue
        scores = _ncc_map(gray, face_template(size, th))
        flat = scores.ravel()
        top = np.argsort(-flat, kind="stable")[:per_size]
        for k in top[flat[top] >= threshold]:
            y, x = divmod(int(k), scores.shape[1])
            score = float(np.clip((flat[k] + 1.0) / 2.0, 0.0, 1.0))
            candidates.append(Box(float(x), float(y), float(x + size), float(y + th), score=score))
    return nms(candidates, nms_threshold)


def template_sizes(smallest: int = MIN_FACE_SIZE, largest: int = MAX_FACE_SIZE, factor: float = 1.12) -> List[int]:
    sizes, s = [], float(smallest)
    while s <= largest + 0.5:
        sizes.append(int(round(s)))
        s *= factor
    return sorted(set(sizes))


def matched_filter_recall(corpus: Sequence[AnnotatedImage], iou_match: float = 0.5, **kwargs) -> float:
    """Fraction of ground-truth faces found by the matched filter (greedy IoU matching)."""
    total = found = 0
    for item in corpus:
        boxes = matched_filter_detect(item.image, **kwargs)
        matched, _ = match_detections(boxes, item.boxes, iou_match)
        total += len(item.boxes)
        found += int(sum(matched))
    if total == 0:
        return 1.0
    recall = found / total
    logger.info("Matched-filter recall %.4f (%d/%d faces)", recall, found, total)
    return recall
