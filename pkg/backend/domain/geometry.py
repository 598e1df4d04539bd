"""
Box arithmetic shared by harvesting, training targets and the cascade.

Coordinates are continuous: pixel (i, j) covers [j, j+1) × [i, i+1).
"""
import math
from dataclasses import replace
from typing import List, Sequence, Tuple

import numpy as np

from backend.domain.errors import BoxOutsideImageError, InvalidBoxError
from backend.domain.models import Box, Landmarks

PIXEL_MEAN = 127.5
PIXEL_SCALE = 128.0


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_to_many(box: Box, others: np.ndarray) -> np.ndarray:
    """IoU of one box against an (n, 4) array of x1, y1, x2, y2 rows."""
    if len(others) == 0:
        return np.zeros(0)
    iw = np.minimum(box.x2, others[:, 2]) - np.maximum(box.x1, others[:, 0])
    ih = np.minimum(box.y2, others[:, 3]) - np.maximum(box.y1, others[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    return inter / (box.area + areas - inter)


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    return np.array([b.coords() for b in boxes], dtype=np.float64).reshape(-1, 4)


def nms(boxes: Sequence[Box], iou_threshold: float) -> List[Box]:
    """
    Greedy hard suppression. Keeps the highest-scoring box, drops every
    remaining box whose IoU with it exceeds the threshold, repeats.
    Output is in descending score order; equal scores keep input order.
    """
    if not boxes:
        return []
    if any(b.score is None for b in boxes):
        raise InvalidBoxError("nms needs scored boxes")
    coords = boxes_to_array(boxes)
    scores = np.array([b.score for b in boxes], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    keep: List[int] = []
    while order.size > 0:
        i = int(order[0])
        keep.append(i)
        rest = order[1:]
        overlaps = iou_to_many(boxes[i], coords[rest])
        order = rest[overlaps <= iou_threshold]
    return [boxes[i] for i in keep]


def encode_box_target(candidate: Box, ground_truth: Box) -> np.ndarray:
    """Left-top offset normalized by candidate size, plus log size ratios."""
    wc, hc = candidate.width, candidate.height
    return np.array(
        [
            (ground_truth.x1 - candidate.x1) / wc,
            (ground_truth.y1 - candidate.y1) / hc,
            math.log(ground_truth.width / wc),
            math.log(ground_truth.height / hc),
        ],
        dtype=np.float64,
    )


def apply_box_regression(candidate: Box, t: Sequence[float]) -> Box:
    """
    Exact inverse of encode_box_target. Raises InvalidBoxError when the result
    has no usable extent (the caller drops the candidate).
    """
    wc, hc = candidate.width, candidate.height
    tx, ty, tw, th = (float(v) for v in t)
    x1 = candidate.x1 + tx * wc
    y1 = candidate.y1 + ty * hc
    with np.errstate(over="ignore"):
        w = wc * float(np.exp(tw))
        h = hc * float(np.exp(th))
    return replace(candidate, x1=x1, y1=y1, x2=x1 + w, y2=y1 + h)


def encode_landmark_target(crop: Box, points: Landmarks) -> np.ndarray:
    """Ten values: x0, y0, x1, y1, ... each relative to the crop's corner and size."""
    out = np.empty(10, dtype=np.float64)
    for k, (x, y) in enumerate(points):
        out[2 * k] = (x - crop.x1) / crop.width
        out[2 * k + 1] = (y - crop.y1) / crop.height
    return out


def decode_landmarks(crop: Box, t: Sequence[float]) -> Landmarks:
    t = [float(v) for v in t]
    return tuple(
        (crop.x1 + t[2 * k] * crop.width, crop.y1 + t[2 * k + 1] * crop.height) for k in range(5)
    )


def to_square(box: Box) -> Box:
    side = max(box.width, box.height)
    cx, cy = box.center
    return replace(box, x1=cx - side / 2.0, y1=cy - side / 2.0, x2=cx + side / 2.0, y2=cy + side / 2.0)


def normalize_pixels(values: np.ndarray) -> np.ndarray:
    return ((np.asarray(values, dtype=np.float32) - PIXEL_MEAN) / PIXEL_SCALE).astype(np.float32)


def _axis_samples(start: float, extent: float, count: int, limit: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Sample positions along one axis, returned as (lower index, upper index,
    upper weight, inside mask). Samples whose pixel-center position falls
    outside [-0.5, limit - 0.5] read as zero; inside ones are clamped to the
    valid index range so border pixels extend to the image edge.
    """
    pos = start + (np.arange(count) + 0.5) * (extent / count) - 0.5
    inside = (pos >= -0.5) & (pos <= limit - 0.5)
    pos = np.clip(pos, 0.0, limit - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, limit - 1)
    frac = pos - lo
    return lo, hi, frac, inside


def resample(image: np.ndarray, box: Box, out_h: int, out_w: int) -> np.ndarray:
    """
    Bilinear resample of the region `box` of a 3×H×W image to 3×out_h×out_w.
    Parts of the region outside the image come out as 0. Returns float32 raw
    pixel values (not normalized).
    """
    _, h, w = image.shape
    src = image.astype(np.float32)
    y0, y1, fy, in_y = _axis_samples(box.y1, box.height, out_h, h)
    x0, x1, fx, in_x = _axis_samples(box.x1, box.width, out_w, w)
    fy = fy.astype(np.float32)[:, None]
    fx = fx.astype(np.float32)[None, :]
    top = src[:, y0][:, :, x0] * (1 - fx) + src[:, y0][:, :, x1] * fx
    bottom = src[:, y1][:, :, x0] * (1 - fx) + src[:, y1][:, :, x1] * fx
    out = top * (1 - fy) + bottom * fy
    mask = (in_y[:, None] & in_x[None, :]).astype(np.float32)
    return out * mask


def crop_with_padding(image: np.ndarray, box: Box, out_size: int) -> np.ndarray:
    """
    Crop `box` from a 3×H×W uint8 image, zero-filling outside the image,
    bilinearly resize to out_size × out_size and normalize for network input.
    """
    _, h, w = image.shape
    if box.x2 <= 0 or box.y2 <= 0 or box.x1 >= w or box.y1 >= h:
        raise BoxOutsideImageError(f"box {box.coords()} lies outside the {w}×{h} image")
    return normalize_pixels(resample(image, box, out_size, out_size))
