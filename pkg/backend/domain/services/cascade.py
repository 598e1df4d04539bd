"""
Three-stage inference: image pyramid and dense P-Net scan, R-Net refinement,
O-Net output with landmarks.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from backend.domain.config import CascadeConfig
from backend.domain.errors import BoxOutsideImageError, InvalidBoxError, UntrainedNetworkError
from backend.domain.geometry import (
    apply_box_regression,
    crop_with_padding,
    decode_landmarks,
    nms,
    normalize_pixels,
    resample,
    to_square,
)
from backend.domain.models import Box, Detection
from backend.domain.nn.networks import PNET_CELL, Network, forward_fcn_pnet, map_cell_to_box

logger = logging.getLogger(__name__)


@dataclass
class CascadeNets:
    pnet: Network
    rnet: Optional[Network] = None
    onet: Optional[Network] = None


def require_trained(net: Optional[Network], kind: str) -> Network:
    if net is None or not net.trained:
        raise UntrainedNetworkError(f"{kind} has not been trained or loaded")
    return net


def build_pyramid(height: int, width: int, config: CascadeConfig) -> List[float]:
    """
    Scales s0 = 12 / min_face, s_{k+1} = s_k · factor, stopping before the
    scaled short side drops below the 12-pixel window.
    """
    short = min(height, width)
    if short < config.min_face:
        return []
    scales = []
    scale = PNET_CELL / config.min_face
    while short * scale >= PNET_CELL:
        scales.append(scale)
        scale *= config.pyramid_factor
    return scales


def _score(p: float) -> float:
    return min(1.0, max(0.0, float(p)))


def _scale_candidates(image: np.ndarray, pnet: Network, scale: float, config: CascadeConfig) -> List[Box]:
    _, h, w = image.shape
    hs, ws = int(math.ceil(h * scale)), int(math.ceil(w * scale))
    if hs < PNET_CELL or ws < PNET_CELL:
        return []
    scaled = normalize_pixels(resample(image, Box(0.0, 0.0, float(w), float(h)), hs, ws))
    maps = forward_fcn_pnet(pnet, scaled)
    rows, cols = np.nonzero(maps.prob >= config.t1)
    boxes = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        cell = replace(map_cell_to_box(r, c, scale), score=_score(maps.prob[r, c]))
        reg = tuple(float(v) for v in maps.box[:, r, c])
        try:
            boxes.append(replace(apply_box_regression(cell, reg), regression=reg))
        except InvalidBoxError:
            logger.debug("Dropped cell (%d, %d) at scale %.4f: degenerate regression", r, c, scale)
    kept = nms(boxes, config.n1_intra)
    logger.debug("scale %.4f: %d cells above t1, %d after NMS", scale, len(boxes), len(kept))
    return kept


def stage1_propose(
    image: np.ndarray,
    pnet: Network,
    config: CascadeConfig,
    max_workers: int = 1,
) -> List[Box]:
    _, h, w = image.shape
    scales = build_pyramid(h, w, config)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_scale = list(pool.map(lambda s: _scale_candidates(image, pnet, s, config), scales))
    else:
        per_scale = [_scale_candidates(image, pnet, s, config) for s in scales]
    merged = nms([b for boxes in per_scale for b in boxes], config.n1_inter)
    return [to_square(b) for b in merged]


def _crop_batch(image: np.ndarray, boxes: Sequence[Box], size: int) -> Tuple[np.ndarray, List[Box]]:
    patches, kept = [], []
    for box in boxes:
        try:
            patches.append(crop_with_padding(image, box, size))
        except BoxOutsideImageError:
            continue
        kept.append(box)
    if not patches:
        return np.zeros((0, 3, size, size), dtype=np.float32), []
    return np.stack(patches), kept


def stage2_refine(image: np.ndarray, proposals: Sequence[Box], rnet: Network, config: CascadeConfig) -> List[Box]:
    patches, boxes = _crop_batch(image, proposals, rnet.input_size)
    if not boxes:
        return []
    out = rnet.forward(patches)
    refined = []
    for box, p, reg in zip(boxes, out.prob, out.box):
        if p < config.t2:
            continue
        try:
            refined.append(apply_box_regression(replace(box, score=_score(p)), reg))
        except InvalidBoxError:
            continue
    return [to_square(b) for b in nms(refined, config.n2)]


def stage3_output(image: np.ndarray, candidates: Sequence[Box], onet: Network, config: CascadeConfig) -> List[Detection]:
    patches, boxes = _crop_batch(image, candidates, onet.input_size)
    if not boxes:
        return []
    out = onet.forward(patches)
    calibrated = []
    for box, p, reg, lm in zip(boxes, out.prob, out.box, out.landmark):
        if p < config.t3:
            continue
        # Landmarks are relative to the crop the network saw, not the calibrated box.
        points = decode_landmarks(box, lm)
        try:
            calibrated.append(apply_box_regression(replace(box, score=_score(p), landmarks=points), reg))
        except InvalidBoxError:
            continue
    return [Detection(box=b, landmarks=b.landmarks) for b in nms(calibrated, config.n3)]


def detect(image: np.ndarray, nets: CascadeNets, config: CascadeConfig, max_workers: int = 1) -> List[Detection]:
    """Full cascade on a 3×H×W uint8 image; detections in descending score order."""
    pnet = require_trained(nets.pnet, "pnet")
    rnet = require_trained(nets.rnet, "rnet")
    onet = require_trained(nets.onet, "onet")
    proposals = stage1_propose(image, pnet, config, max_workers=max_workers)
    refined = stage2_refine(image, proposals, rnet, config)
    detections = stage3_output(image, refined, onet, config)
    logger.debug("cascade counts: stage1=%d stage2=%d stage3=%d", len(proposals), len(refined), len(detections))
    return detections
