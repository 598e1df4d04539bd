"""
Detection and landmark evaluation on annotated images, forward-pass timing,
and the combined evaluation report.
"""
import logging
import math
import os
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from backend.domain.config import Settings, flat_config
from backend.domain.geometry import boxes_to_array, crop_with_padding, decode_landmarks, iou_to_many
from backend.domain.models import LANDMARK_NAMES, AnnotatedImage, Box, Detection, Landmarks
from backend.domain.nn.networks import Network, forward_patch
from backend.domain.services.cascade import CascadeNets, detect

logger = logging.getLogger(__name__)

IOU_MATCH = 0.5
NME_FAILURE = 0.1
BENCH_WARMUP = 10
BENCH_REPEATS = 5

Scored = Union[Box, Detection]


def _as_box(item: Scored) -> Box:
    return item.box if isinstance(item, Detection) else item


def _score(item: Scored) -> float:
    score = _as_box(item).score
    return 0.0 if score is None else float(score)


def greedy_assignment(
    detections: Sequence[Scored], ground_truth: Sequence[Box], iou_match: float = IOU_MATCH
) -> Dict[int, int]:
    """
    Greedy one-to-one matching in descending score order: each detection takes
    the still-unmatched ground truth it overlaps most, if that IoU ≥ iou_match.
    Returns ground-truth index → detection index.
    """
    assignment: Dict[int, int] = {}
    if not detections or not ground_truth:
        return assignment
    gt = boxes_to_array(ground_truth)
    taken = np.zeros(len(ground_truth), dtype=bool)
    order = sorted(range(len(detections)), key=lambda i: -_score(detections[i]))
    for i in order:
        overlaps = iou_to_many(_as_box(detections[i]), gt)
        overlaps[taken] = -1.0
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_match:
            taken[best] = True
            assignment[best] = i
    return assignment


def match_detections(
    detections: Sequence[Scored], ground_truth: Sequence[Box], iou_match: float = IOU_MATCH
) -> Tuple[List[bool], List[bool]]:
    """(ground truth matched flags, detection true-positive flags in input order)."""
    assignment = greedy_assignment(detections, ground_truth, iou_match)
    gt_matched = [g in assignment for g in range(len(ground_truth))]
    matched_dets = set(assignment.values())
    return gt_matched, [i in matched_dets for i in range(len(detections))]


@dataclass
class PRPoint:
    threshold: float
    precision: float
    recall: float
    true_positives: int
    false_positives: int


@dataclass
class DetectionEval:
    table: List[PRPoint]
    average_precision: float
    n_ground_truth: int
    n_detections: int

    def precision_at_recall(self, recall: float) -> float:
        """Best precision among operating points reaching `recall` (0 if none does)."""
        reached = [p.precision for p in self.table if p.recall >= recall]
        return max(reached) if reached else 0.0

    def as_dict(self) -> Dict[str, Any]:
        return {
            "average_precision": self.average_precision,
            "n_ground_truth": self.n_ground_truth,
            "n_detections": self.n_detections,
            "pr_table": [asdict(p) for p in self.table],
        }


def _average_precision(precisions: np.ndarray, recalls: np.ndarray) -> float:
    if precisions.size == 0:
        return 0.0
    r = np.concatenate([[0.0], recalls])
    p = np.concatenate([precisions, [0.0]])
    envelope = np.maximum.accumulate(p[::-1])[::-1][:-1]
    return float(np.sum((r[1:] - r[:-1]) * envelope))


def eval_detection(
    detections: Sequence[Sequence[Scored]],
    ground_truth: Sequence[Sequence[Box]],
    iou_match: float = IOU_MATCH,
) -> DetectionEval:
    """PR table over every distinct score threshold, plus all-point interpolated AP."""
    if len(detections) != len(ground_truth):
        raise ValueError(f"{len(detections)} detection lists for {len(ground_truth)} images")
    scores: List[float] = []
    hits: List[bool] = []
    n_gt = 0
    for dets, gts in zip(detections, ground_truth):
        _, tp = match_detections(dets, gts, iou_match)
        scores.extend(_score(d) for d in dets)
        hits.extend(tp)
        n_gt += len(gts)

    if not scores:
        return DetectionEval(table=[], average_precision=0.0, n_ground_truth=n_gt, n_detections=0)
    order = np.argsort(-np.asarray(scores), kind="stable")
    sorted_scores = np.asarray(scores)[order]
    tp = np.cumsum(np.asarray(hits)[order])
    fp = np.cumsum(~np.asarray(hits)[order])
    # One operating point per distinct threshold: the last index of each score run.
    last = np.nonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))[0]
    precisions = tp[last] / (tp[last] + fp[last])
    recalls = tp[last] / n_gt if n_gt else np.zeros(last.size)
    table = [
        PRPoint(float(sorted_scores[k]), float(p), float(r), int(tp[k]), int(fp[k]))
        for k, p, r in zip(last, precisions, recalls)
    ]
    return DetectionEval(
        table=table,
        average_precision=_average_precision(precisions, recalls),
        n_ground_truth=n_gt,
        n_detections=len(scores),
    )


@dataclass
class NmeResult:
    mean: float
    per_landmark: Dict[str, float]
    per_face: List[float]
    excluded: int
    failures: int

    def as_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "per_landmark": self.per_landmark,
            "faces": len(self.per_face),
            "excluded": self.excluded,
            "failures": self.failures,
        }


def inter_ocular(points: Landmarks) -> float:
    (lx, ly), (rx, ry) = points[0], points[1]
    return math.hypot(rx - lx, ry - ly)


def eval_nme(
    predicted: Sequence[Landmarks],
    ground_truth: Sequence[Landmarks],
    failure_threshold: float = NME_FAILURE,
) -> NmeResult:
    """
    Per face: mean point-to-point error over the five points divided by the
    ground-truth eye distance. Faces whose eyes coincide are excluded and counted.
    """
    if len(predicted) != len(ground_truth):
        raise ValueError(f"{len(predicted)} predictions for {len(ground_truth)} faces")
    per_face: List[float] = []
    per_point: List[np.ndarray] = []
    excluded = 0
    for pred, gt in zip(predicted, ground_truth):
        distance = inter_ocular(gt)
        if distance <= 0.0:
            excluded += 1
            continue
        errors = np.linalg.norm(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64), axis=1)
        normalized = errors / distance
        per_point.append(normalized)
        per_face.append(float(normalized.mean()))
    if per_face:
        stacked = np.stack(per_point)
        per_landmark = {name: float(v) for name, v in zip(LANDMARK_NAMES, stacked.mean(axis=0))}
        mean = float(np.mean(per_face))
    else:
        per_landmark = {name: 0.0 for name in LANDMARK_NAMES}
        mean = 0.0
    failures = sum(1 for v in per_face if v > failure_threshold)
    return NmeResult(mean=mean, per_landmark=per_landmark, per_face=per_face, excluded=excluded, failures=failures)


def central_crop(height: int, width: int) -> Box:
    """Largest square centered in the image."""
    side = float(min(height, width))
    x1 = (width - side) / 2.0
    y1 = (height - side) / 2.0
    return Box(x1, y1, x1 + side, y1 + side)


def fallback_landmarks(image: np.ndarray, onet: Network) -> Landmarks:
    """O-Net landmarks for the central square crop, used when no detection matches a face."""
    _, h, w = image.shape
    crop = central_crop(h, w)
    _, _, landmark = forward_patch(onet, crop_with_padding(image, crop, onet.input_size))
    return decode_landmarks(crop, landmark)


def landmark_pairs(
    corpus: Sequence[AnnotatedImage],
    detections: Sequence[Sequence[Detection]],
    onet: Network,
    iou_match: float = IOU_MATCH,
) -> Tuple[List[Landmarks], List[Landmarks], int]:
    """(predicted, ground truth, fallback count) for every landmark-annotated face."""
    predicted: List[Landmarks] = []
    truth: List[Landmarks] = []
    fallbacks = 0
    for item, dets in zip(corpus, detections):
        assignment = greedy_assignment(dets, item.boxes, iou_match)
        for index, points in enumerate(item.landmarks):
            if points is None:
                continue
            det_index = assignment.get(index)
            if det_index is None:
                fallbacks += 1
                predicted.append(fallback_landmarks(item.image, onet))
            else:
                predicted.append(dets[det_index].landmarks)
            truth.append(points)
    return predicted, truth, fallbacks


@dataclass
class BenchResult:
    kind: str
    n: int
    seconds: float
    runs: List[float] = field(default_factory=list)
    hardware: str = ""

    def as_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "n": self.n, "seconds": self.seconds, "runs": self.runs, "hardware": self.hardware}


def hardware_descriptor() -> str:
    return (
        f"{platform.machine()} {platform.processor() or 'unknown-cpu'}; "
        f"{os.cpu_count()} cpus; {platform.system()} {platform.release()}; "
        f"python {platform.python_version()}; numpy {np.__version__}"
    )


def bench_forward(
    net: Network, n: int = 300, warmup: int = BENCH_WARMUP, repeats: int = BENCH_REPEATS, seed: int = 0
) -> BenchResult:
    """Median wall time of `repeats` runs of n single-patch forwards at the native input size."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    size = net.input_size
    patch = rng.uniform(-1.0, 1.0, size=(3, size, size)).astype(net.dtype)
    for _ in range(warmup):
        forward_patch(net, patch)
    runs = []
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(n):
            forward_patch(net, patch)
        runs.append(time.perf_counter() - start)
    seconds = statistics.median(runs)
    logger.info("%s: %d forwards in %.4fs (median of %d)", net.kind, n, seconds, repeats)
    return BenchResult(kind=net.kind, n=n, seconds=seconds, runs=runs, hardware=hardware_descriptor())


def detection_records(detections: Sequence[Detection]) -> List[Dict[str, Any]]:
    """JSON-ready detections: box, score and five [x, y] landmark points."""
    return [
        {
            "box": list(d.box.coords()),
            "score": d.score,
            "landmarks": [list(p) for p in d.landmarks],
        }
        for d in detections
    ]


def detect_corpus(
    corpus: Sequence[AnnotatedImage], nets: CascadeNets, settings: Settings, max_workers: int = 1
) -> List[List[Detection]]:
    """Cascade over every image; results keep corpus order for any worker count."""
    def run(item: AnnotatedImage) -> List[Detection]:
        return detect(item.image, nets, settings.cascade)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(run, corpus))
    return [run(item) for item in corpus]


def eval_report(
    corpus: Sequence[AnnotatedImage],
    nets: CascadeNets,
    settings: Settings,
    seed: int,
    weights_checksum: str,
    timing: Optional[Sequence[BenchResult]] = None,
    max_workers: int = 1,
) -> Dict[str, Any]:
    """
    Detection PR/AP and landmark NME over `corpus`, with the configuration,
    seed and weights checksum echoed. Everything except "timing" is a pure
    function of the inputs.
    """
    detections = detect_corpus(corpus, nets, settings, max_workers)
    det_eval = eval_detection(detections, [item.boxes for item in corpus])
    predicted, truth, fallbacks = landmark_pairs(corpus, detections, nets.onet)
    nme = eval_nme(predicted, truth)
    landmarks = nme.as_dict()
    landmarks["fallbacks"] = fallbacks
    report: Dict[str, Any] = {
        "config": flat_config(settings),
        "seed": seed,
        "weights_checksum": weights_checksum,
        "images": len(corpus),
        "detection": det_eval.as_dict(),
        "precision_at_recall_0.9": det_eval.precision_at_recall(0.9),
        "landmarks": landmarks,
    }
    if timing:
        report["timing"] = {r.kind: r.as_dict() for r in timing}
    logger.info(
        "Evaluated %d images: AP=%.4f, NME=%.4f (%d faces, %d fallbacks)",
        len(corpus), det_eval.average_precision, nme.mean, len(nme.per_face), fallbacks,
    )
    return report
