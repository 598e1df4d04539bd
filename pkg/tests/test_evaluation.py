import numpy as np
import pytest

from backend.domain.config import Settings
from backend.domain.geometry import iou
from backend.domain.models import LANDMARK_NAMES, Box, Detection
from backend.domain.services.evaluation import (
    bench_forward,
    central_crop,
    detection_records,
    eval_detection,
    eval_nme,
    eval_report,
    fallback_landmarks,
    greedy_assignment,
    landmark_pairs,
    match_detections,
)

POINTS = ((10.0, 10.0), (20.0, 10.0), (15.0, 15.0), (11.0, 20.0), (19.0, 20.0))


def scored(box, score):
    return Box(box.x1, box.y1, box.x2, box.y2, score=score)


def test_perfect_detections():
    gts = [[Box(0, 0, 10, 10), Box(20, 20, 30, 30)], [Box(5, 5, 15, 15)]]
    dets = [[scored(b, 0.9) for b in image] for image in gts]
    result = eval_detection(dets, gts)
    assert len(result.table) == 1
    assert result.table[0].precision == 1.0 and result.table[0].recall == 1.0
    assert result.average_precision == pytest.approx(1.0)
    assert result.precision_at_recall(0.9) == 1.0


def test_no_detections():
    result = eval_detection([[], []], [[Box(0, 0, 10, 10)], []])
    assert result.table == []
    assert result.average_precision == 0.0
    assert result.precision_at_recall(0.1) == 0.0
    assert result.n_ground_truth == 1


def test_false_positive_below_the_match():
    gt = [[Box(0, 0, 10, 10)]]
    dets = [[scored(gt[0][0], 0.9), Box(50, 50, 60, 60, score=0.8)]]
    result = eval_detection(dets, gt)
    assert [(p.threshold, p.precision, p.recall) for p in result.table] == [(0.9, 1.0, 1.0), (0.8, 0.5, 1.0)]
    assert result.average_precision == pytest.approx(1.0)


def test_false_positive_above_the_match():
    gt = [[Box(0, 0, 10, 10)]]
    dets = [[scored(gt[0][0], 0.8), Box(50, 50, 60, 60, score=0.9)]]
    result = eval_detection(dets, gt)
    assert [(p.precision, p.recall) for p in result.table] == [(0.0, 0.0), (0.5, 1.0)]
    assert result.average_precision == pytest.approx(0.5)


def test_duplicate_detection_counts_once():
    gt = [Box(0, 0, 10, 10)]
    dets = [Box(0, 0, 10, 10, score=0.9), Box(0, 0, 10, 11, score=0.8)]
    assert match_detections(dets, gt) == ([True], [True, False])


def test_equal_scores_share_one_operating_point():
    gt = [[Box(0, 0, 10, 10), Box(20, 0, 30, 10)]]
    dets = [[scored(gt[0][0], 0.7), Box(50, 50, 60, 60, score=0.7)]]
    result = eval_detection(dets, gt)
    assert len(result.table) == 1
    assert result.table[0].precision == 0.5 and result.table[0].recall == 0.5


def test_mismatched_lengths():
    with pytest.raises(ValueError):
        eval_detection([[]], [[], []])


def _reference_assignment(dets, gts, threshold):
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken, assignment = set(), {}
    for i in order:
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            if g in taken:
                continue
            overlap = iou(dets[i], gt)
            if overlap > best_iou:
                best, best_iou = g, overlap
        if best is not None and best_iou >= threshold:
            taken.add(best)
            assignment[best] = i
    return assignment


def test_greedy_assignment_matches_reference(make_boxes):
    rng = np.random.default_rng(17)
    for _ in range(300):
        gts = make_boxes(rng, int(rng.integers(0, 6)), extent=40.0, scored=False)
        dets = make_boxes(rng, int(rng.integers(0, 8)), extent=40.0)
        assert greedy_assignment(dets, gts, 0.3) == _reference_assignment(dets, gts, 0.3)


def test_nme_identities():
    assert eval_nme([POINTS], [POINTS]).mean == 0.0
    shifted = tuple((x + 10.0, y) for x, y in POINTS)
    result = eval_nme([shifted], [POINTS])
    assert result.mean == pytest.approx(1.0)
    assert set(result.per_landmark) == set(LANDMARK_NAMES)
    assert all(v == pytest.approx(1.0) for v in result.per_landmark.values())
    assert result.failures == 1


def test_nme_excludes_faces_with_coincident_eyes():
    degenerate = ((5.0, 5.0), (5.0, 5.0), (6.0, 8.0), (4.0, 9.0), (6.0, 9.0))
    result = eval_nme([degenerate, POINTS], [degenerate, POINTS])
    assert result.excluded == 1
    assert len(result.per_face) == 1
    assert result.as_dict()["faces"] == 1


def test_nme_failures_use_threshold():
    near = tuple((x + 0.5, y) for x, y in POINTS)
    result = eval_nme([near, POINTS], [POINTS, POINTS])
    assert result.per_face == pytest.approx([0.05, 0.0])
    assert result.failures == 0
    assert eval_nme([near], [POINTS], failure_threshold=0.01).failures == 1


def test_central_crop():
    assert central_crop(40, 100).coords() == (30.0, 0.0, 70.0, 40.0)
    assert central_crop(60, 60).coords() == (0.0, 0.0, 60.0, 60.0)


def test_landmark_pairs_use_matches_then_fallback(toy_corpus, ready_nets):
    item = next(a for a in toy_corpus if a.boxes)
    hits = [Detection(box=scored(b, 0.9), landmarks=lm) for b, lm in zip(item.boxes, item.landmarks)]
    predicted, truth, fallbacks = landmark_pairs([item], [hits], ready_nets.onet)
    assert fallbacks == 0
    assert predicted == truth == list(item.landmarks)

    predicted, truth, fallbacks = landmark_pairs([item], [[]], ready_nets.onet)
    assert fallbacks == len(item.boxes)
    expected = fallback_landmarks(item.image, ready_nets.onet)
    assert predicted == [expected] * len(item.boxes)


def test_detection_records():
    det = Detection(box=Box(1.0, 2.0, 3.0, 4.0, score=0.75, landmarks=POINTS), landmarks=POINTS)
    assert detection_records([det]) == [
        {"box": [1.0, 2.0, 3.0, 4.0], "score": 0.75, "landmarks": [list(p) for p in POINTS]}
    ]


def test_bench_forward(ready_nets):
    result = bench_forward(ready_nets.pnet, n=3, warmup=1, repeats=3)
    assert result.kind == "pnet" and result.n == 3
    assert len(result.runs) == 3
    assert result.seconds == sorted(result.runs)[1]
    assert "numpy" in result.hardware
    with pytest.raises(ValueError):
        bench_forward(ready_nets.pnet, n=0)


@pytest.mark.slow
def test_bench_ordering(ready_nets):
    times = [bench_forward(net, n=300).seconds for net in (ready_nets.pnet, ready_nets.rnet, ready_nets.onet)]
    assert times[0] < times[1] < times[2]


def test_eval_report_is_reproducible(toy_corpus, ready_nets):
    settings = Settings()
    report = eval_report(toy_corpus[:3], ready_nets, settings, seed=4, weights_checksum="abc")
    assert set(report) == {
        "config", "seed", "weights_checksum", "images", "detection", "precision_at_recall_0.9", "landmarks",
    }
    assert report["seed"] == 4 and report["weights_checksum"] == "abc" and report["images"] == 3
    assert report["config"]["min_face"] == 20.0
    assert report["landmarks"]["fallbacks"] == sum(len(a.boxes) for a in toy_corpus[:3])
    again = eval_report(toy_corpus[:3], ready_nets, settings, seed=4, weights_checksum="abc", max_workers=2)
    assert again == report


def test_eval_report_includes_timing(toy_corpus, ready_nets):
    timing = [bench_forward(ready_nets.pnet, n=1, warmup=0, repeats=1)]
    report = eval_report(toy_corpus[:1], ready_nets, Settings(), seed=0, weights_checksum="x", timing=timing)
    assert report["timing"]["pnet"]["n"] == 1


def test_nme_matches_rayleigh_expectation():
    rng = np.random.default_rng(31)
    sigma, eye_distance = 0.8, 10.0
    truth = [POINTS] * 1000
    predicted = [tuple((x + dx, y + dy) for (x, y), (dx, dy) in zip(POINTS, rng.normal(0, sigma, size=(5, 2))))
                 for _ in truth]
    expected = sigma * np.sqrt(np.pi / 2.0) / eye_distance
    assert eval_nme(predicted, truth).mean == pytest.approx(expected, rel=0.05)


def test_recall_never_drops_as_threshold_falls(make_boxes):
    rng = np.random.default_rng(32)
    gts = [make_boxes(rng, 4, extent=60.0, scored=False) for _ in range(10)]
    dets = []
    for image_gts in gts:
        jittered = [Box(b.x1 + 1, b.y1 - 1, b.x2 + 2, b.y2, score=float(rng.uniform())) for b in image_gts[:3]]
        dets.append(jittered + make_boxes(rng, 3, extent=60.0))
    table = eval_detection(dets, gts).table
    recalls = [p.recall for p in table]
    thresholds = [p.threshold for p in table]
    assert recalls == sorted(recalls)
    assert thresholds == sorted(thresholds, reverse=True)
    assert all(0.0 <= p.precision <= 1.0 for p in table)
