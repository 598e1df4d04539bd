import numpy as np
import pytest

from backend.domain.config import CascadeConfig, HarvestConfig
from backend.domain.errors import UntrainedNetworkError
from backend.domain.geometry import iou
from backend.domain.models import AnnotatedImage, Box, SampleCategory, SampleType
from backend.domain.services.harvesting import (
    build_stage_dataset,
    category_for_iou,
    classify_sample,
    counts_from_config,
    harvest_crops,
    harvest_hard_examples,
    random_crop_samples,
    sample_for_crop,
)

SMALL_HARVEST = HarvestConfig(negatives=6, positives=3, parts=3, landmarks=3)


@pytest.mark.parametrize(
    "m, category",
    [
        (0.0, SampleCategory.NEGATIVE),
        (0.29, SampleCategory.NEGATIVE),
        (0.3, SampleCategory.DISCARD),
        (0.39, SampleCategory.DISCARD),
        (0.4, SampleCategory.PART),
        (0.65, SampleCategory.PART),
        (0.66, SampleCategory.POSITIVE),
        (1.0, SampleCategory.POSITIVE),
    ],
)
def test_iou_bands(m, category):
    assert category_for_iou(m) is category


def test_classify_sample_uses_best_overlap():
    faces = [Box(0, 0, 10, 10), Box(50, 50, 60, 60)]
    assert classify_sample(Box(50, 50, 60, 60), faces) is SampleCategory.POSITIVE
    assert classify_sample(Box(20, 20, 30, 30), faces) is SampleCategory.NEGATIVE
    assert classify_sample(Box(0, 0, 10, 10), []) is SampleCategory.NEGATIVE


def _same_samples(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.sample_type is y.sample_type
        np.testing.assert_array_equal(x.patch, y.patch)


def test_harvest_crops_is_seeded(toy_corpus):
    counts = counts_from_config(SMALL_HARVEST)
    first = harvest_crops(toy_corpus[0], counts, seed=11)
    _same_samples(first, harvest_crops(toy_corpus[0], counts, seed=11))
    assert all(s.patch.shape == (3, 12, 12) for s in first)


def test_harvest_crops_respects_quotas(toy_corpus):
    counts = counts_from_config(SMALL_HARVEST)
    for index, item in enumerate(toy_corpus):
        samples = harvest_crops(item, counts, seed=index, out_size=24)
        per_type = {t: sum(s.sample_type is t for s in samples) for t in SampleType}
        for t, quota in counts.items():
            assert per_type[t] <= quota
        for s in samples:
            assert s.patch.shape == (3, 24, 24)
            if s.sample_type is SampleType.POSITIVE:
                assert s.y_det == 1 and np.all(np.abs(s.y_box[:2]) < 1.0)
            if s.sample_type is SampleType.LANDMARK:
                assert np.all((s.y_landmark >= 0.0) & (s.y_landmark <= 1.0))


def test_image_without_faces_gives_negatives_only(rng):
    blank = AnnotatedImage(image=rng.integers(0, 256, size=(3, 48, 48), dtype=np.uint8), name="blank")
    samples = harvest_crops(blank, counts_from_config(SMALL_HARVEST), seed=0)
    assert len(samples) == SMALL_HARVEST.negatives
    assert {s.sample_type for s in samples} == {SampleType.NEGATIVE}


def test_negative_quotas_are_rejected(toy_corpus):
    with pytest.raises(ValueError):
        harvest_crops(toy_corpus[0], {SampleType.NEGATIVE: -1}, seed=0)


def test_threaded_harvest_matches_serial(toy_corpus):
    serial = random_crop_samples(toy_corpus, 12, SMALL_HARVEST, seed=5)
    threaded = random_crop_samples(toy_corpus, 12, SMALL_HARVEST, seed=5, max_workers=3)
    _same_samples(serial, threaded)


def test_pnet_dataset_fills_every_pool(toy_corpus):
    dataset = build_stage_dataset(toy_corpus, "pnet", SMALL_HARVEST, seed=0)
    assert dataset.input_size == 12
    assert all(count > 0 for count in dataset.counts().values())


def test_later_stages_need_a_prefix(toy_corpus):
    with pytest.raises(ValueError):
        build_stage_dataset(toy_corpus, "rnet", SMALL_HARVEST, seed=0)


def test_hard_examples_need_trained_prefix(toy_corpus, untrained_nets):
    with pytest.raises(UntrainedNetworkError):
        harvest_hard_examples(2, untrained_nets, toy_corpus, CascadeConfig(), SMALL_HARVEST, seed=0)


def test_hard_examples_reject_stage_one(toy_corpus, ready_nets):
    with pytest.raises(ValueError):
        harvest_hard_examples(1, ready_nets, toy_corpus, CascadeConfig(), SMALL_HARVEST, seed=0)


@pytest.mark.parametrize("stage, size", [(2, 24), (3, 48)])
def test_hard_examples_match_next_stage_input(toy_corpus, ready_nets, stage, size):
    permissive = CascadeConfig(t1=0.0, t2=0.0)
    samples = harvest_hard_examples(stage, ready_nets, toy_corpus[:2], permissive, SMALL_HARVEST, seed=0)
    assert samples
    assert all(s.patch.shape == (3, size, size) for s in samples)
    negatives = [s for s in samples if s.sample_type is SampleType.NEGATIVE]
    assert len(negatives) <= 2 * SMALL_HARVEST.max_negatives_per_image


def test_rnet_dataset_is_topped_up_when_prefix_finds_nothing(toy_corpus, ready_nets, caplog):
    # t1 = 0.6 rejects every near-0.5 score of a freshly initialized P-Net
    dataset = build_stage_dataset(toy_corpus, "rnet", SMALL_HARVEST, seed=0, prefix=ready_nets)
    assert dataset.input_size == 24
    counts = dataset.counts()
    assert counts[SampleType.NEGATIVE] > 0 and counts[SampleType.LANDMARK] > 0
    assert "topping up with random crops" in caplog.text


def _best_iou(crop, faces):
    return max((iou(crop, face) for face in faces), default=0.0)


def _assert_in_band(sample, faces):
    m = _best_iou(sample.crop, faces)
    if sample.sample_type is SampleType.NEGATIVE:
        assert m < 0.3
    elif sample.sample_type is SampleType.PART:
        assert 0.4 <= m <= 0.65
    else:
        assert m > 0.65


def test_random_crops_fall_in_their_iou_band(toy_corpus):
    counts = counts_from_config(HarvestConfig())
    seen = set()
    for index, item in enumerate(toy_corpus):
        for sample in harvest_crops(item, counts, seed=index):
            assert sample.crop is not None
            _assert_in_band(sample, item.boxes)
            seen.add(sample.sample_type)
            if sample.sample_type is SampleType.LANDMARK:
                points = item.landmarks[int(np.argmax([iou(sample.crop, b) for b in item.boxes]))]
                assert all(sample.crop.x1 <= x <= sample.crop.x2 and sample.crop.y1 <= y <= sample.crop.y2
                           for x, y in points)
    assert seen == set(SampleType)


@pytest.mark.parametrize("stage", [2, 3])
def test_hard_examples_fall_in_their_iou_band(toy_corpus, ready_nets, stage):
    permissive = CascadeConfig(t1=0.0, t2=0.0)
    total = 0
    for item in toy_corpus[:2]:
        samples = harvest_hard_examples(stage, ready_nets, [item], permissive, SMALL_HARVEST, seed=0)
        total += len(samples)
        for sample in samples:
            _assert_in_band(sample, item.boxes)
    assert total > 0


def test_ground_truth_crop_is_a_positive_with_zero_box_target(toy_corpus):
    item = next(a for a in toy_corpus if a.boxes)
    face = item.boxes[0]
    sample = sample_for_crop(item, face, 24)
    assert sample.sample_type is SampleType.POSITIVE
    assert sample.y_det == 1
    np.testing.assert_allclose(sample.y_box, 0.0, atol=1e-12)
    assert sample.crop == face
    assert sample.patch.shape == (3, 24, 24)


def test_discard_band_crop_gives_no_sample():
    item = AnnotatedImage(
        image=np.zeros((3, 40, 40), dtype=np.uint8), boxes=[Box(0, 0, 20, 20)], landmarks=[None], name="one"
    )
    # 200 / 600: a 20x20 crop shifted half a face to the right
    assert sample_for_crop(item, Box(10, 0, 30, 20), 12) is None
    assert sample_for_crop(item, Box(20, 20, 40, 40), 12).sample_type is SampleType.NEGATIVE
