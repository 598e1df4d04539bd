import math

import numpy as np
import pytest

from backend.domain.config import LossWeights, Settings
from backend.domain.errors import DivergenceError, EmptyPoolError, ShapeError
from backend.domain.models import SAMPLE_TYPES, SampleType, TrainingSample
from backend.domain.nn.networks import NetworkOutput, build_network
from backend.domain.services.harvesting import build_stage_dataset
from backend.domain.services.training import (
    PROB_EPS,
    Batch,
    StageDataset,
    batch_counts,
    box_loss,
    check_objective_gradients,
    compose_minibatch,
    compute_objective,
    dataset_summary,
    det_loss,
    ohem_select,
    total_loss,
    train_stage,
)


def make_sample(rng, sample_type, size=12):
    patch = rng.uniform(-1, 1, size=(3, size, size)).astype(np.float32)
    kwargs = {}
    if sample_type is SampleType.NEGATIVE:
        kwargs["y_det"] = 0
    if sample_type is SampleType.POSITIVE:
        kwargs["y_det"] = 1
    if sample_type in (SampleType.POSITIVE, SampleType.PART):
        kwargs["y_box"] = rng.uniform(-0.3, 0.3, size=4)
    if sample_type is SampleType.LANDMARK:
        kwargs["y_landmark"] = rng.uniform(0, 1, size=10)
    return TrainingSample(patch=patch, sample_type=sample_type, **kwargs)


def make_dataset(rng, per_type=6, size=12):
    samples = [make_sample(rng, t, size) for t in SAMPLE_TYPES for _ in range(per_type)]
    return StageDataset.from_samples(samples, size)


def fake_output(n, rng, prob=None):
    return NetworkOutput(
        prob=rng.uniform(0.05, 0.95, size=n) if prob is None else np.asarray(prob, dtype=np.float64),
        box=rng.normal(size=(n, 4)),
        landmark=rng.normal(size=(n, 10)),
    )


def test_det_loss_values():
    assert det_loss(0.5, 1) == pytest.approx(math.log(2.0))
    assert det_loss(0.25, 0) == pytest.approx(-math.log(0.75))
    assert det_loss(0.0, 1) == pytest.approx(-math.log(PROB_EPS))
    assert np.isfinite(det_loss(1.0, 0))


def test_box_loss_is_squared_distance():
    assert box_loss([1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]) == pytest.approx(6.0)


def test_ohem_select_keeps_largest_in_index_order():
    np.testing.assert_array_equal(ohem_select([0.1, 0.5, 0.5, 0.2, 0.9], 0.7), [1, 2, 3, 4])
    np.testing.assert_array_equal(ohem_select([1.0, 1.0, 1.0, 1.0], 0.5), [0, 1])
    np.testing.assert_array_equal(ohem_select([0.3, 0.1], 1.0), [0, 1])
    assert ohem_select([], 0.7).size == 0


@pytest.mark.parametrize("n", [1, 2, 7, 10, 33])
def test_ohem_select_count(n):
    losses = np.random.default_rng(n).uniform(size=n)
    assert len(ohem_select(losses, 0.7)) == math.ceil(0.7 * n)


def test_full_ratio_equals_plain_loss(rng):
    batch = make_dataset(rng).as_batch()
    output = fake_output(len(batch), rng)
    objective = compute_objective(batch, output, LossWeights(ohem_ratio=1.0))
    has_det = batch.betas[:, 0] == 1
    expected = det_loss(output.prob[has_det], batch.labels[has_det]).sum()
    assert objective.det == pytest.approx(expected)
    np.testing.assert_array_equal(objective.selected, np.flatnonzero(has_det))


def test_ohem_drops_easiest_det_terms(rng):
    batch = make_dataset(rng).as_batch()
    output = fake_output(len(batch), rng)
    mined = compute_objective(batch, output, LossWeights(ohem_ratio=0.5))
    plain = compute_objective(batch, output, LossWeights(ohem_ratio=1.0))
    assert len(mined.selected) == math.ceil(0.5 * len(plain.selected))
    assert mined.det < plain.det
    unselected = np.setdiff1d(plain.selected, mined.selected)
    assert np.all(mined.grad_prob[unselected] == 0.0)
    # box and landmark terms ignore mining
    assert mined.box == plain.box
    assert mined.landmark == plain.landmark


def test_negative_only_batch_has_no_box_or_landmark_gradient(rng):
    samples = [make_sample(rng, SampleType.NEGATIVE) for _ in range(5)]
    batch = Batch.from_samples(samples)
    objective = compute_objective(batch, fake_output(5, rng), LossWeights())
    assert not objective.grad_box.any()
    assert not objective.grad_landmark.any()
    assert objective.box == 0.0 and objective.landmark == 0.0
    assert objective.total == pytest.approx(objective.det)


def test_total_loss_weights_tasks(rng):
    batch = make_dataset(rng).as_batch()
    output = fake_output(len(batch), rng)
    weights = LossWeights(alpha_det=2.0, alpha_box=0.25, alpha_landmark=3.0, ohem_ratio=1.0)
    objective = compute_objective(batch, output, weights)
    assert objective.total == pytest.approx(2.0 * objective.det + 0.25 * objective.box + 3.0 * objective.landmark)


def test_total_loss_det_only_sums_the_mined_det_losses(rng):
    batch = make_dataset(rng, per_type=5).as_batch()
    output = fake_output(len(batch), rng)
    weights = LossWeights(alpha_det=1.0, alpha_box=0.0, alpha_landmark=0.0, ohem_ratio=0.7)
    has_det = np.flatnonzero(batch.betas[:, 0] == 1)
    losses = sorted(
        (-math.log(p) if y == 1 else -math.log(1.0 - p) for p, y in zip(output.prob[has_det], batch.labels[has_det])),
        reverse=True,
    )
    expected = sum(losses[: math.ceil(0.7 * len(losses))])
    assert total_loss(batch, output, weights) == pytest.approx(expected)


def test_batch_counts():
    assert batch_counts(64, (3, 1, 1, 2)) == (28, 9, 9, 18)
    assert batch_counts(7, (3, 1, 1, 2)) == (3, 1, 1, 2)
    assert batch_counts(10, (1, 0, 0, 0)) == (10, 0, 0, 0)
    for size in range(1, 100):
        assert sum(batch_counts(size, (3, 1, 1, 2))) == size


def test_compose_minibatch_follows_ratio(rng):
    dataset = make_dataset(rng)
    batch = compose_minibatch(dataset, 64, (3, 1, 1, 2), rng)
    assert len(batch) == 64
    betas = [tuple(b) for b in batch.betas]
    assert betas.count(SampleType.NEGATIVE.betas) == 28
    assert betas.count(SampleType.POSITIVE.betas) == 9
    assert betas.count(SampleType.PART.betas) == 9
    assert betas.count(SampleType.LANDMARK.betas) == 18


def test_compose_minibatch_empty_pool(rng):
    samples = [make_sample(rng, SampleType.NEGATIVE) for _ in range(3)]
    dataset = StageDataset.from_samples(samples, 12)
    with pytest.raises(EmptyPoolError) as info:
        compose_minibatch(dataset, 8, (3, 1, 1, 2), rng)
    assert info.value.pool == "positive"
    assert len(compose_minibatch(dataset, 8, (1, 0, 0, 0), rng)) == 8


def test_dataset_rejects_wrong_patch_size(rng):
    with pytest.raises(ShapeError):
        StageDataset.from_samples([make_sample(rng, SampleType.NEGATIVE, size=24)], 12)


def test_dataset_summary(rng):
    summary = dataset_summary(make_dataset(rng, per_type=2))
    assert summary == {"negative": 2, "positive": 2, "part": 2, "landmark": 2}


def test_sample_targets_must_match_type(rng):
    with pytest.raises(ValueError):
        TrainingSample(patch=np.zeros((3, 12, 12), np.float32), sample_type=SampleType.PART, y_det=1)


def _mixed_batch(rng, size):
    types = [SampleType.NEGATIVE, SampleType.NEGATIVE, SampleType.POSITIVE,
             SampleType.PART, SampleType.LANDMARK, SampleType.LANDMARK]
    return Batch.from_samples([make_sample(rng, t, size) for t in types])


@pytest.mark.parametrize("ratio", [1.0, 0.7])
def test_objective_gradients_pnet(ratio):
    rng = np.random.default_rng(21)
    net = build_network("pnet", seed=4, init_std=0.2, dtype=np.float64)
    weights = LossWeights.for_stage("pnet", ohem_ratio=ratio)
    assert check_objective_gradients(net, _mixed_batch(rng, 12), weights, max_entries=64) < 1e-5


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["rnet", "onet"])
def test_objective_gradients_larger_networks(kind):
    rng = np.random.default_rng(22)
    net = build_network(kind, seed=5, init_std=0.05, dtype=np.float64)
    batch = _mixed_batch(rng, net.input_size)
    assert check_objective_gradients(net, batch, LossWeights.for_stage(kind), max_entries=16) < 1e-5


def test_train_stage_records_curves(rng):
    dataset = make_dataset(rng)
    validation = make_dataset(np.random.default_rng(5), per_type=2)
    weights = LossWeights.for_stage("pnet", batch_size=8)
    net = build_network("pnet", seed=0)
    result = train_stage(net, dataset, weights, epochs=2, seed=0, validation=validation)
    assert net.trained
    assert [(r.epoch, r.split, r.task) for r in result.curves[:7]] == [
        (1, "train", "det"), (1, "train", "box"), (1, "train", "landmark"),
        (1, "val", "det"), (1, "val", "box"), (1, "val", "landmark"), (1, "val", "accuracy"),
    ]
    assert len(result.curves) == 14
    assert all(math.isfinite(r.value) for r in result.curves)
    assert 0.0 <= result.final("val", "accuracy") <= 1.0
    with pytest.raises(KeyError):
        result.final("test", "det")


def test_train_stage_is_deterministic():
    def run():
        dataset = make_dataset(np.random.default_rng(3))
        net = build_network("pnet", seed=1)
        result = train_stage(net, dataset, LossWeights.for_stage("pnet", batch_size=8), epochs=2, seed=9)
        return result.curves, net.parameters()["conv1.weight"].values.copy()

    (curves_a, w_a), (curves_b, w_b) = run(), run()
    assert curves_a == curves_b
    np.testing.assert_array_equal(w_a, w_b)


def test_train_stage_rejects_wrong_input_size(rng):
    with pytest.raises(ShapeError):
        train_stage(build_network("rnet"), make_dataset(rng), LossWeights(), epochs=1, seed=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_stage_detects_divergence(rng):
    weights = LossWeights.for_stage("pnet", batch_size=8, lr=1e30)
    with pytest.raises(DivergenceError) as info:
        train_stage(build_network("pnet"), make_dataset(rng, per_type=8), weights, epochs=3, seed=0)
    assert info.value.batch_index >= 1


def test_one_step_moves_parameters_by_at_most_lr_times_clip_norm(rng):
    # 8 samples at batch size 8: exactly one SGD step
    dataset = make_dataset(rng, per_type=2)
    net = build_network("pnet", seed=0, dtype=np.float64)
    before = {name: p.values.copy() for name, p in net.parameters().items()}
    weights = LossWeights.for_stage("pnet", batch_size=8, lr=0.01, clip_norm=1e-3)
    train_stage(net, dataset, weights, epochs=1, seed=0)
    moved = math.sqrt(sum(float(np.sum((p.values - before[name]) ** 2)) for name, p in net.parameters().items()))
    assert moved == pytest.approx(0.01 * 1e-3, rel=1e-6)


def test_step_does_not_grow_with_batch_size():
    def first_step(batch_size):
        rng = np.random.default_rng(21)
        dataset = make_dataset(rng, per_type=batch_size // 4)
        net = build_network("pnet", seed=0, dtype=np.float64)
        before = net.parameters()["face.weight"].values.copy()
        weights = LossWeights.for_stage("pnet", batch_size=batch_size, clip_norm=1e6)
        train_stage(net, dataset, weights, epochs=1, seed=0)
        return float(np.linalg.norm(net.parameters()["face.weight"].values - before))

    small, large = first_step(8), first_step(64)
    assert large < 3.0 * small


def test_default_settings_train_pnet_without_diverging(toy_corpus):
    settings = Settings()
    train_set = build_stage_dataset(toy_corpus, "pnet", settings.harvest, seed=0)
    val_set = build_stage_dataset(toy_corpus, "pnet", settings.harvest, seed=1)
    result = train_stage(
        build_network("pnet", seed=0), train_set, settings.loss_for("pnet"), epochs=3, seed=0, validation=val_set
    )
    assert {r.epoch for r in result.curves} == {1, 2, 3}
    assert all(math.isfinite(r.value) for r in result.curves)
