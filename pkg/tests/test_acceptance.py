"""
Toy-scale quality targets of the full pipeline, trained with default settings.
Every test here trains networks for minutes; all are marked slow.
"""
import json
import math

import pytest

from backend.cli import main
from backend.infrastructure.reports import load_curves

pytestmark = pytest.mark.slow

CORPUS_IMAGES = 400
PNET_EPOCHS = 20


def _final(curves, split, task):
    return [r.value for r in curves if r.split == split and r.task == task][-1]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "corpus"
    assert main(["synth", "--n", str(CORPUS_IMAGES), "--seed", "0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus):
    weights = corpus.parent / "weights"
    for stage in ("pnet", "rnet", "onet"):
        argv = ["train", "--stage", stage, "--corpus", str(corpus), "--out", str(weights / f"{stage}.bin")]
        if stage == "pnet":
            argv += ["--epochs", str(PNET_EPOCHS)]
        assert main(argv) == 0
    report = corpus.parent / "report.json"
    assert main(["eval", "--weights-dir", str(weights), "--corpus", str(corpus), "--report", str(report)]) == 0
    return weights, json.loads(report.read_text(encoding="utf-8"))


def test_default_training_never_diverges(trained):
    weights, _ = trained
    for stage in ("pnet", "rnet", "onet"):
        curves = load_curves(weights / f"{stage}.csv")
        assert curves
        assert all(math.isfinite(r.value) for r in curves)


def test_pnet_validation_accuracy(trained):
    weights, _ = trained
    assert _final(load_curves(weights / "pnet.csv"), "val", "accuracy") > 0.95


def test_detection_precision_at_high_recall(trained):
    _, report = trained
    assert report["precision_at_recall_0.9"] >= 0.9


def test_landmark_error(trained):
    _, report = trained
    assert report["landmarks"]["faces"] > 0
    assert report["landmarks"]["mean"] < 0.05


@pytest.mark.parametrize("which", ["ohem", "joint"])
def test_ablation_direction_holds(corpus, which):
    out = corpus.parent / f"ablation_{which}"
    assert main(["ablate", "--which", which, "--corpus", str(corpus), "--out", str(out), "--epochs", "20"]) == 0
    summary = json.loads((out / f"{which}_summary.json").read_text(encoding="utf-8"))
    assert summary["holds"] is True, summary["variants"]
