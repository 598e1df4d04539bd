import json

import pytest

from backend.cli import main
from backend.infrastructure.reports import load_curves


@pytest.mark.slow
def test_train_cascade_and_evaluate(tmp_path):
    corpus, weights = tmp_path / "corpus", tmp_path / "weights"
    assert main(["synth", "--n", "40", "--seed", "0", "--size", "64", "--out", str(corpus)]) == 0
    for stage in ("pnet", "rnet", "onet"):
        out = weights / f"{stage}.bin"
        argv = ["train", "--stage", stage, "--corpus", str(corpus), "--out", str(out), "--epochs", "2"]
        assert main(argv) == 0
        curves = load_curves(out.with_suffix(".csv"))
        assert {r.split for r in curves} == {"train", "val"}

    report = tmp_path / "report.json"
    assert main(["eval", "--weights-dir", str(weights), "--corpus", str(corpus), "--report", str(report)]) == 0
    first = report.read_bytes()
    assert main(["eval", "--weights-dir", str(weights), "--corpus", str(corpus), "--report", str(report)]) == 0
    assert report.read_bytes() == first
    payload = json.loads(first)
    assert 0.0 <= payload["detection"]["average_precision"] <= 1.0
    assert payload["landmarks"]["faces"] + payload["landmarks"]["excluded"] > 0


@pytest.mark.slow
def test_ablation_command(tmp_path):
    corpus = tmp_path / "corpus"
    assert main(["synth", "--n", "30", "--seed", "2", "--size", "64", "--out", str(corpus)]) == 0
    out = tmp_path / "ablation"
    assert main(["ablate", "--which", "ohem", "--corpus", str(corpus), "--out", str(out), "--epochs", "2"]) == 0
    summary = json.loads((out / "ohem_summary.json").read_text(encoding="utf-8"))
    assert set(summary["variants"]) == {"ohem", "baseline"}
