import numpy as np
import pytest

from backend.infrastructure.corpus_store import (
    ANNOTATIONS_FILE,
    MANIFEST_FILE,
    load_corpus,
    load_manifest,
    save_corpus,
    split_names,
)


def test_split_fractions_and_order():
    names = [f"img_{i:03d}" for i in range(200)]
    splits = split_names(names, seed=0)
    assert [len(splits[s]) for s in ("train", "val", "test")] == [160, 20, 20]
    assert sorted(splits["train"] + splits["val"] + splits["test"]) == names
    for members in splits.values():
        assert members == sorted(members)
    assert split_names(names, seed=0) == splits
    assert split_names(names, seed=1) != splits


def test_rewrite_is_byte_identical(tmp_path, toy_corpus):
    save_corpus(tmp_path / "a", toy_corpus, seed=3)
    save_corpus(tmp_path / "b", toy_corpus, seed=3)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    assert len(files_a) == len(toy_corpus) + 2
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_load_returns_what_was_saved(corpus_dir, toy_corpus):
    loaded = load_corpus(corpus_dir)
    assert [a.name for a in loaded] == [a.name for a in toy_corpus]
    for got, want in zip(loaded, toy_corpus):
        np.testing.assert_array_equal(got.image, want.image)
        assert got.boxes == want.boxes
        assert got.landmarks == want.landmarks


def test_load_one_split(corpus_dir):
    manifest = load_manifest(corpus_dir)
    assert manifest["count"] == 6 and manifest["seed"] == 3
    test = load_corpus(corpus_dir, "test")
    assert [a.name for a in test] == manifest["splits"]["test"]
    assert (corpus_dir / ANNOTATIONS_FILE).exists() and (corpus_dir / MANIFEST_FILE).exists()


def test_unknown_split(corpus_dir):
    with pytest.raises(ValueError):
        load_corpus(corpus_dir, "holdout")
