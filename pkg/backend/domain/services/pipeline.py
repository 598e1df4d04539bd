"""
High-level services over corpus and weights directories, shared by the CLI
and the background job runner.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from backend.domain.config import STAGE_KINDS, Settings
from backend.domain.nn.networks import build_network
from backend.domain.services.cascade import CascadeNets
from backend.domain.services.harvesting import build_stage_dataset
from backend.domain.services.toy_faces import generate_toy_corpus
from backend.domain.services.training import TrainingResult, dataset_summary, train_stage
from backend.infrastructure.corpus_store import load_corpus, save_corpus
from backend.infrastructure.reports import save_curves
from backend.infrastructure.weights_store import load_weights, save_weights, weights_path

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 10


@dataclass
class StageRun:
    result: TrainingResult
    weights_path: Path
    curves_path: Path
    samples: Dict[str, int]


def curves_path_for(weights_file: Path) -> Path:
    return Path(weights_file).with_suffix(".csv")


def load_prefix(kind: str, prefix_dir: Path) -> Optional[CascadeNets]:
    """Trained earlier stages needed to harvest `kind` samples (None for P-Net)."""
    if kind == "pnet":
        return None
    pnet = load_weights(weights_path(prefix_dir, "pnet"))
    rnet = load_weights(weights_path(prefix_dir, "rnet")) if kind == "onet" else None
    return CascadeNets(pnet=pnet, rnet=rnet)


def train_from_corpus(
    kind: str,
    corpus_dir: Path,
    out_path: Path,
    settings: Settings,
    seed: int = 0,
    epochs: int = DEFAULT_EPOCHS,
    ohem: bool = True,
    landmark: bool = True,
    prefix_dir: Optional[Path] = None,
    progress: bool = False,
) -> StageRun:
    """
    Harvest one stage's samples from the corpus train/val splits, train the
    network and write `out_path` plus its loss curves next to it (.csv).
    R-Net and O-Net read their trained prefix from `prefix_dir`
    (default: the directory of `out_path`).
    """
    if kind not in STAGE_KINDS:
        raise ValueError(f"unknown stage {kind!r}; expected one of {', '.join(STAGE_KINDS)}")
    out_path = Path(out_path)
    prefix = load_prefix(kind, Path(prefix_dir) if prefix_dir else out_path.parent)
    weights = settings.loss_for(kind)
    if not ohem:
        weights = weights.model_copy(update={"ohem_ratio": 1.0})
    if not landmark:
        weights = weights.model_copy(update={"alpha_landmark": 0.0})

    train_corpus = load_corpus(corpus_dir, "train")
    val_corpus = load_corpus(corpus_dir, "val")
    train_set = build_stage_dataset(train_corpus, kind, settings.harvest, seed, settings.cascade, prefix)
    val_set = None
    if val_corpus:
        val_set = build_stage_dataset(val_corpus, kind, settings.harvest, seed + 1, settings.cascade, prefix)

    net = build_network(kind, seed=seed)
    result = train_stage(net, train_set, weights, epochs=epochs, seed=seed, validation=val_set, progress=progress)
    save_weights(net, out_path)
    curves = curves_path_for(out_path)
    save_curves(curves, result.curves)
    return StageRun(result=result, weights_path=out_path, curves_path=curves, samples=dict(dataset_summary(train_set)))


def synthesize_corpus(out_dir: Path, n_images: int, seed: int, image_size: int = 96) -> Dict[str, List[str]]:
    corpus = generate_toy_corpus(n_images, image_size, seed)
    return save_corpus(out_dir, corpus, seed)
