"""
Toy-scale ablations of the O-Net training recipe:

- "ohem":  face-classification-only training with and without online hard
           sample mining, compared on final validation det loss;
- "joint": training with and without the landmark task, compared on final
           validation detection accuracy.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

from backend.domain.config import LossWeights, Settings, flat_config
from backend.domain.models import AnnotatedImage
from backend.domain.nn.networks import INPUT_SIZES, build_network
from backend.domain.services.harvesting import random_crop_samples
from backend.domain.services.training import StageDataset, TrainingResult, train_stage
from backend.infrastructure.reports import save_curves, save_json

logger = logging.getLogger(__name__)

ABLATIONS = ("ohem", "joint")
ABLATION_KIND = "onet"


@dataclass
class AblationVariant:
    name: str
    weights: LossWeights


@dataclass
class AblationResult:
    which: str
    metric: str
    expectation: str
    results: Dict[str, TrainingResult]
    finals: Dict[str, float]
    holds: bool
    epochs: int
    seed: int


def ablation_variants(which: str, settings: Settings) -> List[AblationVariant]:
    """The two training setups compared by one ablation, treatment first."""
    stage = settings.loss_for(ABLATION_KIND)
    if which == "ohem":
        det_only = stage.model_copy(update={"alpha_box": 0.0, "alpha_landmark": 0.0})
        return [
            AblationVariant("ohem", det_only),
            AblationVariant("baseline", det_only.model_copy(update={"ohem_ratio": 1.0})),
        ]
    if which == "joint":
        return [
            AblationVariant("joint", stage),
            AblationVariant("solo", stage.model_copy(update={"alpha_landmark": 0.0})),
        ]
    raise ValueError(f"unknown ablation {which!r}; expected one of {', '.join(ABLATIONS)}")


def crop_dataset(corpus: Sequence[AnnotatedImage], settings: Settings, seed: int) -> StageDataset:
    size = INPUT_SIZES[ABLATION_KIND]
    return StageDataset.from_samples(random_crop_samples(corpus, size, settings.harvest, seed), size)


def run_ablation(
    which: str,
    train_corpus: Sequence[AnnotatedImage],
    val_corpus: Sequence[AnnotatedImage],
    settings: Settings,
    epochs: int = 20,
    seed: int = 0,
    progress: bool = False,
) -> AblationResult:
    variants = ablation_variants(which, settings)
    train_set = crop_dataset(train_corpus, settings, seed)
    val_set = crop_dataset(val_corpus, settings, seed + 1)
    results: Dict[str, TrainingResult] = {}
    for variant in variants:
        logger.info("Ablation %s: training variant %s", which, variant.name)
        net = build_network(ABLATION_KIND, seed=seed)
        results[variant.name] = train_stage(
            net, train_set, variant.weights, epochs=epochs, seed=seed, validation=val_set, progress=progress
        )

    treatment, control = (v.name for v in variants)
    if which == "ohem":
        metric = "val/det"
        finals = {name: r.final("val", "det") for name, r in results.items()}
        holds = finals[treatment] <= finals[control]
        expectation = f"{treatment} <= {control}"
    else:
        metric = "val/accuracy"
        finals = {name: r.final("val", "accuracy") for name, r in results.items()}
        holds = finals[treatment] >= finals[control]
        expectation = f"{treatment} >= {control}"
    logger.info("Ablation %s: %s %s (expected %s)", which, finals, "holds" if holds else "does not hold", expectation)
    return AblationResult(
        which=which, metric=metric, expectation=expectation, results=results,
        finals=finals, holds=holds, epochs=epochs, seed=seed,
    )


def write_ablation(out_dir: Path, result: AblationResult, settings: Settings) -> Path:
    """One curve CSV per variant plus `<which>_summary.json`; returns the summary path."""
    out_dir = Path(out_dir)
    variants = {}
    for name, training in result.results.items():
        curve_file = f"{result.which}_{name}.csv"
        save_curves(out_dir / curve_file, training.curves)
        variants[name] = {"final": result.finals[name], "curves": curve_file}
    summary = out_dir / f"{result.which}_summary.json"
    save_json(summary, {
        "which": result.which,
        "metric": result.metric,
        "expectation": result.expectation,
        "holds": result.holds,
        "epochs": result.epochs,
        "seed": result.seed,
        "variants": variants,
        "config": flat_config(settings),
    })
    return summary
