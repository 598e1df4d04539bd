"""
Multi-task objective, online hard sample mining and the SGD training loop.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from backend.domain.config import LossWeights
from backend.domain.errors import DivergenceError, EmptyPoolError, ShapeError
from backend.domain.models import SAMPLE_TYPES, LossRecord, SampleType, TrainingSample
from backend.domain.nn.gradcheck import finite_diff_check
from backend.domain.nn.networks import Network, NetworkOutput
from backend.domain.nn.tensor import scale_gradients, sgd_step

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
TASKS = ("det", "box", "landmark")


# ---------------------------------------------------------------------------
# Per-sample losses
# ---------------------------------------------------------------------------

def det_loss(p, y) -> np.ndarray:
    """Cross-entropy of the face probability, clamped to [ε, 1-ε]."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def box_loss(pred, target) -> np.ndarray:
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.sum(diff * diff, axis=-1)


def landmark_loss(pred, target) -> np.ndarray:
    return box_loss(pred, target)


def ohem_select(det_losses: Sequence[float], ratio: float = 0.7) -> np.ndarray:
    """
    Indices of the ceil(ratio·N) largest losses, ties to the lower index,
    returned in ascending index order.
    """
    losses = np.asarray(det_losses, dtype=np.float64)
    if losses.size == 0:
        return np.zeros(0, dtype=np.int64)
    keep = math.ceil(ratio * losses.size)
    order = np.argsort(-losses, kind="stable")
    return np.sort(order[:keep])


# ---------------------------------------------------------------------------
# Batches and pools
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    patches: np.ndarray  # N×3×S×S float32
    betas: np.ndarray  # N×3 int (det, box, landmark)
    labels: np.ndarray  # N, y_det (0 where β_det = 0)
    box_targets: np.ndarray  # N×4 (0 where β_box = 0)
    landmark_targets: np.ndarray  # N×10 (0 where β_landmark = 0)

    def __len__(self) -> int:
        return int(self.patches.shape[0])

    @classmethod
    def from_samples(cls, samples: Sequence[TrainingSample]) -> "Batch":
        if not samples:
            raise ValueError("cannot build a batch from no samples")
        return cls(
            patches=np.stack([s.patch for s in samples]).astype(np.float32),
            betas=np.array([s.betas for s in samples], dtype=np.int64),
            labels=np.array([s.y_det or 0 for s in samples], dtype=np.float64),
            box_targets=np.stack(
                [s.y_box if s.y_box is not None else np.zeros(4) for s in samples]
            ).astype(np.float64),
            landmark_targets=np.stack(
                [s.y_landmark if s.y_landmark is not None else np.zeros(10) for s in samples]
            ).astype(np.float64),
        )

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(
            self.patches[idx], self.betas[idx], self.labels[idx],
            self.box_targets[idx], self.landmark_targets[idx],
        )

    @classmethod
    def concat(cls, parts: Sequence["Batch"]) -> "Batch":
        return cls(
            np.concatenate([p.patches for p in parts]),
            np.concatenate([p.betas for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.box_targets for p in parts]),
            np.concatenate([p.landmark_targets for p in parts]),
        )


@dataclass
class StageDataset:
    """Training samples of one stage, pooled by sample type."""

    input_size: int
    pools: Dict[SampleType, Batch] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: Sequence[TrainingSample], input_size: int) -> "StageDataset":
        dataset = cls(input_size=input_size)
        for sample_type in SAMPLE_TYPES:
            members = [s for s in samples if s.sample_type is sample_type]
            if not members:
                continue
            for s in members:
                if s.patch.shape != (3, input_size, input_size):
                    raise ShapeError(
                        f"{sample_type.value} patch has shape {s.patch.shape}, "
                        f"expected 3×{input_size}×{input_size}"
                    )
            dataset.pools[sample_type] = Batch.from_samples(members)
        return dataset

    def counts(self) -> Dict[SampleType, int]:
        return {t: len(self.pools[t]) if t in self.pools else 0 for t in SAMPLE_TYPES}

    def __len__(self) -> int:
        return sum(self.counts().values())

    def as_batch(self) -> Batch:
        return Batch.concat([self.pools[t] for t in SAMPLE_TYPES if t in self.pools])


def batch_counts(batch_size: int, ratio: Sequence[int]) -> Tuple[int, ...]:
    """Split batch_size by ratio with largest-remainder rounding (ties to the earlier type)."""
    total = sum(ratio)
    exact = [batch_size * r / total for r in ratio]
    counts = [int(math.floor(e)) for e in exact]
    short = batch_size - sum(counts)
    by_remainder = sorted(range(len(ratio)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in by_remainder[:short]:
        counts[i] += 1
    return tuple(counts)


def compose_minibatch(
    dataset: StageDataset,
    batch_size: int,
    ratio: Sequence[int],
    rng: np.random.Generator,
) -> Batch:
    """Draw each type's share of the batch uniformly (with replacement) from its pool."""
    parts = []
    for sample_type, count in zip(SAMPLE_TYPES, batch_counts(batch_size, ratio)):
        if count == 0:
            continue
        pool = dataset.pools.get(sample_type)
        if pool is None or len(pool) == 0:
            raise EmptyPoolError(sample_type.value)
        parts.append(pool.take(rng.integers(0, len(pool), size=count)))
    return Batch.concat(parts)


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

@dataclass
class Objective:
    total: float
    det: float
    box: float
    landmark: float
    selected: np.ndarray  # batch indices whose det loss contributes
    grad_prob: np.ndarray
    grad_box: np.ndarray
    grad_landmark: np.ndarray
    det_losses: np.ndarray  # per sample, NaN where β_det = 0
    box_losses: np.ndarray
    landmark_losses: np.ndarray


def compute_objective(batch: Batch, output: NetworkOutput, weights: LossWeights) -> Objective:
    """
    Σ_i Σ_j α_j β_i^j L_i^j summed over the batch, with the det term restricted
    to the OHEM selection, and its gradient w.r.t. the three head outputs.
    """
    prob = np.asarray(output.prob, dtype=np.float64)
    box = np.asarray(output.box, dtype=np.float64)
    landmark = np.asarray(output.landmark, dtype=np.float64)
    beta_det, beta_box, beta_lm = (batch.betas[:, j].astype(bool) for j in range(3))
    n = len(batch)

    det_all = np.full(n, np.nan)
    det_idx = np.flatnonzero(beta_det)
    det_all[det_idx] = det_loss(prob[det_idx], batch.labels[det_idx])
    selected = det_idx[ohem_select(det_all[det_idx], weights.ohem_ratio)]

    box_all = np.where(beta_box, box_loss(box, batch.box_targets), 0.0)
    lm_all = np.where(beta_lm, landmark_loss(landmark, batch.landmark_targets), 0.0)

    det_sum = float(det_all[selected].sum())
    box_sum = float(box_all.sum())
    lm_sum = float(lm_all.sum())
    total = weights.alpha_det * det_sum + weights.alpha_box * box_sum + weights.alpha_landmark * lm_sum

    grad_prob = np.zeros(n)
    p = prob[selected]
    y = batch.labels[selected]
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    grad_prob[selected] = np.where(inside, weights.alpha_det * (-y / p + (1.0 - y) / (1.0 - p)), 0.0)
    grad_box = weights.alpha_box * 2.0 * (box - batch.box_targets) * beta_box[:, None]
    grad_lm = weights.alpha_landmark * 2.0 * (landmark - batch.landmark_targets) * beta_lm[:, None]

    return Objective(
        total=total, det=det_sum, box=box_sum, landmark=lm_sum, selected=selected,
        grad_prob=grad_prob, grad_box=grad_box, grad_landmark=grad_lm,
        det_losses=det_all,
        box_losses=np.where(beta_box, box_all, np.nan),
        landmark_losses=np.where(beta_lm, lm_all, np.nan),
    )


def total_loss(batch: Batch, output: NetworkOutput, weights: LossWeights) -> float:
    """Scalar objective of one batch (OHEM applied to the det term)."""
    return compute_objective(batch, output, weights).total


def backpropagate(net: Network, batch: Batch, weights: LossWeights) -> Objective:
    """Forward, objective and backward in one go; gradients accumulate on the parameters."""
    output, tape = net.forward_train(batch.patches)
    objective = compute_objective(batch, output, weights)
    net.backward(tape, objective.grad_prob, objective.grad_box, objective.grad_landmark)
    return objective


def check_objective_gradients(
    net: Network,
    batch: Batch,
    weights: LossWeights,
    max_entries: Optional[int] = None,
) -> float:
    """Finite-difference check of the full objective over every parameter of a float64 network."""
    net.zero_grad()
    batch = Batch(batch.patches.astype(np.float64), batch.betas, batch.labels,
                  batch.box_targets, batch.landmark_targets)
    backpropagate(net, batch, weights)
    params = net.parameters()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    arrays = {name: p.values for name, p in params.items()}

    def loss() -> float:
        return total_loss(batch, net.forward(batch.patches), weights)

    return finite_diff_check(loss, analytic, arrays, max_entries=max_entries)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainingResult:
    network: Network
    curves: List[LossRecord]

    def final(self, split: str, task: str) -> float:
        values = [r.value for r in self.curves if r.split == split and r.task == task]
        if not values:
            raise KeyError(f"no {split}/{task} records")
        return values[-1]


def _mean_losses(det: np.ndarray, box: np.ndarray, lm: np.ndarray) -> Dict[str, float]:
    def mean(values: np.ndarray) -> float:
        values = values[~np.isnan(values)]
        return float(values.mean()) if values.size else 0.0

    return {"det": mean(det), "box": mean(box), "landmark": mean(lm)}


def evaluate_dataset(net: Network, dataset: StageDataset, weights: LossWeights, chunk: int = 256) -> Dict[str, float]:
    """Mean per-sample task losses (no hard sample mining) and detection accuracy."""
    batch = dataset.as_batch()
    det, box, lm, correct = [], [], [], []
    plain = weights.model_copy(update={"ohem_ratio": 1.0})
    for start in range(0, len(batch), chunk):
        part = batch.take(np.arange(start, min(start + chunk, len(batch))))
        output = net.forward(part.patches)
        objective = compute_objective(part, output, plain)
        det.append(objective.det_losses)
        box.append(objective.box_losses)
        lm.append(objective.landmark_losses)
        has_det = part.betas[:, 0] == 1
        correct.append(((output.prob[has_det] >= 0.5) == (part.labels[has_det] == 1)))
    stats = _mean_losses(np.concatenate(det), np.concatenate(box), np.concatenate(lm))
    hits = np.concatenate(correct)
    stats["accuracy"] = float(hits.mean()) if hits.size else 0.0
    return stats


def train_stage(
    net: Network,
    dataset: StageDataset,
    weights: LossWeights,
    epochs: int,
    seed: int,
    validation: Optional[StageDataset] = None,
    progress: bool = False,
) -> TrainingResult:
    """
    Plain SGD over seeded mini-batches. One epoch draws len(dataset)//batch_size
    batches. The objective is summed over the batch; each step uses its
    gradient divided by the batch size and capped at `clip_norm`. Emits
    per-epoch mean task losses for the training batches and, when given, the
    validation set.
    """
    if dataset.input_size != net.input_size:
        raise ShapeError(f"dataset patches are {dataset.input_size}px, {net.kind} needs {net.input_size}px")
    rng = np.random.default_rng(seed)
    steps = max(1, len(dataset) // weights.batch_size)
    params = list(net.parameters().values())
    net.zero_grad()
    curves: List[LossRecord] = []
    batch_index = 0

    for epoch in tqdm(range(1, epochs + 1), desc=f"train {net.kind}", disable=not progress):
        det, box, lm = [], [], []
        for _ in range(steps):
            batch = compose_minibatch(dataset, weights.batch_size, weights.batch_ratio, rng)
            objective = backpropagate(net, batch, weights)
            if not math.isfinite(objective.total):
                raise DivergenceError(batch_index, objective.total)
            norm = scale_gradients(params, 1.0 / len(batch), weights.clip_norm)
            if not math.isfinite(norm):
                raise DivergenceError(batch_index, norm)
            sgd_step(params, weights.lr)
            det.append(objective.det_losses)
            box.append(objective.box_losses)
            lm.append(objective.landmark_losses)
            batch_index += 1

        train_stats = _mean_losses(np.concatenate(det), np.concatenate(box), np.concatenate(lm))
        curves.extend(LossRecord(epoch, "train", task, train_stats[task]) for task in TASKS)
        message = "epoch %d/%d %s train det=%.4f box=%.4f landmark=%.4f"
        args = [epoch, epochs, net.kind, train_stats["det"], train_stats["box"], train_stats["landmark"]]
        if validation is not None and len(validation):
            val_stats = evaluate_dataset(net, validation, weights)
            curves.extend(LossRecord(epoch, "val", task, val_stats[task]) for task in TASKS + ("accuracy",))
            message += " val det=%.4f acc=%.3f"
            args += [val_stats["det"], val_stats["accuracy"]]
        logger.info(message, *args)

    net.trained = True
    return TrainingResult(network=net, curves=curves)


def dataset_summary(dataset: StageDataset) -> Mapping[str, int]:
    return {t.value: c for t, c in dataset.counts().items()}
