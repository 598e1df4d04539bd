import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from backend.domain.errors import InvalidBoxError

Point = Tuple[float, float]
Landmarks = Tuple[Point, Point, Point, Point, Point]

LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "left_mouth", "right_mouth")


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in original-image pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float
    score: Optional[float] = None
    regression: Optional[Tuple[float, float, float, float]] = None
    landmarks: Optional[Landmarks] = None

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise InvalidBoxError(f"non-finite box coordinates {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise InvalidBoxError(f"box has non-positive extent {coords}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise InvalidBoxError(f"score {self.score} outside [0, 1]")
        if self.regression is not None and len(self.regression) != 4:
            raise InvalidBoxError("regression must have 4 components")
        if self.landmarks is not None and len(self.landmarks) != 5:
            raise InvalidBoxError(f"expected 5 landmarks, got {len(self.landmarks)}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def coords(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Detection:
    box: Box
    landmarks: Landmarks

    @property
    def score(self) -> float:
        return self.box.score if self.box.score is not None else 0.0


class SampleType(str, Enum):
    NEGATIVE = "negative"
    POSITIVE = "positive"
    PART = "part"
    LANDMARK = "landmark"

    @property
    def betas(self) -> Tuple[int, int, int]:
        """(β_det, β_box, β_landmark) task indicator for this sample type."""
        return _BETAS[self]


_BETAS = {
    SampleType.NEGATIVE: (1, 0, 0),
    SampleType.POSITIVE: (1, 1, 0),
    SampleType.PART: (0, 1, 0),
    SampleType.LANDMARK: (0, 0, 1),
}

# Batch order used everywhere a per-type table is laid out.
SAMPLE_TYPES = (SampleType.NEGATIVE, SampleType.POSITIVE, SampleType.PART, SampleType.LANDMARK)


class SampleCategory(str, Enum):
    NEGATIVE = "negative"
    DISCARD = "discard"
    PART = "part"
    POSITIVE = "positive"
    LANDMARK = "landmark"

    def sample_type(self) -> Optional[SampleType]:
        if self is SampleCategory.DISCARD:
            return None
        return SampleType(self.value)


@dataclass
class TrainingSample:
    """A normalized patch with the targets its sample type trains."""

    patch: np.ndarray  # 3×S×S float32, normalized
    sample_type: SampleType
    y_det: Optional[int] = None
    y_box: Optional[np.ndarray] = None
    y_landmark: Optional[np.ndarray] = None
    crop: Optional[Box] = None  # source region in image coordinates

    def __post_init__(self) -> None:
        beta_det, beta_box, beta_lm = self.sample_type.betas
        if (self.y_det is not None) != bool(beta_det):
            raise ValueError(f"{self.sample_type.value} sample must {'' if beta_det else 'not '}carry y_det")
        if (self.y_box is not None) != bool(beta_box):
            raise ValueError(f"{self.sample_type.value} sample must {'' if beta_box else 'not '}carry y_box")
        if (self.y_landmark is not None) != bool(beta_lm):
            raise ValueError(
                f"{self.sample_type.value} sample must {'' if beta_lm else 'not '}carry y_landmark"
            )

    @property
    def betas(self) -> Tuple[int, int, int]:
        return self.sample_type.betas


@dataclass
class AnnotatedImage:
    image: np.ndarray  # 3×H×W uint8
    boxes: List[Box] = field(default_factory=list)
    landmarks: List[Optional[Landmarks]] = field(default_factory=list)
    name: str = ""

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])


class JobStatus(str, Enum):
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class LossRecord:
    epoch: int
    split: str
    task: str
    value: float


@dataclass
class TrainingJob:
    id: str
    status: JobStatus
    stage: str
    weights_path: Optional[str] = None
    curves: List[LossRecord] = field(default_factory=list)
    error_message: Optional[str] = None
