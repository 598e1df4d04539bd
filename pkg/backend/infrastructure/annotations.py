"""
JSON Lines face annotations, one image per line:
{"image": "toy_00000.ppm", "boxes": [[x1, y1, x2, y2], ...], "landmarks": [[[x, y] x5] | null, ...]}
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from backend.domain.errors import AnnotationParseError, InvalidBoxError
from backend.domain.models import Box, Landmarks

logger = logging.getLogger(__name__)


class AnnotationLine(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image: str = Field(min_length=1)
    boxes: List[Tuple[float, float, float, float]] = []
    landmarks: Optional[List[Optional[List[Tuple[float, float]]]]] = None

    @model_validator(mode="after")
    def check_landmarks(self) -> "AnnotationLine":
        if self.landmarks is None:
            return self
        if len(self.landmarks) != len(self.boxes):
            raise ValueError(f"{len(self.landmarks)} landmark sets for {len(self.boxes)} boxes")
        for points in self.landmarks:
            if points is not None and len(points) != 5:
                raise ValueError(f"landmark sets hold 5 points, got {len(points)}")
        return self


@dataclass
class ImageAnnotation:
    image: str
    boxes: List[Box] = field(default_factory=list)
    landmarks: List[Optional[Landmarks]] = field(default_factory=list)


def parse_annotation_line(text: str, line: int) -> ImageAnnotation:
    try:
        parsed = AnnotationLine.model_validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "record"
        raise AnnotationParseError(line, f"{where}: {first['msg']}") from exc
    try:
        boxes = [Box(*coords) for coords in parsed.boxes]
    except InvalidBoxError as exc:
        raise AnnotationParseError(line, str(exc)) from exc
    if parsed.landmarks is None:
        landmarks: List[Optional[Landmarks]] = [None] * len(boxes)
    else:
        landmarks = [None if pts is None else tuple(tuple(p) for p in pts) for pts in parsed.landmarks]
    return ImageAnnotation(image=parsed.image, boxes=boxes, landmarks=landmarks)


def load_annotations(path: Path) -> List[ImageAnnotation]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for number, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            records.append(parse_annotation_line(text, number))
    logger.debug("Loaded %d annotation records from %s", len(records), path)
    return records


def annotation_to_json(record: ImageAnnotation) -> str:
    payload = {
        "image": record.image,
        "boxes": [list(b.coords()) for b in record.boxes],
        "landmarks": [None if pts is None else [list(p) for p in pts] for pts in record.landmarks],
    }
    return json.dumps(payload)


def save_annotations(path: Path, records: Sequence[ImageAnnotation]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(annotation_to_json(record) + "\n")
