from typing import Any, Dict, List

from pydantic import BaseModel, Field


class DetectionOut(BaseModel):
    box: List[float] = Field(min_length=4, max_length=4)
    score: float
    landmarks: List[List[float]] = Field(min_length=5, max_length=5)


class DetectResponse(BaseModel):
    image: str
    width: int
    height: int
    config: Dict[str, Any]
    detections: List[DetectionOut]
