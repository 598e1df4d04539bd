from typing import List, Literal, Optional

from pydantic import BaseModel, Field

from backend.domain.models import JobStatus


class LossRecordOut(BaseModel):
    epoch: int
    split: str
    task: str
    value: float


class JobSummary(BaseModel):
    id: str
    status: JobStatus
    stage: str


class JobDetail(BaseModel):
    id: str
    status: JobStatus
    stage: str
    weights_path: Optional[str] = None
    curves: List[LossRecordOut] = []
    error_message: Optional[str] = None


class JobCreatedResponse(JobDetail):
    pass


class TrainingJobRequest(BaseModel):
    stage: Literal["pnet", "rnet", "onet"]
    corpus_dir: str = Field(min_length=1)
    out_path: str = Field(min_length=1)
    seed: int = 0
    epochs: int = Field(10, ge=1)
    ohem: bool = True
    landmark: bool = True
