import os
from pathlib import Path

from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException

from backend.app.api.dependencies import get_settings
from backend.app.schemas.jobs import JobCreatedResponse, JobDetail, JobSummary, LossRecordOut, TrainingJobRequest
from backend.domain.config import Settings
from backend.domain.models import JobStatus, TrainingJob
from backend.domain.services.job_service import create_job, get_job, list_jobs, run_job
from backend.infrastructure.corpus_store import ANNOTATIONS_FILE

# Relative out_path values are resolved against this directory.
JOBS_DIR = Path(os.environ.get("MTCNN_JOBS_DIR", "jobs"))

router = APIRouter(prefix="/api/jobs", tags=["jobs"])


def _curves(job: TrainingJob) -> list[LossRecordOut]:
    return [LossRecordOut(epoch=r.epoch, split=r.split, task=r.task, value=r.value) for r in job.curves]


def _detail(job: TrainingJob) -> JobDetail:
    return JobDetail(
        id=job.id,
        status=job.status,
        stage=job.stage,
        weights_path=job.weights_path,
        curves=_curves(job),
        error_message=job.error_message,
    )


@router.post("", response_model=JobCreatedResponse, status_code=202)
async def create_training_job(
    background_tasks: BackgroundTasks,
    body: TrainingJobRequest,
    settings: Settings = Depends(get_settings),
):
    """
    Train one cascade stage on a corpus directory in the background.
    R-Net and O-Net read their trained prefix from the directory of out_path.
    """
    corpus_dir = Path(body.corpus_dir)
    if not (corpus_dir / ANNOTATIONS_FILE).is_file():
        raise HTTPException(status_code=400, detail=f"Not a corpus directory: {body.corpus_dir}")

    out_path = Path(body.out_path)
    if not out_path.is_absolute():
        out_path = JOBS_DIR / out_path

    job = create_job(body.stage)
    background_tasks.add_task(
        run_job,
        job.id,
        corpus_dir,
        out_path,
        settings,
        seed=body.seed,
        epochs=body.epochs,
        ohem=body.ohem,
        landmark=body.landmark,
    )

    return JobCreatedResponse(
        id=job.id,
        status=job.status,
        stage=job.stage,
        curves=[],
        error_message=None,
    )


@router.get("", response_model=list[JobSummary])
async def list_training_jobs():
    return [JobSummary(id=job.id, status=job.status, stage=job.stage) for job in list_jobs()]


@router.get("/{job_id}", response_model=JobDetail)
async def get_job_status(job_id: str):
    job = get_job(job_id)
    if not job:
        raise HTTPException(status_code=404, detail="Job not found")
    return _detail(job)


@router.get("/{job_id}/curves", response_model=list[LossRecordOut])
async def get_job_curves(job_id: str):
    job = get_job(job_id)
    if not job:
        raise HTTPException(status_code=404, detail="Job not found")

    if job.status != JobStatus.COMPLETED:
        raise HTTPException(
            status_code=409,
            detail=f"Job not completed yet (status={job.status.value})",
        )

    return _curves(job)
