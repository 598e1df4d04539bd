import uuid
from pathlib import Path
from typing import List, Optional

from backend.domain.config import Settings
from backend.domain.models import JobStatus, TrainingJob
from backend.domain.services.pipeline import train_from_corpus
from backend.infrastructure.persistence.in_memory_repo import job_repository


def create_job(stage: str) -> TrainingJob:
    """
    Create a new training job in PROCESSING state.
    """
    job = TrainingJob(id=str(uuid.uuid4()), status=JobStatus.PROCESSING, stage=stage)
    job_repository.save(job)
    return job


def run_job(
    job_id: str,
    corpus_dir: Path,
    out_path: Path,
    settings: Settings,
    seed: int = 0,
    epochs: int = 10,
    ohem: bool = True,
    landmark: bool = True,
) -> None:
    """
    Background training for a job:
    - Harvest the stage's samples and train it
    - Update job status and attach loss curves or error message
    """
    job = job_repository.get(job_id)
    if not job:
        return

    try:
        run = train_from_corpus(
            job.stage, corpus_dir, out_path, settings,
            seed=seed, epochs=epochs, ohem=ohem, landmark=landmark,
        )
        job.curves = run.result.curves
        job.weights_path = str(run.weights_path)
        job.status = JobStatus.COMPLETED
    except Exception as exc:  # noqa: BLE001 - top-level guard
        job.status = JobStatus.FAILED
        job.error_message = f"{type(exc).__name__}: {exc}"
    finally:
        job_repository.save(job)


def get_job(job_id: str) -> Optional[TrainingJob]:
    return job_repository.get(job_id)


def list_jobs() -> List[TrainingJob]:
    return job_repository.list()
