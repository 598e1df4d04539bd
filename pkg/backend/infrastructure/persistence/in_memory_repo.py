from threading import Lock
from typing import Dict, List, Optional

from backend.domain.models import TrainingJob


class InMemoryJobRepository:
    """
    In-memory store of training jobs for a single service process.
    """

    def __init__(self) -> None:
        self._jobs: Dict[str, TrainingJob] = {}
        self._lock = Lock()

    def save(self, job: TrainingJob) -> None:
        with self._lock:
            self._jobs[job.id] = job

    def get(self, job_id: str) -> Optional[TrainingJob]:
        with self._lock:
            return self._jobs.get(job_id)

    def list(self) -> List[TrainingJob]:
        with self._lock:
            return list(self._jobs.values())

    def clear(self) -> None:
        with self._lock:
            self._jobs.clear()


# Single process-wide instance for this app
job_repository = InMemoryJobRepository()
