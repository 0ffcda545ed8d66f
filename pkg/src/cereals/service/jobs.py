"""In-memory job registry backing the long-running endpoints.

Jobs run on a small thread pool; results live on disk in their results
directory, so losing the registry on restart loses only the handles.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import CerealsError, ConfigError, LearnerError

STATUS_QUEUED = "queued"
STATUS_RUNNING = "running"
STATUS_DONE = "done"
STATUS_ERROR = "error"


@dataclass
class Job:
    job_id: str
    kind: str
    status: str = STATUS_QUEUED
    progress: dict[str, Any] = field(default_factory=dict)
    error: str | None = None
    error_code: str | None = None
    result: dict[str, Any] | None = None
    results_dir: str | None = None


class JobManager:
    def __init__(self, max_workers: int = 2):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="job")

    def submit(self, kind: str, fn: Callable[[Callable], dict], results_dir: str | None = None) -> Job:
        job = Job(job_id=uuid.uuid4().hex[:12], kind=kind, results_dir=results_dir)
        with self._lock:
            self._jobs[job.job_id] = job

        def progress(phase: str, done: int, total: int) -> None:
            with self._lock:
                job.progress = {"phase": phase, "done": done, "total": total}

        def run() -> None:
            with self._lock:
                job.status = STATUS_RUNNING
            try:
                result = fn(progress)
            except ConfigError as exc:
                self._fail(job, "config", exc)
            except LearnerError as exc:
                self._fail(job, "learner", exc)
            except CerealsError as exc:
                self._fail(job, "internal", exc)
            except Exception as exc:  # noqa: BLE001 - surface anything to the client
                self._fail(job, "internal", exc)
            else:
                with self._lock:
                    job.status = STATUS_DONE
                    job.result = result

        self._pool.submit(run)
        return job

    def _fail(self, job: Job, code: str, exc: Exception) -> None:
        with self._lock:
            job.status = STATUS_ERROR
            job.error_code = code
            job.error = f"{type(exc).__name__}: {exc}"

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)
