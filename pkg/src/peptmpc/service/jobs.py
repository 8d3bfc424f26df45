"""Thread-backed registry for long-running experiment jobs."""
from __future__ import annotations

import threading
import traceback
import uuid
from dataclasses import dataclass, field


@dataclass
class Job:
    id: str
    status: str = "queued"          # queued | running | done | error
    done: int = 0
    total: int = 0
    error: str | None = None
    result: object = None
    thread: threading.Thread | None = None


class JobRegistry:
    """Launches callables on daemon threads and tracks their progress."""

    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, fn) -> str:
        """Run fn(progress_cb) in the background; returns the job id."""
        job = Job(id=uuid.uuid4().hex)

        def progress(done: int, total: int) -> None:
            with self._lock:
                job.done, job.total = done, total

        def runner() -> None:
            with self._lock:
                job.status = "running"
            try:
                result = fn(progress)
            except Exception as exc:
                with self._lock:
                    job.status = "error"
                    job.error = f"{type(exc).__name__}: {exc}"
                    job.result = None
                traceback.print_exc()
                return
            with self._lock:
                job.status = "done"
                job.result = result

        job.thread = threading.Thread(target=runner, daemon=True)
        with self._lock:
            self._jobs[job.id] = job
        job.thread.start()
        return job.id

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)
