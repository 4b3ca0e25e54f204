"""Background jobs with one-mutator-per-session discipline.

Jobs run on daemon threads; snapshots are plain dicts assembled under a
short lock, so readers never wait on a running job. Terminal states are
final: the manager only ever writes queued -> running -> done/failed.
"""
from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from typing import Any, Callable

KINDS = ("learn_layer1", "score", "train_encoder_rest", "train_decoder", "evaluate")
QUEUED, RUNNING, DONE, FAILED = "queued", "running", "done", "failed"


class JobConflictError(RuntimeError):
    """A mutating job is already in flight for this session."""


@dataclass
class Job:
    id: str
    session_id: str
    kind: str
    state: str = QUEUED
    progress: float = 0.0
    result: Any = None
    error: str = ""

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "session_id": self.session_id,
            "kind": self.kind,
            "state": self.state,
            "progress": round(self.progress, 4),
            "result": self.result,
            "error": self.error,
        }


class JobManager:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._threads: dict[str, threading.Thread] = {}

    def active_for(self, session_id: str) -> Job | None:
        with self._lock:
            for job in self._jobs.values():
                if job.session_id == session_id and job.state in (QUEUED, RUNNING):
                    return job
        return None

    def submit(self, session_id: str, kind: str, work: Callable[["JobHandle"], Any]) -> Job:
        if kind not in KINDS:
            raise ValueError(f"unknown job kind {kind!r}")
        with self._lock:
            for job in self._jobs.values():
                if job.session_id == session_id and job.state in (QUEUED, RUNNING):
                    raise JobConflictError(f"job {job.id} ({job.kind}) still {job.state}")
            job = Job(id=uuid.uuid4().hex[:12], session_id=session_id, kind=kind)
            self._jobs[job.id] = job
        handle = JobHandle(self, job.id)
        thread = threading.Thread(target=self._run, args=(job.id, work, handle), daemon=True)
        self._threads[job.id] = thread
        thread.start()
        return job

    def _run(self, job_id: str, work, handle):
        with self._lock:
            job = self._jobs[job_id]
            job.state = RUNNING
        try:
            result = work(handle)
        except Exception as exc:  # noqa: BLE001  surfaced via the job record
            with self._lock:
                job.state = FAILED
                job.error = f"{type(exc).__name__}: {exc}"
                job.progress = 1.0
        else:
            with self._lock:
                job.state = DONE
                job.result = result
                job.progress = 1.0

    def set_progress(self, job_id: str, fraction: float) -> None:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is not None and job.state == RUNNING:
                job.progress = max(0.0, min(1.0, float(fraction)))

    def get(self, job_id: str) -> dict | None:
        with self._lock:
            job = self._jobs.get(job_id)
            return job.snapshot() if job else None

    def wait(self, job_id: str, timeout: float = 60.0) -> dict:
        thread = self._threads.get(job_id)
        if thread is not None:
            thread.join(timeout)
        snap = self.get(job_id)
        if snap is None:
            raise KeyError(job_id)
        return snap


@dataclass
class JobHandle:
    manager: JobManager
    job_id: str

    def progress(self, fraction: float) -> None:
        self.manager.set_progress(self.job_id, fraction)
