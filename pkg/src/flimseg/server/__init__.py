from .app import create_app
from .jobs import Job, JobManager

__all__ = ["create_app", "Job", "JobManager"]
