"""HTTP service layer: pydantic schemas, background jobs, FastAPI app."""
from .app import app
from .jobs import Job, JobRegistry

__all__ = ["app", "Job", "JobRegistry"]
