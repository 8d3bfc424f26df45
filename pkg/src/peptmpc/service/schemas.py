"""Pydantic models of the HTTP API."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ExperimentRequest(BaseModel):
    task: Literal["easy", "hard"] = "easy"
    controllers: list[str] = Field(min_length=1)
    episodes: int = Field(default=100, ge=1)
    seed: int = 0
    weights_path: Optional[str] = None
    workers: int = Field(default=1, ge=1)
    n_steps: int = Field(default=225, ge=1)
    substeps: int = Field(default=1000, ge=1)
    record_trajectories: bool = True
    params: Optional[dict] = None
    plant_mass_scale: float = Field(default=1.0, gt=0)


class EpisodeRow(BaseModel):
    controller: str
    seed: int
    tracking_cost: float
    violation_cost: float
    mean_runtime_ms: float
    mean_feedback_ms: Optional[float] = None
    failures: int
    aborted: bool = False


class SummaryRow(BaseModel):
    controller: str
    episodes: int
    tracking_cost_mean: float
    tracking_cost_std: float
    violation_cost_mean: float
    violation_cost_std: float
    runtime_ms_mean: float
    feedback_ms_mean: Optional[float] = None
    failure_pct: float
    aborted_episodes: int = 0


class TrajectoryTrace(BaseModel):
    controller: str
    t: list[float]
    px: list[float]
    py: list[float]
    pz: list[float]
    vx: list[float]
    vy: list[float]
    vz: list[float]
    ref_px: list[float]
    ref_py: list[float]
    ref_pz: list[float]
    ref_vx: list[float]
    ref_vy: list[float]
    ref_vz: list[float]


class ExperimentResult(BaseModel):
    episodes: list[EpisodeRow]
    summary: list[SummaryRow]
    trajectories: list[TrajectoryTrace] = []


class ExperimentStatus(BaseModel):
    id: str
    status: Literal["queued", "running", "done", "error"]
    done: int = 0
    total: int = 0
    error: Optional[str] = None
    result: Optional[ExperimentResult] = None


class JobCreated(BaseModel):
    id: str


class EpisodeRequest(BaseModel):
    controller: str
    task: Literal["easy", "hard"] = "easy"
    seed: int = 0
    weights_path: Optional[str] = None
    n_steps: int = Field(default=225, ge=1)
    substeps: int = Field(default=1000, ge=1)


class ParseRequest(BaseModel):
    identifier: str


class ParseResponse(BaseModel):
    identifier: str
    kind: str
    M: Optional[int] = None
    N: Optional[int] = None
    beta: Optional[int] = None
    tau: Optional[float] = None
    pept_init: Optional[str] = None


class PolicyEvalRequest(BaseModel):
    weights: dict
    observations: list[list[float]]


class PolicyEvalResponse(BaseModel):
    controls: list[list[float]]


class ExpertDataRequest(BaseModel):
    controller: str = "RTI-40"
    task: Literal["easy", "hard"] = "easy"
    episodes: int = Field(default=5, ge=1)
    seed: int = 0
    weights_path: Optional[str] = None
    n_steps: int = Field(default=225, ge=1)
    substeps: int = Field(default=1000, ge=1)


class ExpertDataResponse(BaseModel):
    observations: list[list[float]]
    controls: list[list[float]]


class HealthResponse(BaseModel):
    status: str
    version: str
