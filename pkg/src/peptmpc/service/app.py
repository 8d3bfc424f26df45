"""FastAPI service exposing the experiment driver and policy utilities."""
from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, experiments
from ..controllers import ControllerConfigError, parse_controller_id
from ..policy import PolicyError, weights_from_dict
from ..quadcopter import QuadParams
from ..simulation import EpisodeResult, TrajectoryRecord
from . import schemas
from .jobs import JobRegistry

app = FastAPI(title="peptmpc", version=__version__)
registry = JobRegistry()


def _episode_row(ep: EpisodeResult) -> schemas.EpisodeRow:
    return schemas.EpisodeRow(
        controller=ep.controller, seed=ep.seed, tracking_cost=ep.tracking_cost,
        violation_cost=ep.violation_cost, mean_runtime_ms=ep.mean_runtime * 1e3,
        mean_feedback_ms=None if ep.mean_feedback_time is None
        else ep.mean_feedback_time * 1e3,
        failures=ep.failures, aborted=ep.aborted)


def _trace(cid: str, rec: TrajectoryRecord) -> schemas.TrajectoryTrace:
    cols = {name: rec.states[:, i].tolist() for i, name in
            enumerate(["px", "py", "pz", "vx", "vy", "vz"])}
    refs = {f"ref_{name}": rec.state_refs[:, i].tolist() for i, name in
            enumerate(["px", "py", "pz", "vx", "vy", "vz"])}
    return schemas.TrajectoryTrace(controller=cid, t=rec.times.tolist(), **cols, **refs)


def _batch_to_result(batch: experiments.BatchResult) -> schemas.ExperimentResult:
    return schemas.ExperimentResult(
        episodes=[_episode_row(ep) for ep in batch.episodes],
        summary=[schemas.SummaryRow(**s) for s in batch.summaries],
        trajectories=[_trace(cid, rec) for cid, rec in batch.trajectories.items()])


def _validated(request: schemas.ExperimentRequest) -> None:
    for cid in request.controllers:
        parse_controller_id(cid)


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/experiments", response_model=schemas.JobCreated)
def submit_experiment(request: schemas.ExperimentRequest) -> schemas.JobCreated:
    try:
        _validated(request)
        params = QuadParams.from_dict(request.params) if request.params else None
    except (ControllerConfigError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))

    def work(progress):
        batch = experiments.run_batch(
            request.controllers, task=request.task, episodes=request.episodes,
            seed_base=request.seed, weights_path=request.weights_path,
            workers=request.workers, n_steps=request.n_steps,
            substeps=request.substeps,
            record_trajectories=request.record_trajectories, params=params,
            plant_mass_scale=request.plant_mass_scale, progress=progress)
        return _batch_to_result(batch)

    return schemas.JobCreated(id=registry.submit(work))


@app.get("/experiments/{job_id}", response_model=schemas.ExperimentStatus)
def experiment_status(job_id: str) -> schemas.ExperimentStatus:
    job = registry.get(job_id)
    if job is None:
        raise HTTPException(status_code=404, detail=f"no job {job_id}")
    return schemas.ExperimentStatus(id=job.id, status=job.status, done=job.done,
                                    total=job.total, error=job.error,
                                    result=job.result)


@app.post("/episodes", response_model=schemas.EpisodeRow)
def run_single_episode(request: schemas.EpisodeRequest) -> schemas.EpisodeRow:
    try:
        batch = experiments.run_batch(
            [request.controller], task=request.task, episodes=1,
            seed_base=request.seed, weights_path=request.weights_path,
            n_steps=request.n_steps, substeps=request.substeps,
            record_trajectories=False)
    except (ControllerConfigError, PolicyError, FileNotFoundError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return _episode_row(batch.episodes[0])


@app.post("/controllers/parse", response_model=schemas.ParseResponse)
def parse_identifier(request: schemas.ParseRequest) -> schemas.ParseResponse:
    try:
        config = parse_controller_id(request.identifier)
    except ControllerConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    if config.kind == "PPO-RL":
        return schemas.ParseResponse(identifier=config.render(), kind=config.kind)
    return schemas.ParseResponse(
        identifier=config.render(), kind=config.kind,
        M=config.M if config.kind != "RTI" else config.N, N=config.N,
        beta=config.beta, tau=config.tau,
        pept_init=config.pept_init if config.kind == "PEPT" else None)


@app.post("/policy/eval", response_model=schemas.PolicyEvalResponse)
def policy_eval(request: schemas.PolicyEvalRequest) -> schemas.PolicyEvalResponse:
    try:
        net = weights_from_dict(request.weights)
        controls = [net.forward(np.asarray(obs, float)).tolist()
                    for obs in request.observations]
    except PolicyError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return schemas.PolicyEvalResponse(controls=controls)


@app.post("/datasets/expert", response_model=schemas.ExpertDataResponse)
def expert_data(request: schemas.ExpertDataRequest) -> schemas.ExpertDataResponse:
    try:
        obs, controls = experiments.expert_dataset(
            request.controller, task=request.task, episodes=request.episodes,
            seed_base=request.seed, weights_path=request.weights_path,
            n_steps=request.n_steps, substeps=request.substeps)
    except (ControllerConfigError, PolicyError, FileNotFoundError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return schemas.ExpertDataResponse(observations=obs.tolist(),
                                      controls=controls.tolist())
