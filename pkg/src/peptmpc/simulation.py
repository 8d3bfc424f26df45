"""Closed-loop plant simulation, episode protocol and metrics.

The plant integrates the continuous dynamics with 1000 explicit-Euler
substeps per control period; the controllers replan every 0.02 s while their
prediction grid uses the model sampling time (0.05 s by default).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ocp import OcpSpec, Reference, stage_cost
from .quadcopter import ModelValidityError, QuadcopterModel, lemniscate_reference

EPISODE_DURATION = 4.5        # s
EPISODE_STEPS = 225           # controller calls per episode
PLANT_SUBSTEPS = 1000         # explicit-Euler substeps per control period
VIOLATION_WEIGHT = 100.0      # w in the violation-cost metric

# initial-state sampling box: uniform on [X0_LOW, X0_HIGH]
X0_HIGH = np.array([0.5, 0.5, 1.1, 0.5, 0.5, 0.5, 0.2, 0.2, 0.2, 0.5, 0.5, 0.5])
X0_LOW = np.array([-0.5, -0.5, 0.9, -0.5, -0.5, -0.5, -0.2, -0.2, -0.2, -0.5, -0.5, -0.5])


@dataclass
class EpisodeResult:
    """Aggregate metrics of one closed-loop episode."""

    controller: str
    seed: int
    tracking_cost: float
    violation_cost: float
    mean_runtime: float                  # s per step
    mean_feedback_time: float | None     # s per step; None for policy-only runs
    failure_rate: float                  # failed steps / nominal steps
    aborted: bool = False
    n_steps: int = EPISODE_STEPS

    @property
    def failures(self) -> int:
        return int(round(self.failure_rate * self.n_steps))


@dataclass
class TrajectoryRecord:
    """Per-step closed-loop trace kept for plotting exports."""

    times: np.ndarray        # (n,)
    states: np.ndarray       # (n, nx) plant states at the controller calls
    controls: np.ndarray     # (n, nu) applied controls
    state_refs: np.ndarray   # (n, nx) reference at the call times


def sample_initial_state(seed: int) -> np.ndarray:
    """Uniform sample from the initial-state box; deterministic per seed."""
    rng = np.random.default_rng(seed)
    return rng.uniform(X0_LOW, X0_HIGH)


def env_step(model: QuadcopterModel, x: np.ndarray, u: np.ndarray,
             ctrl_period: float, substeps: int = PLANT_SUBSTEPS) -> np.ndarray:
    """Advance the plant one control period under a held control."""
    return model.euler_substeps(x, u, ctrl_period, substeps)


def violation_cost(states: np.ndarray, controls: np.ndarray, x_lb: np.ndarray,
                   x_ub: np.ndarray, u_lb: np.ndarray, u_ub: np.ndarray,
                   weight: float = VIOLATION_WEIGHT,
                   n_steps: int | None = None) -> float:
    """J_v = (w / N_s) sum_i ||max(0, h(z_i))||_1 over the step records.

    h stacks the box residuals (x - x_ub, x_lb - x, u - u_ub, u_lb - u) of
    each recorded step; the state/control of a record are the pair the
    controller saw and applied.
    """
    states = np.atleast_2d(np.asarray(states, float))
    controls = np.atleast_2d(np.asarray(controls, float))
    if states.shape[0] != controls.shape[0]:
        raise ValueError("states and controls must pair up one per step")
    n = n_steps if n_steps is not None else states.shape[0]
    if n < 1:
        raise ValueError("violation cost needs at least one step")
    total = (np.maximum(states - x_ub, 0.0).sum()
             + np.maximum(x_lb - states, 0.0).sum()
             + np.maximum(controls - u_ub, 0.0).sum()
             + np.maximum(u_lb - controls, 0.0).sum())
    return float(weight / n * total)


def reference_window(t0: float, horizon: int, dt: float, alpha: float,
                     u_hover: float, period: float = EPISODE_DURATION) -> Reference:
    """Lemniscate reference over the prediction grid starting at time t0."""
    times = t0 + dt * np.arange(horizon + 1)
    state_refs, control_refs = lemniscate_reference(times, alpha, period=period,
                                                    u_hover=u_hover)
    return Reference(state_refs=state_refs, control_refs=control_refs[:horizon])


def run_episode(controller, controller_id: str, model: QuadcopterModel,
                spec: OcpSpec, alpha: float, seed: int,
                duration: float = EPISODE_DURATION, n_steps: int = EPISODE_STEPS,
                substeps: int = PLANT_SUBSTEPS, x0: np.ndarray | None = None,
                record: bool = False
                ) -> EpisodeResult | tuple[EpisodeResult, TrajectoryRecord]:
    """Run one closed-loop episode and aggregate its metrics.

    All non-timing outputs are fully determined by (controller config, seed).
    """
    ctrl_period = duration / n_steps
    horizon = getattr(controller, "horizon", spec.N)
    u_hover = model.hover_control()
    x = sample_initial_state(seed) if x0 is None else np.asarray(x0, float).copy()
    controller.reset()

    xs = np.empty((n_steps, spec.nx))
    us = np.empty((n_steps, spec.nu))
    times = np.empty(n_steps)
    ref0s = np.empty((n_steps, spec.nx))
    runtimes: list[float] = []
    feedbacks: list[float] = []
    track = 0.0
    failed_steps = 0
    completed = 0
    aborted = False

    for i in range(n_steps):
        t_i = i * ctrl_period
        ref = reference_window(t_i, horizon, spec.dt, alpha, u_hover)
        report = controller.step(x, ref)
        u = np.asarray(report.u0, float)
        xs[i], us[i], times[i], ref0s[i] = x, u, t_i, ref.state_refs[0]
        runtimes.append(report.runtime)
        if report.feedback_time is not None:
            feedbacks.append(report.feedback_time)
        failed_steps += int(report.failure)
        track += stage_cost(x, u, ref.state_refs[0], ref.control_refs[0], spec)
        try:
            x = env_step(model, x, u, ctrl_period, substeps)
        except ModelValidityError:
            x = np.full(spec.nx, np.nan)
        completed = i + 1
        if not np.all(np.isfinite(x)):
            aborted = True
            break

    n_done = completed
    failure_rate = (failed_steps + (n_steps - n_done)) / n_steps
    result = EpisodeResult(
        controller=controller_id, seed=seed,
        tracking_cost=track / n_done,
        violation_cost=violation_cost(xs[:n_done], us[:n_done], spec.x_lb, spec.x_ub,
                                      spec.u_lb, spec.u_ub, n_steps=n_done),
        mean_runtime=float(np.mean(runtimes)),
        mean_feedback_time=float(np.mean(feedbacks)) if feedbacks else None,
        failure_rate=failure_rate, aborted=aborted, n_steps=n_steps)
    if not record:
        return result
    rec = TrajectoryRecord(times=times[:n_done].copy(), states=xs[:n_done].copy(),
                           controls=us[:n_done].copy(), state_refs=ref0s[:n_done].copy())
    return result, rec


def aggregate_results(results: list[EpisodeResult]) -> dict:
    """Order-invariant per-controller summary statistics."""
    if not results:
        raise ValueError("no episode results to aggregate")
    ids = {r.controller for r in results}
    if len(ids) != 1:
        raise ValueError("aggregate expects results of a single controller")
    tracking = np.array([r.tracking_cost for r in results])
    violation = np.array([r.violation_cost for r in results])
    runtimes = np.array([r.mean_runtime for r in results])
    feedbacks = [r.mean_feedback_time for r in results if r.mean_feedback_time is not None]
    total_failed = sum(r.failures for r in results)
    total_steps = sum(r.n_steps for r in results)
    return {
        "controller": results[0].controller,
        "episodes": len(results),
        "tracking_cost_mean": float(np.mean(tracking)),
        "tracking_cost_std": float(np.std(tracking)),
        "violation_cost_mean": float(np.mean(violation)),
        "violation_cost_std": float(np.std(violation)),
        "runtime_ms_mean": float(np.mean(runtimes) * 1e3),
        "feedback_ms_mean": float(np.mean(feedbacks) * 1e3) if feedbacks else None,
        "failure_pct": 100.0 * total_failed / total_steps,
        "aborted_episodes": sum(int(r.aborted) for r in results),
    }
