"""Benchmark wiring: task definitions, controller construction and episode
batches for the quadcopter tracking problem.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controllers import (ControllerConfig, ControllerConfigError, MpcController,
                          PolicyController, parse_controller_id)
from .integrators import DiscreteDynamics
from .ocp import OcpSpec
from .policy import Policy, load_weights, lqr_policy
from .quadcopter import QuadParams, QuadcopterModel
from .simulation import (EPISODE_DURATION, EPISODE_STEPS, PLANT_SUBSTEPS,
                         EpisodeResult, TrajectoryRecord, aggregate_results,
                         run_episode)

log = logging.getLogger(__name__)

TASK_ALPHAS = {"easy": 0.8, "hard": 1.0}
PREDICTION_DT = 0.05

# quadcopter task weights and bounds
Q_WEIGHTS = np.array([5.0, 5.0, 5.0] + [0.1] * 9)
R_WEIGHTS = np.array([0.1] * 4)
X_UB = np.array([2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.2, 0.2, 0.2, 1.0, 1.0, 1.0])
X_LB = np.array([-2.0, -2.0, 0.0, -1.0, -1.0, -1.0, -0.2, -0.2, -0.2, -1.0, -1.0, -1.0])
U_LB = np.array([0.029] * 4)
U_UB = np.array([0.148] * 4)


def task_alpha(task: str) -> float:
    try:
        return TASK_ALPHAS[task]
    except KeyError:
        raise ControllerConfigError(f"unknown task {task!r}; expected one of "
                                    f"{sorted(TASK_ALPHAS)}") from None


def build_task_spec(config: ControllerConfig, dt: float = PREDICTION_DT) -> OcpSpec:
    """Quadcopter OCP for one controller configuration."""
    N = config.N
    M = N if config.kind == "RTI" else config.M
    return OcpSpec(nx=12, nu=4, M=M, N=N, dt=dt, q=Q_WEIGHTS, r=R_WEIGHTS,
                   x_lb=X_LB, x_ub=X_UB, u_lb=U_LB, u_ub=U_UB, tau=config.tau)


def build_policy(weights_path: str | None, model: QuadcopterModel,
                 dynamics: DiscreteDynamics) -> Policy:
    """Trained network when a weight file is given, else the LQR fallback."""
    if weights_path:
        net = load_weights(weights_path)
        if net.n_obs != model.nx or net.n_u != model.nu:
            raise ControllerConfigError(
                f"weight file dimensions ({net.n_obs}, {net.n_u}) do not match "
                f"the model ({model.nx}, {model.nu})")
        net.check_output_range(U_LB, U_UB)
        return net
    log.warning("no policy weights supplied; falling back to the LQR policy")
    lqr_spec = OcpSpec(nx=12, nu=4, M=1, N=1, dt=dynamics.dt, q=Q_WEIGHTS, r=R_WEIGHTS,
                       x_lb=X_LB, x_ub=X_UB, u_lb=U_LB, u_ub=U_UB)
    return lqr_policy(lqr_spec, dynamics, model.hover_state(), model.hover_control())


def make_controller(config: ControllerConfig, model: QuadcopterModel,
                    dynamics: DiscreteDynamics, policy: Policy | None):
    """Instantiate the controller matching a parsed configuration."""
    if config.kind == "PPO-RL":
        if policy is None:
            raise ControllerConfigError("PPO-RL requires a policy")
        return PolicyController(policy, U_LB, U_UB)
    spec = build_task_spec(config)
    return MpcController(config, spec, dynamics,
                         policy=policy if config.needs_policy else None)


@dataclass
class BatchResult:
    episodes: list[EpisodeResult] = field(default_factory=list)
    summaries: list[dict] = field(default_factory=list)
    trajectories: dict[str, TrajectoryRecord] = field(default_factory=dict)


def run_batch(controller_ids: list[str], task: str = "easy", episodes: int = 100,
              seed_base: int = 0, weights_path: str | None = None,
              workers: int = 1, duration: float = EPISODE_DURATION,
              n_steps: int = EPISODE_STEPS, substeps: int = PLANT_SUBSTEPS,
              record_trajectories: bool = True, params: QuadParams | None = None,
              plant_mass_scale: float = 1.0, progress=None) -> BatchResult:
    """Run an episode batch for every controller and aggregate summaries.

    Episode e of every controller uses seed seed_base + e, so controllers
    face identical initial states.  Episodes are independent; with
    workers > 1 they are spread over a thread pool.  plant_mass_scale != 1
    simulates a heavier/lighter plant than the prediction model assumes.
    """
    alpha = task_alpha(task)
    nominal = params or QuadParams()
    model = QuadcopterModel(nominal)
    if plant_mass_scale == 1.0:
        plant = model
    else:
        plant = QuadcopterModel(replace(nominal, m=plant_mass_scale * nominal.m,
                                        u_hover=plant_mass_scale * nominal.u_hover))
    dynamics = DiscreteDynamics(model, PREDICTION_DT)
    configs = [parse_controller_id(cid) for cid in controller_ids]
    policy = None
    if any(c.needs_policy for c in configs):
        policy = build_policy(weights_path, model, dynamics)

    result = BatchResult()
    total = len(configs) * episodes
    done = 0
    for config in configs:
        cid = config.render()

        def one(e: int, config=config, cid=cid):
            ctrl = make_controller(config, model, dynamics, policy)
            return run_episode(ctrl, cid, plant, build_task_spec(config)
                               if config.kind != "PPO-RL" else _metric_spec(),
                               alpha, seed_base + e, duration=duration,
                               n_steps=n_steps, substeps=substeps,
                               record=record_trajectories and e == 0)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(one, range(episodes)))
        else:
            outcomes = [one(e) for e in range(episodes)]
        rows = []
        for e, out in enumerate(outcomes):
            if isinstance(out, tuple):
                ep, rec = out
                result.trajectories[cid] = rec
            else:
                ep = out
            rows.append(ep)
            done += 1
            if progress is not None:
                progress(done, total)
        result.episodes.extend(rows)
        result.summaries.append(aggregate_results(rows))
    return result


def _metric_spec() -> OcpSpec:
    """Weights/bounds container used to score policy-only episodes."""
    return OcpSpec(nx=12, nu=4, M=1, N=1, dt=PREDICTION_DT, q=Q_WEIGHTS, r=R_WEIGHTS,
                   x_lb=X_LB, x_ub=X_UB, u_lb=U_LB, u_ub=U_UB)


def expert_dataset(controller_id: str, task: str = "easy", episodes: int = 5,
                   seed_base: int = 0, weights_path: str | None = None,
                   n_steps: int = EPISODE_STEPS, substeps: int = PLANT_SUBSTEPS
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Observation/control pairs from closed-loop runs of an expert controller.

    The observation layout matches the policy interface: plant state minus
    the current reference state.  Intended as training data for cloning
    pipelines.
    """
    alpha = task_alpha(task)
    model = QuadcopterModel(QuadParams())
    dynamics = DiscreteDynamics(model, PREDICTION_DT)
    config = parse_controller_id(controller_id)
    policy = build_policy(weights_path, model, dynamics) if (
        config.needs_policy or config.kind == "PPO-RL") else None
    spec = build_task_spec(config) if config.kind != "PPO-RL" else _metric_spec()
    obs_rows, u_rows = [], []
    for e in range(episodes):
        ctrl = make_controller(config, model, dynamics, policy)
        _, rec = run_episode(ctrl, controller_id, model, spec, alpha, seed_base + e,
                             n_steps=n_steps, substeps=substeps, record=True)
        obs_rows.append(rec.states - rec.state_refs)
        u_rows.append(rec.controls)
    return np.vstack(obs_rows), np.vstack(u_rows)
