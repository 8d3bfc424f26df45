"""Real-time MPC toolkit: partial tightening with policy-based tail
initialization (PEPT), plus RTI/PT/CLC baselines and a quadcopter
trajectory-tracking benchmark.
"""
from .controllers import (ControllerConfig, ControllerConfigError, MpcController,
                          PolicyController, StepReport, parse_controller_id)
from .integrators import DiscreteDynamics, rk4_sensitivities, rk4_step
from .ocp import OcpSpec, Reference, Trajectory, shift, stage_cost
from .policy import LqrPolicy, PolicyNet, load_weights, lqr_policy, save_weights
from .qpsolver import InteriorPointSolver, QpSolution
from .quadcopter import QuadParams, QuadState, QuadcopterModel, lemniscate_reference
from .riccati import RiccatiSweep, backward_sweep, closed_loop_sweep, forward_sweep
from .simulation import (EpisodeResult, env_step, run_episode, sample_initial_state,
                         violation_cost)
from .tightening import (StageLinearization, TerminalQuadratic, barrier_value,
                         ggn_stage_hessian, linearize_trajectory)

__version__ = "0.1.0"

__all__ = [
    "ControllerConfig", "ControllerConfigError", "MpcController", "PolicyController",
    "StepReport", "parse_controller_id", "DiscreteDynamics", "rk4_sensitivities",
    "rk4_step", "OcpSpec", "Reference", "Trajectory", "shift", "stage_cost",
    "LqrPolicy", "PolicyNet", "load_weights", "lqr_policy", "save_weights",
    "InteriorPointSolver", "QpSolution", "QuadParams", "QuadState", "QuadcopterModel",
    "lemniscate_reference", "RiccatiSweep", "backward_sweep", "closed_loop_sweep",
    "forward_sweep", "EpisodeResult", "env_step", "run_episode", "sample_initial_state",
    "violation_cost", "StageLinearization", "TerminalQuadratic", "barrier_value",
    "ggn_stage_hessian", "linearize_trajectory",
]
