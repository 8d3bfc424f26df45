"""Controller families: RTI, PT, CLC, PEPT and the standalone policy runner.

Every MPC controller executes one preparation (initialize + linearize +
tail elimination) and one feedback QP solve per sampling instant.  The
degenerate split M = N collapses PT/CLC/PEPT onto the plain full-horizon
RTI code path.
"""
from __future__ import annotations

import re
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import qpsolver, riccati
from .integrators import DiscreteDynamics, IntegrationError
from .ocp import OcpSpec, Reference, Trajectory, shift
from .policy import Policy
from .quadcopter import ModelValidityError
from .riccati import PolicyLinearization, RiccatiFactorizationError
from .tightening import InfeasiblePointError, linearize_trajectory

KINDS = ("RTI", "PT", "CLC", "PEPT", "PPO-RL")
INIT_MODES = ("shift", "warmstart")
PEPT_INITS = ("stagewise", "rollout")


class ControllerConfigError(ValueError):
    """Malformed controller identifier or inconsistent configuration."""


@dataclass(frozen=True)
class ControllerConfig:
    """Parsed controller identity plus run options.

    The identifier grammar covers kind, horizons and barrier exponent
    (``PEPT-10-20-2-r``); the initialization mode (shift/warm-start) is a
    run option outside the identifier.
    """

    kind: str
    N: int
    M: int | None = None          # None for RTI / PPO-RL
    beta: int | None = None       # barrier exponent, tau = 10**-beta
    pept_init: str = "stagewise"  # PEPT only; "rollout" renders as "-r"
    init: str = "shift"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ControllerConfigError(f"unknown controller kind {self.kind!r}")
        if self.init not in INIT_MODES:
            raise ControllerConfigError(f"unknown init mode {self.init!r}")
        if self.pept_init not in PEPT_INITS:
            raise ControllerConfigError(f"unknown PEPT init {self.pept_init!r}")
        if self.kind != "PPO-RL":
            if self.N < 1:
                raise ControllerConfigError("N must be >= 1")
            if self.kind != "RTI":
                if self.M is None or not (1 <= self.M <= self.N):
                    raise ControllerConfigError("two-phase controllers need 1 <= M <= N")

    @property
    def control_horizon(self) -> int:
        return self.N if self.M is None else self.M

    @property
    def tau(self) -> float:
        return 10.0 ** (-(self.beta if self.beta is not None else 2))

    @property
    def needs_policy(self) -> bool:
        return self.kind in ("CLC", "PEPT", "PPO-RL")

    def render(self) -> str:
        if self.kind == "PPO-RL":
            return "PPO-RL"
        if self.kind == "RTI":
            return f"RTI-{self.N}"
        beta = self.beta if self.beta is not None else 2
        name = f"{self.kind}-{self.M}-{self.N}-{beta}"
        if self.kind == "PEPT" and self.pept_init == "rollout":
            name += "-r"
        return name


_ID_RE = re.compile(r"^(RTI|PT|CLC|PEPT)((?:-\d+)+)(-r)?$")


def parse_controller_id(identifier: str) -> ControllerConfig:
    """Parse identifiers like RTI-40, PT-10-20-4, PEPT-10-20-2-r, PPO-RL."""
    identifier = identifier.strip()
    if identifier == "PPO-RL":
        return ControllerConfig(kind="PPO-RL", N=0)
    m = _ID_RE.match(identifier)
    if not m:
        raise ControllerConfigError(f"cannot parse controller identifier {identifier!r}")
    kind, numbers, rollout = m.group(1), [int(t) for t in m.group(2).split("-")[1:]], m.group(3)
    if rollout and kind != "PEPT":
        raise ControllerConfigError(f"{identifier!r}: '-r' is only valid for PEPT")
    if kind == "RTI":
        if len(numbers) != 1:
            raise ControllerConfigError(f"{identifier!r}: RTI takes exactly one horizon number")
        return ControllerConfig(kind="RTI", N=numbers[0])
    if len(numbers) == 2:
        M, N = numbers
        beta = None
    elif len(numbers) == 3:
        M, N, beta = numbers
    else:
        raise ControllerConfigError(
            f"{identifier!r}: {kind} takes M-N or M-N-beta, got {len(numbers)} numbers")
    return ControllerConfig(kind=kind, M=M, N=N, beta=beta,
                            pept_init="rollout" if rollout else "stagewise")


@dataclass
class StepReport:
    """Per-sampling-instant accounting of one controller step."""

    u0: np.ndarray
    preparation_time: float
    feedback_time: float | None
    failure: bool = False
    repairs: int = 0
    qp_iterations: int = 0
    kkt_residual: float = np.nan
    increment_norm: float = np.nan
    objective: float = np.nan

    @property
    def runtime(self) -> float:
        return self.preparation_time + (self.feedback_time or 0.0)


# ----- second-phase initialization (policy-based) --------------------------

def init_stagewise(prev: Trajectory, policy: Policy, dynamics: DiscreteDynamics,
                   ref: Reference, M: int, N: int, shifted: bool
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Stage-wise independent forward simulations for the tail iterate.

    Warm-start form: x_k+ = f(x*_{k-1}, pi(x*_{k-1})), u_k+ = pi(x*_k).
    Shift form uses x*_k and x*_{k+1} instead.  Returns (states x_M..x_N,
    controls u_M..u_{N-1}).
    """
    off = 1 if shifted else 0
    src_x = prev.states[M - 1 + off:N + off]          # one source per x_k+, k in [M, N]
    pol_x = np.stack([policy.control(src_x[i], ref.state_refs[M - 1 + i],
                                     ref.control_refs[min(M - 1 + i, N - 1)])
                      for i in range(src_x.shape[0])])
    states = dynamics(src_x, pol_x)
    controls = np.stack([policy.control(prev.states[k + off], ref.state_refs[k],
                                        ref.control_refs[k])
                         for k in range(M, N)]) if N > M else np.empty((0, prev.controls.shape[1]))
    return states, controls


def init_rollout(prev: Trajectory, policy: Policy, dynamics: DiscreteDynamics,
                 ref: Reference, M: int, N: int, shifted: bool
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Forward simulation (rollout) under the policy for the tail iterate.

    Starts from x*_{M-1} (warm-start form) or x*_M (shift form); the rest of
    the tail is dynamically consistent by construction.
    """
    start = prev.states[M - 1 + (1 if shifted else 0)]
    nu = prev.controls.shape[1]
    states = np.empty((N - M + 1, prev.states.shape[1]))
    controls = np.empty((N - M, nu))
    u_start = policy.control(start, ref.state_refs[M - 1], ref.control_refs[M - 1])
    states[0] = dynamics(start, u_start)
    for i, k in enumerate(range(M, N)):
        controls[i] = policy.control(states[i], ref.state_refs[k], ref.control_refs[k])
        states[i + 1] = dynamics(states[i], controls[i])
    return states, controls


# ----- controllers ---------------------------------------------------------

class MpcController:
    """Stateful RTI-style controller for kinds RTI, PT, CLC, PEPT."""

    def __init__(self, config: ControllerConfig, spec: OcpSpec,
                 dynamics: DiscreteDynamics, policy: Policy | None = None,
                 solver: qpsolver.InteriorPointSolver | None = None):
        if config.kind == "PPO-RL":
            raise ControllerConfigError("PPO-RL runs through PolicyController")
        if config.kind != "RTI":
            if spec.M != config.M or spec.N != config.N:
                raise ControllerConfigError("spec horizons do not match the controller config")
        elif spec.N != config.N or spec.M != spec.N:
            raise ControllerConfigError("RTI needs spec.M == spec.N == config.N")
        if config.needs_policy and policy is None:
            raise ControllerConfigError(f"{config.kind} requires a policy")
        self.config = config
        self.spec = spec
        self.dynamics = dynamics
        self.policy = policy
        self.solver = solver or qpsolver.InteriorPointSolver()
        self.iterate: Trajectory | None = None
        self.last_u: np.ndarray | None = None

    def reset(self) -> None:
        self.iterate = None
        self.last_u = None

    @property
    def horizon(self) -> int:
        """Reference-window length needed per step."""
        return self.spec.N

    @property
    def _two_phase(self) -> bool:
        return self.config.kind != "RTI" and self.spec.M < self.spec.N

    def _prepare_iterate(self, x_hat: np.ndarray, ref: Reference) -> Trajectory:
        spec = self.spec
        if self.iterate is None:
            traj = Trajectory.constant(x_hat, ref.control_refs[0], spec.N)
            shifted = False
        elif self.config.init == "shift":
            traj = shift(self.iterate, self.dynamics)
            shifted = True
        else:
            traj = self.iterate
            shifted = False
        if self.config.kind == "PEPT" and self._two_phase:
            prev = self.iterate if self.iterate is not None else traj
            initer = init_rollout if self.config.pept_init == "rollout" else init_stagewise
            states, controls = initer(prev, self.policy, self.dynamics, ref,
                                      spec.M, spec.N, shifted and self.iterate is not None)
            traj = traj.replace_tail(spec.M, states, controls)
        return traj

    def rti_step(self, x_hat: np.ndarray, ref: Reference) -> StepReport:
        """One preparation + one feedback QP solve; applies a full Newton step."""
        spec = self.spec
        x_hat = np.asarray(x_hat, float)
        t0 = time.perf_counter()
        try:
            prepared = self._prepare_iterate(x_hat, ref)
            two_phase = self._two_phase
            tighten_from = spec.M if two_phase else spec.N
            lin = linearize_trajectory(prepared, ref, spec, self.dynamics,
                                       tighten_from=tighten_from)
            sweep = None
            if two_phase:
                tail = lin.stages[spec.M:]
                if self.config.kind == "CLC":
                    pol = self._policy_linearization(tail, ref)
                    terminal = riccati.closed_loop_sweep(tail, pol, lin.terminal)
                else:
                    terminal, sweep = riccati.backward_sweep(tail, lin.terminal)
                    pol = None
            else:
                terminal = lin.terminal
        except (RiccatiFactorizationError, ModelValidityError,
                InfeasiblePointError, IntegrationError):
            # The warm start could not even be linearized; drop it so the next
            # step cold-restarts from the measurement instead of failing forever.
            self.iterate = None
            prep = time.perf_counter() - t0
            return self._failed_step(prep, 0.0, ref)
        prep = time.perf_counter() - t0

        t1 = time.perf_counter()
        first = lin.stages[:spec.M] if two_phase else lin.stages
        try:
            if two_phase:
                sol = self.solver.solve(first, terminal, x_hat)
            else:
                sol = self.solver.solve(first, terminal, x_hat,
                                        term_lb=spec.x_lb, term_ub=spec.x_ub)
            if not sol.usable:
                # A warm start whose QP cannot be solved to a usable residual
                # is worth less than the plain measurement: drop it and let
                # the next instant cold-start instead of re-linearizing the
                # same poisoned trajectory forever.
                feedback = time.perf_counter() - t1
                self.iterate = None
                return self._failed_step(prep, feedback, ref, sol)
            if two_phase:
                if self.config.kind == "CLC":
                    tail_x, tail_u = riccati.closed_loop_forward(tail, pol, sol.states[-1])
                else:
                    tail_x, tail_u = riccati.forward_sweep(sweep, sol.states[-1], tail)
                states = np.vstack([sol.states, tail_x[1:]])
                controls = np.vstack([sol.controls, tail_u])
            else:
                states, controls = sol.states, sol.controls
            if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
                feedback = time.perf_counter() - t1
                self.iterate = None
                return self._failed_step(prep, feedback, ref, sol)
            new_iterate = Trajectory(states, controls)
        except (RiccatiFactorizationError, ValueError):
            feedback = time.perf_counter() - t1
            self.iterate = None
            return self._failed_step(prep, feedback, ref)
        feedback = time.perf_counter() - t1

        increment = max(float(np.max(np.abs(new_iterate.states - prepared.states))),
                        float(np.max(np.abs(new_iterate.controls - prepared.controls))))
        self.iterate = new_iterate
        u0 = controls[0].copy()
        self.last_u = u0
        return StepReport(u0=u0, preparation_time=prep, feedback_time=feedback,
                          failure=False, repairs=lin.repaired,
                          qp_iterations=sol.iterations, kkt_residual=sol.kkt_max,
                          increment_norm=increment, objective=sol.objective)

    step = rti_step

    def _policy_linearization(self, tail_stages, ref: Reference) -> PolicyLinearization:
        spec = self.spec
        points = np.stack([s.x_bar for s in tail_stages])
        values = np.empty((len(tail_stages), spec.nu))
        jacs = np.empty((len(tail_stages), spec.nu, spec.nx))
        for i, k in enumerate(range(spec.M, spec.N)):
            values[i] = self.policy.control(points[i], ref.state_refs[k], ref.control_refs[k])
            jacs[i] = self.policy.control_jacobian(points[i], ref.state_refs[k],
                                                   ref.control_refs[k])
        return PolicyLinearization(points=points, values=values, jacobians=jacs)

    def _failed_step(self, prep: float, feedback: float, ref: Reference,
                     sol: qpsolver.QpSolution | None = None) -> StepReport:
        u0 = self.last_u if self.last_u is not None else ref.control_refs[0].copy()
        return StepReport(u0=np.asarray(u0, float).copy(), preparation_time=prep,
                          feedback_time=feedback, failure=True,
                          qp_iterations=sol.iterations if sol else 0,
                          kkt_residual=sol.kkt_max if sol else np.nan)


class PolicyController:
    """Standalone policy runner; output saturated to the control box."""

    horizon = 1

    def __init__(self, policy: Policy, u_lb: np.ndarray, u_ub: np.ndarray):
        self.policy = policy
        self.u_lb = np.asarray(u_lb, float)
        self.u_ub = np.asarray(u_ub, float)

    def reset(self) -> None:
        pass

    def step(self, x_hat: np.ndarray, ref: Reference) -> StepReport:
        t0 = time.perf_counter()
        u = self.policy.control(np.asarray(x_hat, float), ref.state_refs[0],
                                ref.control_refs[0])
        u0 = np.clip(u, self.u_lb, self.u_ub)
        prep = time.perf_counter() - t0
        return StepReport(u0=u0, preparation_time=prep, feedback_time=None)
