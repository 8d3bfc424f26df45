"""Controller grammar, tail initialization, and the RTI step state machine."""
import numpy as np
import pytest

from peptmpc.controllers import (
    ControllerConfig,
    ControllerConfigError,
    MpcController,
    PolicyController,
    StepReport,
    init_rollout,
    init_stagewise,
    parse_controller_id,
)
from peptmpc.integrators import DiscreteDynamics
from peptmpc.ocp import OcpSpec, Reference, Trajectory
from peptmpc.qpsolver import QpSolution


class LinearTestModel:
    nx = 2
    nu = 1

    A = np.array([[0.0, 1.0], [-0.5, -0.1]])
    B = np.array([[0.0], [1.0]])

    def rhs(self, x, u):
        return x @ self.A.T + u @ self.B.T

    def jac(self, x, u):
        batch = np.shape(x)[:-1]
        return (np.broadcast_to(self.A, batch + (2, 2)).copy(),
                np.broadcast_to(self.B, batch + (2, 1)).copy())


class GainPolicy:
    """u = u_ref + K (x - x_ref), a minimal deterministic test policy."""

    def __init__(self, K):
        self.K = np.asarray(K, float)

    def control(self, x, x_ref, u_ref):
        return np.asarray(u_ref, float) + self.K @ (np.asarray(x, float) - np.asarray(x_ref, float))

    def control_jacobian(self, x, x_ref, u_ref):
        return self.K


def make_spec(M, N, tau=1e-2):
    return OcpSpec(
        nx=2, nu=1, M=M, N=N, dt=0.1,
        q=[1.0, 0.5], r=[0.2],
        x_lb=[-50.0, -50.0], x_ub=[50.0, 50.0],
        u_lb=[-40.0], u_ub=[40.0], tau=tau)


def zero_reference(N):
    return Reference(state_refs=np.zeros((N + 1, 2)), control_refs=np.zeros((N, 1)))


# ----- identifier grammar ---------------------------------------------------

@pytest.mark.parametrize("identifier,kind,M,N,beta,pept_init", [
    ("RTI-40", "RTI", None, 40, None, "stagewise"),
    ("RTI-20", "RTI", None, 20, None, "stagewise"),
    ("PT-10-20-4", "PT", 10, 20, 4, "stagewise"),
    ("CLC-10-20-1", "CLC", 10, 20, 1, "stagewise"),
    ("PEPT-10-20-2", "PEPT", 10, 20, 2, "stagewise"),
    ("PEPT-10-20-2-r", "PEPT", 10, 20, 2, "rollout"),
    ("PEPT-5-10", "PEPT", 5, 10, None, "stagewise"),
    ("PEPT-20-20-2", "PEPT", 20, 20, 2, "stagewise"),
])
def test_parse_valid_identifiers(identifier, kind, M, N, beta, pept_init):
    cfg = parse_controller_id(identifier)
    assert cfg.kind == kind
    assert cfg.M == M and cfg.N == N and cfg.beta == beta
    assert cfg.pept_init == pept_init


def test_parse_ppo_rl():
    cfg = parse_controller_id("PPO-RL")
    assert cfg.kind == "PPO-RL"
    assert cfg.render() == "PPO-RL"


@pytest.mark.parametrize("identifier", [
    "", "XTI-40", "RTI", "RTI-10-20", "PT-10", "PT-10-20-4-5",
    "PT-10-20-4-r", "CLC-10-20-1-r", "PEPT-30-20-2", "PEPT-0-20-2",
    "rti-40", "PT--10-20", "PEPT-10-20-2-rr",
])
def test_parse_invalid_identifiers(identifier):
    with pytest.raises(ControllerConfigError):
        parse_controller_id(identifier)


@pytest.mark.parametrize("identifier", [
    "RTI-40", "PT-10-20-4", "CLC-10-20-1", "PEPT-10-20-2", "PEPT-10-20-2-r",
])
def test_render_roundtrip(identifier):
    assert parse_controller_id(identifier).render() == identifier


def test_config_properties():
    cfg = parse_controller_id("PEPT-10-20-4")
    assert cfg.tau == pytest.approx(1e-4)
    assert cfg.control_horizon == 10
    assert cfg.needs_policy
    rti = parse_controller_id("RTI-40")
    assert rti.tau == pytest.approx(1e-2)   # default exponent
    assert rti.control_horizon == 40
    assert not rti.needs_policy
    assert parse_controller_id("PT-10-20-4").needs_policy is False
    # beta omitted renders with the default exponent made explicit
    assert parse_controller_id("PEPT-5-10").render() == "PEPT-5-10-2"


def test_config_validation():
    with pytest.raises(ControllerConfigError):
        ControllerConfig(kind="WAT", N=10)
    with pytest.raises(ControllerConfigError):
        ControllerConfig(kind="PT", N=10, M=11)
    with pytest.raises(ControllerConfigError):
        ControllerConfig(kind="PT", N=10, M=None)
    with pytest.raises(ControllerConfigError):
        ControllerConfig(kind="RTI", N=0)
    with pytest.raises(ControllerConfigError):
        ControllerConfig(kind="RTI", N=10, init="sideways")


# ----- tail initialization --------------------------------------------------

def tail_setup(M=2, N=5):
    model = LinearTestModel()
    dynamics = DiscreteDynamics(model, 0.1)
    rng = np.random.default_rng(0)
    states = rng.uniform(-1.0, 1.0, (N + 1, 2))
    controls = rng.uniform(-0.5, 0.5, (N, 1))
    prev = Trajectory(states=states, controls=controls)
    ref = Reference(state_refs=rng.uniform(-0.2, 0.2, (N + 1, 2)),
                    control_refs=rng.uniform(-0.1, 0.1, (N, 1)))
    policy = GainPolicy([[0.4, -0.3]])
    return prev, policy, dynamics, ref, M, N


@pytest.mark.parametrize("shifted", [False, True])
def test_init_stagewise_formulas(shifted):
    prev, policy, dynamics, ref, M, N = tail_setup()
    states, controls = init_stagewise(prev, policy, dynamics, ref, M, N, shifted)
    assert states.shape == (N - M + 1, 2)
    assert controls.shape == (N - M, 1)
    off = 1 if shifted else 0
    for i, k in enumerate(range(M, N + 1)):
        src = prev.states[k - 1 + off]
        u_src = policy.control(src, ref.state_refs[k - 1], ref.control_refs[min(k - 1, N - 1)])
        assert np.allclose(states[i], dynamics(src, u_src), atol=1e-14), k
    for i, k in enumerate(range(M, N)):
        expected = policy.control(prev.states[k + off], ref.state_refs[k], ref.control_refs[k])
        assert np.allclose(controls[i], expected, atol=1e-14), k


@pytest.mark.parametrize("shifted", [False, True])
def test_init_rollout_formulas(shifted):
    prev, policy, dynamics, ref, M, N = tail_setup()
    states, controls = init_rollout(prev, policy, dynamics, ref, M, N, shifted)
    start = prev.states[M - 1 + (1 if shifted else 0)]
    u0 = policy.control(start, ref.state_refs[M - 1], ref.control_refs[M - 1])
    x = dynamics(start, u0)
    assert np.allclose(states[0], x, atol=1e-14)
    for i, k in enumerate(range(M, N)):
        u = policy.control(x, ref.state_refs[k], ref.control_refs[k])
        assert np.allclose(controls[i], u, atol=1e-14)
        x = dynamics(x, u)
        assert np.allclose(states[i + 1], x, atol=1e-14)


def test_init_degenerate_tail_is_empty():
    prev, policy, dynamics, ref, _, N = tail_setup()
    states, controls = init_stagewise(prev, policy, dynamics, ref, N, N, False)
    assert states.shape == (1, 2)
    assert controls.shape == (0, 1)


def test_rollout_accumulates_while_stagewise_does_not():
    """The two strategies agree on the first tail state and differ later
    whenever the policy deviates from the previous trajectory."""
    prev, policy, dynamics, ref, M, N = tail_setup()
    s_states, _ = init_stagewise(prev, policy, dynamics, ref, M, N, False)
    r_states, _ = init_rollout(prev, policy, dynamics, ref, M, N, False)
    assert np.allclose(s_states[0], r_states[0], atol=1e-14)
    assert np.abs(s_states[-1] - r_states[-1]).max() > 1e-6


# ----- controller construction and stepping ---------------------------------

def test_controller_construction_errors():
    model = LinearTestModel()
    dynamics = DiscreteDynamics(model, 0.1)
    with pytest.raises(ControllerConfigError):
        MpcController(parse_controller_id("PPO-RL"), make_spec(4, 4), dynamics)
    with pytest.raises(ControllerConfigError):
        # horizon mismatch between spec and config
        MpcController(parse_controller_id("PT-2-6-2"), make_spec(2, 5), dynamics)
    with pytest.raises(ControllerConfigError):
        # RTI over a partially tightened spec
        MpcController(parse_controller_id("RTI-5"), make_spec(2, 5), dynamics)
    with pytest.raises(ControllerConfigError):
        # policy-based kind without a policy
        MpcController(parse_controller_id("CLC-2-5-2"), make_spec(2, 5), dynamics)


def make_controller(identifier, M, N, policy=None):
    cfg = parse_controller_id(identifier)
    spec = make_spec(M, N, tau=cfg.tau)
    dynamics = DiscreteDynamics(LinearTestModel(), 0.1)
    return MpcController(cfg, spec, dynamics, policy=policy), spec


def test_rti_step_converges_on_linear_problem():
    ctrl, spec = make_controller("RTI-5", 5, 5)
    ref = zero_reference(5)
    x0 = np.array([1.0, -0.5])
    r1 = ctrl.step(x0, ref)
    assert not r1.failure
    assert isinstance(r1, StepReport)
    assert r1.runtime == pytest.approx(r1.preparation_time + r1.feedback_time)
    # one full Newton step solves an LQ problem exactly, so re-solving the
    # same instance from the shifted warm start lands on the same optimum
    r2 = ctrl.step(x0, ref)
    assert not r2.failure
    assert np.abs(r2.u0 - r1.u0).max() < 1e-10
    assert r2.objective == pytest.approx(r1.objective, abs=1e-10)


def test_warmstart_mode_keeps_iterate():
    cfg = ControllerConfig(kind="RTI", N=5, init="warmstart")
    spec = make_spec(5, 5)
    dynamics = DiscreteDynamics(LinearTestModel(), 0.1)
    ctrl = MpcController(cfg, spec, dynamics)
    ref = zero_reference(5)
    x0 = np.array([1.0, -0.5])
    ctrl.step(x0, ref)
    first = ctrl.iterate
    ctrl.step(x0, ref)
    # warm-start from the optimum of the same problem is a fixed point
    assert np.abs(ctrl.iterate.states - first.states).max() < 1e-8


def test_two_phase_step_runs_all_kinds():
    policy = GainPolicy([[0.4, -0.3]])
    ref = zero_reference(6)
    x0 = np.array([0.8, -0.2])
    for ident in ("PT-3-6-2", "CLC-3-6-2", "PEPT-3-6-2", "PEPT-3-6-2-r"):
        ctrl, spec = make_controller(ident, 3, 6, policy=policy)
        rep = ctrl.step(x0, ref)
        assert not rep.failure, ident
        assert rep.u0.shape == (1,)
        # full-horizon iterate reconstructed: first phase + eliminated tail
        assert ctrl.iterate.states.shape == (7, 2)
        assert ctrl.iterate.controls.shape == (6, 1)
        rep2 = ctrl.step(x0, ref)
        assert not rep2.failure, ident


class UnusableSolver:
    """Solver stub returning a structurally complete but unusable solution."""

    def solve(self, stages, terminal, x0, term_lb=None, term_ub=None):
        T = len(stages)
        nx = stages[0].A.shape[0]
        nu = stages[0].B.shape[1]
        return QpSolution(
            states=np.zeros((T + 1, nx)), controls=np.zeros((T, nu)),
            lam_x_lb=np.zeros((T + 1, nx)), lam_x_ub=np.zeros((T + 1, nx)),
            lam_u_lb=np.zeros((T, nu)), lam_u_ub=np.zeros((T, nu)),
            stat_residual=1.0, eq_residual=1.0, ineq_residual=0.0,
            comp_residual=1.0, box_violation=0.0, objective=np.nan,
            iterations=50, status="max_iterations", mu_history=[],
            comp_relative=1.0)


def test_failed_solve_holds_last_control_and_drops_iterate():
    cfg = parse_controller_id("RTI-5")
    spec = make_spec(5, 5)
    dynamics = DiscreteDynamics(LinearTestModel(), 0.1)
    good = MpcController(cfg, spec, dynamics)
    ref = zero_reference(5)
    x0 = np.array([1.0, -0.5])
    r_good = good.step(x0, ref)
    assert not r_good.failure

    # same controller, solver swapped out mid-run
    good.solver = UnusableSolver()
    r_fail = good.step(x0, ref)
    assert r_fail.failure
    assert np.array_equal(r_fail.u0, r_good.u0)      # held control
    assert good.iterate is None                      # poisoned iterate dropped

    # with no history at all, the failed step falls back to the reference
    fresh = MpcController(cfg, spec, dynamics, solver=UnusableSolver())
    r_cold = fresh.step(x0, ref)
    assert r_cold.failure
    assert np.array_equal(r_cold.u0, ref.control_refs[0])


def test_reset_clears_state():
    ctrl, _ = make_controller("RTI-5", 5, 5)
    ref = zero_reference(5)
    ctrl.step(np.array([1.0, -0.5]), ref)
    assert ctrl.iterate is not None
    ctrl.reset()
    assert ctrl.iterate is None and ctrl.last_u is None


def test_degenerate_split_matches_rti():
    """PEPT with M = N runs the full-horizon RTI code path bit for bit."""
    policy = GainPolicy([[0.4, -0.3]])
    rti, _ = make_controller("RTI-6", 6, 6)
    pept, _ = make_controller("PEPT-6-6-2", 6, 6, policy=policy)
    dynamics = DiscreteDynamics(LinearTestModel(), 0.1)
    ref = zero_reference(6)
    x = np.array([0.7, -0.4])
    x2 = x.copy()
    for _ in range(5):
        ra = rti.step(x, ref)
        rb = pept.step(x2, ref)
        assert np.array_equal(ra.u0, rb.u0)
        x = dynamics(x, ra.u0)
        x2 = dynamics(x2, rb.u0)


def test_policy_controller_clips_and_reports():
    policy = GainPolicy([[40.0, 0.0]])
    ctrl = PolicyController(policy, u_lb=np.array([-0.5]), u_ub=np.array([0.5]))
    ref = Reference(state_refs=np.zeros((2, 2)), control_refs=np.zeros((1, 1)))
    rep = ctrl.step(np.array([10.0, 0.0]), ref)
    assert rep.u0[0] == 0.5                  # saturated at the upper bound
    assert rep.feedback_time is None
    assert not rep.failure
    assert ctrl.horizon == 1
    rep2 = ctrl.step(np.array([-10.0, 0.0]), ref)
    assert rep2.u0[0] == -0.5
