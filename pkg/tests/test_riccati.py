"""Riccati backward/forward sweeps against dense KKT elimination."""
import numpy as np
import pytest

from peptmpc.riccati import (
    PolicyLinearization,
    RiccatiFactorizationError,
    backward_sweep,
    closed_loop_forward,
    closed_loop_sweep,
    forward_sweep,
)
from peptmpc.tightening import StageLinearization, TerminalQuadratic

from oracles import dense_lq_solution, dense_value_function, random_stage_data


def make_stages(data):
    As, Bs, cs, Qs, Rs, Ss, qs, rs, consts, P_T, p_T, c0_T = data
    T, nx = As.shape[0], As.shape[1]
    nu = Bs.shape[2]
    stages = [
        StageLinearization(
            A=As[k], B=Bs[k], c=cs[k], Q_blk=Qs[k], R_blk=Rs[k], S_blk=Ss[k],
            q=qs[k], r=rs[k], const_term=float(consts[k]),
            x_bar=np.zeros(nx), u_bar=np.zeros(nu))
        for k in range(T)
    ]
    return stages, TerminalQuadratic(P=P_T, p=p_T, c0=c0_T)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b).max() / max(1.0, np.abs(b).max())


@pytest.mark.parametrize("seed", range(8))
def test_backward_sweep_matches_dense_elimination(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.choice([1, 3, 6]))
    nx = int(rng.choice([2, 4]))
    nu = int(rng.choice([1, 2]))
    data = random_stage_data(rng, T, nx, nu)
    stages, terminal = make_stages(data)
    entry, sweep = backward_sweep(stages, terminal)
    P_ref, p_ref, c0_ref = dense_value_function(*data, nx)
    assert rel_err(entry.P, P_ref) < 1e-8
    assert rel_err(entry.p, p_ref) < 1e-8
    assert abs(entry.c0 - c0_ref) < 1e-8 * max(1.0, abs(c0_ref))


@pytest.mark.parametrize("seed", range(8))
def test_forward_sweep_matches_dense_solution(seed):
    rng = np.random.default_rng(100 + seed)
    T = int(rng.choice([1, 4, 8]))
    nx = int(rng.choice([2, 4]))
    nu = int(rng.choice([1, 2]))
    data = random_stage_data(rng, T, nx, nu)
    stages, terminal = make_stages(data)
    _, sweep = backward_sweep(stages, terminal)
    x0 = rng.uniform(-1.0, 1.0, nx)
    xs, us = forward_sweep(sweep, x0, stages)
    xs_ref, us_ref, _ = dense_lq_solution(*data, x0)
    assert rel_err(xs, xs_ref) < 1e-8
    assert rel_err(us, us_ref) < 1e-8


def test_backward_sweep_value_matches_dense_optimum():
    rng = np.random.default_rng(7)
    data = random_stage_data(rng, 5, 3, 2)
    stages, terminal = make_stages(data)
    entry, _ = backward_sweep(stages, terminal)
    for _ in range(3):
        x0 = rng.uniform(-1.0, 1.0, 3)
        _, _, val_ref = dense_lq_solution(*data, x0)
        assert abs(entry.value(x0) - val_ref) < 1e-8 * max(1.0, abs(val_ref))


def test_empty_stage_run_returns_terminal_copy():
    terminal = TerminalQuadratic(P=np.eye(2), p=np.array([1.0, -2.0]), c0=0.5)
    entry, sweep = backward_sweep([], terminal)
    assert np.array_equal(entry.P, terminal.P)
    assert np.array_equal(entry.p, terminal.p)
    assert entry.c0 == terminal.c0
    entry.P[0, 0] = 99.0
    assert terminal.P[0, 0] == 1.0  # defensive copy


def test_nonconvex_stage_raises_factorization_error():
    rng = np.random.default_rng(1)
    data = list(random_stage_data(rng, 2, 2, 1))
    data[4] = data[4].copy()
    data[4][0] = -np.eye(1)  # indefinite control penalty
    stages, terminal = make_stages(tuple(data))
    with pytest.raises(RiccatiFactorizationError):
        backward_sweep(stages, terminal)


# ----- closed-loop (fixed affine policy) value accumulation -----------------

def closed_loop_value_oracle(data, F, h, nx):
    """Quadratic closed-loop cost of u_k = F x_k + h under the stage data.

    Forward substitution only: x_k = Phi_k x0 + phi_k is accumulated
    stagewise, then each stage cost quadratic is pulled back to x0.
    """
    As, Bs, cs, Qs, Rs, Ss, qs, rs, consts, P_T, p_T, c0_T = data
    T = As.shape[0]
    P = np.zeros((nx, nx))
    p = np.zeros(nx)
    c0 = 0.0
    Phi = np.eye(nx)
    phi = np.zeros(nx)
    for k in range(T):
        Fk, hk = F[k], h[k]
        # control as affine function of x0
        Gu = Fk @ Phi
        gu = Fk @ phi + hk
        Qh, Rh, Sh = Qs[k], Rs[k], Ss[k]
        P += (Phi.T @ Qh @ Phi + Gu.T @ Rh @ Gu
              + Phi.T @ Sh.T @ Gu + Gu.T @ Sh @ Phi)
        p += (Phi.T @ (Qh @ phi + qs[k] + Sh.T @ gu)
              + Gu.T @ (Rh @ gu + rs[k] + Sh @ phi))
        c0 += (0.5 * phi @ Qh @ phi + 0.5 * gu @ Rh @ gu + gu @ Sh @ phi
               + qs[k] @ phi + rs[k] @ gu + consts[k])
        A_cl = As[k] + Bs[k] @ Fk
        phi = As[k] @ phi + Bs[k] @ gu + cs[k]
        Phi = A_cl @ Phi
    P += Phi.T @ P_T @ Phi
    p += Phi.T @ (P_T @ phi + p_T)
    c0 += 0.5 * phi @ P_T @ phi + p_T @ phi + c0_T
    return 0.5 * (P + P.T), p, c0


@pytest.mark.parametrize("seed", range(5))
def test_closed_loop_sweep_matches_forward_substitution(seed):
    rng = np.random.default_rng(200 + seed)
    T, nx, nu = int(rng.choice([1, 3, 5])), 3, 2
    data = random_stage_data(rng, T, nx, nu)
    stages, terminal = make_stages(data)
    points = rng.uniform(-0.5, 0.5, (T, nx))
    jacs = 0.3 * rng.uniform(-1.0, 1.0, (T, nu, nx))
    values = rng.uniform(-0.5, 0.5, (T, nu))
    policy = PolicyLinearization(points=points, values=values, jacobians=jacs)
    Fs = [policy.affine(k)[0] for k in range(T)]
    hs = [policy.affine(k)[1] for k in range(T)]
    entry = closed_loop_sweep(stages, policy, terminal)
    P_ref, p_ref, c0_ref = closed_loop_value_oracle(data, Fs, hs, nx)
    assert rel_err(entry.P, P_ref) < 1e-10
    assert rel_err(entry.p, p_ref) < 1e-10
    assert abs(entry.c0 - c0_ref) < 1e-10 * max(1.0, abs(c0_ref))


def test_closed_loop_forward_follows_policy():
    rng = np.random.default_rng(3)
    T, nx, nu = 4, 3, 2
    data = random_stage_data(rng, T, nx, nu)
    stages, _ = make_stages(data)
    points = rng.uniform(-0.5, 0.5, (T, nx))
    jacs = 0.3 * rng.uniform(-1.0, 1.0, (T, nu, nx))
    values = rng.uniform(-0.5, 0.5, (T, nu))
    policy = PolicyLinearization(points=points, values=values, jacobians=jacs)
    x0 = rng.uniform(-1.0, 1.0, nx)
    xs, us = closed_loop_forward(stages, policy, x0)
    x = x0.copy()
    for k in range(T):
        F, h = policy.affine(k)
        u = F @ x + h
        assert np.allclose(us[k], u, atol=1e-12)
        x = data[0][k] @ x + data[1][k] @ u + data[2][k]
        assert np.allclose(xs[k + 1], x, atol=1e-12)


def test_closed_loop_value_is_upper_bound_on_optimum():
    # evaluating any fixed policy can never beat the LQ optimum
    rng = np.random.default_rng(11)
    T, nx, nu = 5, 2, 1
    data = random_stage_data(rng, T, nx, nu)
    stages, terminal = make_stages(data)
    points = np.zeros((T, nx))
    jacs = 0.2 * rng.uniform(-1.0, 1.0, (T, nu, nx))
    values = np.zeros((T, nu))
    policy = PolicyLinearization(points=points, values=values, jacobians=jacs)
    entry_cl = closed_loop_sweep(stages, policy, terminal)
    entry_opt, _ = backward_sweep(stages, terminal)
    for _ in range(5):
        x = rng.uniform(-1.0, 1.0, nx)
        assert entry_cl.value(x) >= entry_opt.value(x) - 1e-10
