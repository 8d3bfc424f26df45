"""RK4 integration and discrete sensitivities."""
import numpy as np
import pytest

from peptmpc.integrators import (
    DiscreteDynamics,
    IntegrationError,
    rk4_sensitivities,
    rk4_step,
)

from oracles import fd_jacobian


class DecayModel:
    """x' = -a x + b u, scalar; exact flow known in closed form."""

    nx = 1
    nu = 1

    def __init__(self, a=1.3, b=0.7):
        self.a, self.b = a, b

    def rhs(self, x, u):
        return -self.a * x + self.b * u

    def jac(self, x, u):
        batch = np.shape(x)[:-1]
        return (np.broadcast_to(-self.a * np.eye(1), batch + (1, 1)).copy(),
                np.broadcast_to(self.b * np.eye(1), batch + (1, 1)).copy())


class NonlinearModel:
    """Planar oscillator with a cubic term and control coupling."""

    nx = 2
    nu = 2

    def rhs(self, x, u):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2 + 0.1 * u[..., 0],
                         -x1 - 0.4 * x1 ** 3 + u[..., 1] + 0.2 * u[..., 0] * x2,
                         ], axis=-1)

    def jac(self, x, u):
        x1, x2 = x[..., 0], x[..., 1]
        z = np.zeros_like(x1)
        one = np.ones_like(x1)
        A = np.stack([
            np.stack([z, one], axis=-1),
            np.stack([-one - 1.2 * x1 ** 2, 0.2 * u[..., 0]], axis=-1),
        ], axis=-2)
        B = np.stack([
            np.stack([0.1 * one, z], axis=-1),
            np.stack([0.2 * x2, one], axis=-1),
        ], axis=-2)
        return A, B


def test_rk4_matches_exact_linear_flow():
    model = DecayModel()
    h = 0.05
    x = np.array([2.0])
    u = np.array([0.5])
    # exact solution of x' = -a x + b u with constant u
    a, b = model.a, model.b
    x_exact = (x[0] - b * u[0] / a) * np.exp(-a * h) + b * u[0] / a
    x_rk4 = rk4_step(model, x, u, h)
    # classical RK4 local error is O(h^5)
    assert abs(x_rk4[0] - x_exact) < 5.0 * h ** 5


def test_rk4_order_four_convergence():
    model = NonlinearModel()
    x = np.array([0.4, -0.3])
    u = np.array([0.1, 0.2])

    def integrate(h, steps):
        y = x.copy()
        for _ in range(steps):
            y = rk4_step(model, y, u, h)
        return y

    ref = integrate(1e-3, 400)
    err_coarse = np.abs(integrate(0.1, 4) - ref).max()
    err_fine = np.abs(integrate(0.05, 8) - ref).max()
    # halving the step should cut the global error by about 2^4
    assert err_fine < err_coarse / 12.0


def test_rk4_step_rejects_bad_input():
    model = DecayModel()
    with pytest.raises(ValueError):
        rk4_step(model, np.array([1.0]), np.array([0.0]), 0.0)


def test_sensitivities_match_finite_differences():
    model = NonlinearModel()
    h = 0.05
    x = np.array([0.4, -0.3])
    u = np.array([0.1, 0.2])
    x_next, A, B = rk4_sensitivities(model, x, u, h)
    assert np.allclose(x_next, rk4_step(model, x, u, h), atol=1e-15)
    A_fd = fd_jacobian(lambda xx: rk4_step(model, xx, u, h), x)
    B_fd = fd_jacobian(lambda uu: rk4_step(model, x, uu, h), u)
    assert np.abs(A - A_fd).max() < 1e-8
    assert np.abs(B - B_fd).max() < 1e-8


def test_sensitivities_batched_consistency():
    model = NonlinearModel()
    h = 0.05
    rng = np.random.default_rng(0)
    xs = rng.uniform(-0.5, 0.5, (6, 2))
    us = rng.uniform(-0.3, 0.3, (6, 2))
    xb, Ab, Bb = rk4_sensitivities(model, xs, us, h)
    for i in range(6):
        xi, Ai, Bi = rk4_sensitivities(model, xs[i], us[i], h)
        assert np.allclose(xb[i], xi, atol=1e-15)
        assert np.allclose(Ab[i], Ai, atol=1e-15)
        assert np.allclose(Bb[i], Bi, atol=1e-15)


def test_discrete_dynamics_call_and_sensitivities():
    model = NonlinearModel()
    dyn = DiscreteDynamics(model, dt=0.05)
    x = np.array([0.2, 0.1])
    u = np.array([0.0, -0.1])
    f1 = dyn(x, u)
    f2, A, B = dyn.with_sensitivities(x, u)
    assert np.allclose(f1, f2, atol=1e-15)
    assert np.allclose(f1, rk4_step(model, x, u, 0.05), atol=1e-15)
    assert A.shape == (2, 2) and B.shape == (2, 2)


def test_discrete_dynamics_batched_call():
    model = NonlinearModel()
    dyn = DiscreteDynamics(model, dt=0.05)
    rng = np.random.default_rng(1)
    xs = rng.uniform(-0.5, 0.5, (4, 2))
    us = rng.uniform(-0.3, 0.3, (4, 2))
    batched = dyn(xs, us)
    for i in range(4):
        assert np.allclose(batched[i], dyn(xs[i], us[i]), atol=1e-15)


def test_non_finite_state_raises():
    class BlowupModel:
        nx = 1
        nu = 1

        def rhs(self, x, u):
            return x ** 3

        def jac(self, x, u):
            batch = np.shape(x)[:-1]
            return (3.0 * (x ** 2)[..., None] * np.broadcast_to(np.eye(1), batch + (1, 1)),
                    np.zeros(batch + (1, 1)))

    model = BlowupModel()
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(IntegrationError):
            rk4_step(model, np.array([1e160]), np.array([0.0]), 1.0)


def test_discrete_dynamics_validates_dt():
    with pytest.raises(ValueError):
        DiscreteDynamics(DecayModel(), dt=-0.1)
