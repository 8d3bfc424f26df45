"""Explicit RK4 discretization with exact sensitivities, model-agnostic.

A continuous-time model exposes ``rhs(x, u)`` and ``jac(x, u)``; both accept
stacked inputs with an arbitrary leading batch shape.  The discrete map holds
the control constant over the step.
"""
from __future__ import annotations

from typing import Protocol

import numpy as np


class ContinuousModel(Protocol):
    nx: int
    nu: int

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def jac(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class IntegrationError(RuntimeError):
    """Non-finite value produced while integrating."""


def rk4_step(model: ContinuousModel, x: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step of ``x' = rhs(x, u)`` with u held constant."""
    if h <= 0:
        raise ValueError("step size must be positive")
    k1 = model.rhs(x, u)
    k2 = model.rhs(x + 0.5 * h * k1, u)
    k3 = model.rhs(x + 0.5 * h * k2, u)
    k4 = model.rhs(x + h * k3, u)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after RK4 step")
    return out


def rk4_sensitivities(model: ContinuousModel, x: np.ndarray, u: np.ndarray,
                      h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 step plus exact Jacobians of the discrete map.

    Differentiates each RK4 stage (forward sensitivity propagation), so the
    returned ``A = d x_next / d x`` and ``B = d x_next / d u`` are exact for
    the discrete map, not an approximation of the continuous flow.

    Returns
    -------
    (x_next, A, B) with shapes (..., nx), (..., nx, nx), (..., nx, nu).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    eye = np.broadcast_to(np.eye(model.nx), x.shape[:-1] + (model.nx, model.nx))

    x1 = x
    k1 = model.rhs(x1, u)
    x2 = x + 0.5 * h * k1
    k2 = model.rhs(x2, u)
    x3 = x + 0.5 * h * k2
    k3 = model.rhs(x3, u)
    x4 = x + h * k3
    k4 = model.rhs(x4, u)

    J1x, J1u = model.jac(x1, u)
    J2x, J2u = model.jac(x2, u)
    J3x, J3u = model.jac(x3, u)
    J4x, J4u = model.jac(x4, u)

    D1 = J1x
    D2 = J2x @ (eye + 0.5 * h * D1)
    D3 = J3x @ (eye + 0.5 * h * D2)
    D4 = J4x @ (eye + h * D3)
    A = eye + (h / 6.0) * (D1 + 2.0 * D2 + 2.0 * D3 + D4)

    E1 = J1u
    E2 = J2x @ (0.5 * h * E1) + J2u
    E3 = J3x @ (0.5 * h * E2) + J3u
    E4 = J4x @ (h * E3) + J4u
    B = (h / 6.0) * (E1 + 2.0 * E2 + 2.0 * E3 + E4)

    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise IntegrationError("non-finite sensitivity data")
    return x_next, A, B


class DiscreteDynamics:
    """Discrete prediction map ``f(x, u)`` = RK4 over one sampling interval."""

    def __init__(self, model: ContinuousModel, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.dt = dt
        self.nx = model.nx
        self.nu = model.nu

    def __call__(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return rk4_step(self.model, x, u, self.dt)

    def with_sensitivities(self, x: np.ndarray, u: np.ndarray):
        return rk4_sensitivities(self.model, x, u, self.dt)
