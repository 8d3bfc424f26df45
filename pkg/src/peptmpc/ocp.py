"""Problem definition and trajectory containers shared by every controller.

The optimal control problem is a discrete-time tracking problem with
diagonal quadratic stage costs, box constraints on states and controls,
and a two-phase horizon split: hard constraints on stages ``0..M-1``,
log-barrier tightening on stages ``M..N``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class OcpSpec:
    """Full problem definition: horizons, weights, bounds, barrier parameter.

    Weights are diagonal and stored as vectors (``q``, ``r``); full matrices
    are rejected at construction.  ``tau`` is the uniform barrier parameter
    applied on tightened stages, ``gamma`` an optional discount folded into
    the stage weights as ``gamma**k``.
    """

    nx: int
    nu: int
    M: int
    N: int
    dt: float
    q: np.ndarray          # state weight diagonal, length nx
    r: np.ndarray          # control weight diagonal, length nu
    x_lb: np.ndarray
    x_ub: np.ndarray
    u_lb: np.ndarray
    u_ub: np.ndarray
    tau: float = 1e-2
    gamma: float = 1.0
    q_term: np.ndarray | None = None   # terminal weight diagonal, defaults to q

    def __post_init__(self):
        if self.M < 1 or self.N < self.M:
            raise ValueError(f"horizons must satisfy N >= M >= 1, got M={self.M}, N={self.N}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must lie in (0, 1]")
        for name, val, dim in (("q", self.q, self.nx), ("r", self.r, self.nu)):
            arr = np.asarray(val, dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a diagonal stored as a vector")
            if arr.shape != (dim,):
                raise ValueError(f"{name} has length {arr.shape[0]}, expected {dim}")
            if np.any(arr < 0):
                raise ValueError(f"{name} must be componentwise nonnegative")
            object.__setattr__(self, name, _readonly(arr))
        if self.q_term is not None:
            qt = np.asarray(self.q_term, dtype=float)
            if qt.shape != (self.nx,) or np.any(qt < 0):
                raise ValueError("q_term must be a nonnegative vector of length nx")
            object.__setattr__(self, "q_term", _readonly(qt))
        for name, dim in (("x_lb", self.nx), ("x_ub", self.nx), ("u_lb", self.nu), ("u_ub", self.nu)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (dim,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({dim},)")
            object.__setattr__(self, name, _readonly(arr))
        if np.any(self.x_lb >= self.x_ub) or np.any(self.u_lb >= self.u_ub):
            raise ValueError("bounds must satisfy lb < ub componentwise")

    @property
    def terminal_weight(self) -> np.ndarray:
        return self.q if self.q_term is None else self.q_term

    def stage_weight(self, k: int) -> float:
        """Discount factor applied to the stage-k tracking weights."""
        return 1.0 if self.gamma == 1.0 else self.gamma ** k

    def to_dict(self) -> dict:
        d = {
            "nx": self.nx, "nu": self.nu, "M": self.M, "N": self.N, "dt": self.dt,
            "q": self.q.tolist(), "r": self.r.tolist(),
            "x_lb": self.x_lb.tolist(), "x_ub": self.x_ub.tolist(),
            "u_lb": self.u_lb.tolist(), "u_ub": self.u_ub.tolist(),
            "tau": self.tau, "gamma": self.gamma,
        }
        if self.q_term is not None:
            d["q_term"] = self.q_term.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OcpSpec":
        return cls(
            nx=int(d["nx"]), nu=int(d["nu"]), M=int(d["M"]), N=int(d["N"]),
            dt=float(d["dt"]), q=d["q"], r=d["r"],
            x_lb=d["x_lb"], x_ub=d["x_ub"], u_lb=d["u_lb"], u_ub=d["u_ub"],
            tau=float(d.get("tau", 1e-2)), gamma=float(d.get("gamma", 1.0)),
            q_term=d.get("q_term"),
        )


@dataclass(frozen=True)
class Trajectory:
    """State/control iterate: N+1 states stacked row-wise, N controls."""

    states: np.ndarray     # (N+1, nx)
    controls: np.ndarray   # (N, nu)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if states.shape[0] != controls.shape[0] + 1:
            raise ValueError(
                f"expected N+1 states for N controls, got {states.shape[0]} and {controls.shape[0]}")
        _check_finite("states", states)
        _check_finite("controls", controls)
        object.__setattr__(self, "states", _readonly(states))
        object.__setattr__(self, "controls", _readonly(controls))

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def replace_tail(self, start: int, states: np.ndarray, controls: np.ndarray) -> "Trajectory":
        """New trajectory with states[start:] and controls[start:] overwritten."""
        xs = self.states.copy()
        us = self.controls.copy()
        xs[start:] = states
        us[start:] = controls
        return Trajectory(xs, us)

    @classmethod
    def constant(cls, x: np.ndarray, u: np.ndarray, N: int) -> "Trajectory":
        return cls(np.tile(np.asarray(x, float), (N + 1, 1)),
                   np.tile(np.asarray(u, float), (N, 1)))


@dataclass(frozen=True)
class Reference:
    """Tracking targets aligned with a Trajectory of the same horizon."""

    state_refs: np.ndarray    # (N+1, nx)
    control_refs: np.ndarray  # (N, nu)

    def __post_init__(self):
        sr = np.atleast_2d(np.asarray(self.state_refs, dtype=float))
        cr = np.atleast_2d(np.asarray(self.control_refs, dtype=float))
        if sr.shape[0] != cr.shape[0] + 1:
            raise ValueError("reference lengths must be N+1 states and N controls")
        _check_finite("state_refs", sr)
        _check_finite("control_refs", cr)
        object.__setattr__(self, "state_refs", _readonly(sr))
        object.__setattr__(self, "control_refs", _readonly(cr))

    @property
    def horizon(self) -> int:
        return self.control_refs.shape[0]


def stage_cost(x: np.ndarray, u: np.ndarray, x_ref: np.ndarray, u_ref: np.ndarray,
               spec: OcpSpec) -> float:
    """Quadratic tracking cost (x-x_ref)'Q(x-x_ref) + (u-u_ref)'R(u-u_ref)."""
    dx = np.asarray(x, float) - np.asarray(x_ref, float)
    du = np.asarray(u, float) - np.asarray(u_ref, float)
    if dx.shape != (spec.nx,) or du.shape != (spec.nu,):
        raise ValueError(f"stage_cost dimension mismatch: state {dx.shape}, control {du.shape}")
    return float(dx @ (spec.q * dx) + du @ (spec.r * du))


def shift(traj: Trajectory, dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Trajectory:
    """Advance the iterate one step: drop stage 0, duplicate the last control.

    The appended state is obtained by simulating the duplicated control from
    the old terminal state.
    """
    u_last = traj.controls[-1]
    new_controls = np.vstack([traj.controls[1:], u_last[None, :]])
    x_new = np.asarray(dynamics(traj.states[-1], u_last), dtype=float)
    new_states = np.vstack([traj.states[1:], x_new[None, :]])
    return Trajectory(new_states, new_controls)
