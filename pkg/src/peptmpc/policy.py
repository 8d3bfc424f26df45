"""External-policy abstraction.

A policy maps a state (and the stage reference it should track) to a control.
Two implementations are provided: a one-hidden-layer tanh network loaded from
a portable JSON weight file, and an infinite-horizon LQR fallback for running
the toolkit without trained weights.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .integrators import DiscreteDynamics
from .ocp import OcpSpec

WEIGHT_SCHEMA_VERSION = 1


class PolicyError(ValueError):
    """Weight-file or policy-evaluation problem."""


class Policy(Protocol):
    """Stage-bound policy interface used by the controllers."""

    def control(self, x: np.ndarray, x_ref: np.ndarray, u_ref: np.ndarray) -> np.ndarray: ...

    def control_jacobian(self, x: np.ndarray, x_ref: np.ndarray,
                         u_ref: np.ndarray) -> np.ndarray: ...


@dataclass
class PolicyNet:
    """One-hidden-layer tanh network with affine input/output maps.

    forward(obs) = out_offset + out_scale * (W2 tanh(W1 ((obs - obs_offset)
    * obs_scale) + b1) + b2).  The observation fed by the controllers is
    (state - reference state).
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    obs_offset: np.ndarray
    obs_scale: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        hidden, n_obs = self.W1.shape
        n_u = self.W2.shape[0]
        expected = {
            "b1": (hidden,), "W2": (n_u, hidden), "b2": (n_u,),
            "obs_offset": (n_obs,), "obs_scale": (n_obs,),
            "out_offset": (n_u,), "out_scale": (n_u,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise PolicyError(f"field {name} has shape {arr.shape}, expected {shape}")
        for name in ("W1",) + tuple(expected):
            if not np.all(np.isfinite(getattr(self, name))):
                raise PolicyError(f"field {name} contains non-finite entries")

    @property
    def n_obs(self) -> int:
        return self.W1.shape[1]

    @property
    def n_u(self) -> int:
        return self.W2.shape[0]

    def forward(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, float)
        if obs.shape != (self.n_obs,):
            raise PolicyError(f"observation has shape {obs.shape}, expected {(self.n_obs,)}")
        o = (obs - self.obs_offset) * self.obs_scale
        h = np.tanh(self.W1 @ o + self.b1)
        u = self.out_offset + self.out_scale * (self.W2 @ h + self.b2)
        if not np.all(np.isfinite(u)):
            raise PolicyError("policy output is non-finite")
        return u

    def forward_jacobian(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, float)
        o = (obs - self.obs_offset) * self.obs_scale
        h = np.tanh(self.W1 @ o + self.b1)
        inner = (1.0 - h * h)[:, None] * self.W1
        return self.out_scale[:, None] * (self.W2 @ inner) * self.obs_scale[None, :]

    def check_output_range(self, u_lb: np.ndarray, u_ub: np.ndarray) -> None:
        """Verify out_offset +/- out_scale stays within the control box."""
        lo = self.out_offset - np.abs(self.out_scale)
        hi = self.out_offset + np.abs(self.out_scale)
        if np.any(lo < u_lb) or np.any(hi > u_ub):
            raise PolicyError("output map range exceeds the control bounds")

    # stage-bound Policy interface: observation = state - reference state
    def control(self, x, x_ref, u_ref):
        return self.forward(np.asarray(x, float) - np.asarray(x_ref, float))

    def control_jacobian(self, x, x_ref, u_ref):
        return self.forward_jacobian(np.asarray(x, float) - np.asarray(x_ref, float))


_WEIGHT_FIELDS = ("W1", "b1", "W2", "b2", "obs_offset", "obs_scale",
                  "out_offset", "out_scale")


def load_weights(path: str | Path) -> PolicyNet:
    """Load a PolicyNet from the JSON weight-file schema."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise PolicyError(f"weight file {path} is not valid JSON: {exc}") from exc
    return weights_from_dict(doc)


def weights_from_dict(doc) -> PolicyNet:
    """Build a PolicyNet from an already-parsed weight document."""
    if not isinstance(doc, dict):
        raise PolicyError("weight file must contain a JSON object")
    version = doc.get("version")
    if version != WEIGHT_SCHEMA_VERSION:
        raise PolicyError(f"unsupported weight schema version {version!r}")
    for field in ("n_obs", "n_u") + _WEIGHT_FIELDS:
        if field not in doc:
            raise PolicyError(f"weight file missing field {field}")
    n_obs, n_u = int(doc["n_obs"]), int(doc["n_u"])
    arrays = {}
    for field in _WEIGHT_FIELDS:
        try:
            arrays[field] = np.asarray(doc[field], float)
        except (TypeError, ValueError) as exc:
            raise PolicyError(f"field {field} is not a numeric array") from exc
    if arrays["W1"].ndim != 2 or arrays["W1"].shape[1] != n_obs:
        raise PolicyError(f"field W1 has shape {arrays['W1'].shape}, "
                          f"expected (hidden, {n_obs})")
    if arrays["W2"].ndim != 2 or arrays["W2"].shape[0] != n_u:
        raise PolicyError(f"field W2 has shape {arrays['W2'].shape}, "
                          f"expected ({n_u}, hidden)")
    try:
        return PolicyNet(**arrays)
    except PolicyError:
        raise
    except ValueError as exc:
        raise PolicyError(str(exc)) from exc


def save_weights(net: PolicyNet, path: str | Path) -> None:
    """Write a PolicyNet in the JSON weight-file schema."""
    doc = {"version": WEIGHT_SCHEMA_VERSION, "n_obs": net.n_obs, "n_u": net.n_u}
    for field in _WEIGHT_FIELDS:
        doc[field] = getattr(net, field).tolist()
    Path(path).write_text(json.dumps(doc, indent=1))


def zero_policy_net(n_obs: int, n_u: int, hidden: int = 128,
                    out_offset: np.ndarray | None = None) -> PolicyNet:
    """All-zero network: outputs out_offset everywhere (hover by default)."""
    if out_offset is None:
        out_offset = np.zeros(n_u)
    return PolicyNet(
        W1=np.zeros((hidden, n_obs)), b1=np.zeros(hidden),
        W2=np.zeros((n_u, hidden)), b2=np.zeros(n_u),
        obs_offset=np.zeros(n_obs), obs_scale=np.ones(n_obs),
        out_offset=np.asarray(out_offset, float), out_scale=np.ones(n_u))


@dataclass
class LqrPolicy:
    """Reference-tracking LQR: u = u_ref + K (x - x_ref)."""

    K: np.ndarray
    P: np.ndarray      # value matrix solving the discrete Riccati equation

    def control(self, x, x_ref, u_ref):
        return np.asarray(u_ref, float) + self.K @ (np.asarray(x, float) - np.asarray(x_ref, float))

    def control_jacobian(self, x, x_ref, u_ref):
        return self.K


def solve_dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
               tol: float = 1e-13, max_iter: int = 100000
               ) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-point iteration for the discrete algebraic Riccati equation.

    Convention: V(x) = x'Px for cost sum x'Qx + u'Ru (no 1/2 factors).
    Returns (P, K) with u = K x.
    """
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - (A.T @ BtP.T) @ G
        P_next = 0.5 * (P_next + P_next.T)
        delta = float(np.max(np.abs(P_next - P)))
        P = P_next
        if not np.isfinite(delta):
            raise RuntimeError("Riccati iteration diverged")
        if delta < tol * max(1.0, float(np.max(np.abs(P)))):
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return P, K
    raise RuntimeError("Riccati iteration did not converge")


def lqr_policy(spec: OcpSpec, dynamics: DiscreteDynamics, x_eq: np.ndarray,
               u_eq: np.ndarray) -> LqrPolicy:
    """Infinite-horizon LQR around an equilibrium, with the spec's weights."""
    _, A, B = dynamics.with_sensitivities(np.asarray(x_eq, float), np.asarray(u_eq, float))
    P, K = solve_dare(A, B, np.diag(spec.q), np.diag(spec.r))
    return LqrPolicy(K=K, P=P)
