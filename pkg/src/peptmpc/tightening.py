"""Log-barrier tightening and per-stage QP data construction.

Each stage of the horizon is turned into a quadratic model in absolute
coordinates, ``cost(z) ~ 0.5 z'Hz + g'z + const``, with H the (generalized
Gauss-Newton) Hessian.  First-phase stages keep their box constraints as
hard data; tightened stages fold the boxes into barrier terms instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrators import DiscreteDynamics
from .ocp import OcpSpec, Reference, Trajectory

# Fraction of the box width kept clear when clipping a linearization point
# back inside.  The barrier Hessian at a repaired coordinate is ~tau/margin^2,
# so the margin must be wide enough that one repair cannot push the QP data
# past what an absolute KKT tolerance can resolve in float64.
REPAIR_MARGIN = 1e-2


class InfeasiblePointError(ValueError):
    """Barrier evaluated at a point on or outside the constraint boundary."""


@dataclass
class StageLinearization:
    """QP data of one shooting node.

    Dynamics: x_next = A x + B u + c (affine residual c = f(xb,ub) - A xb - B ub).
    Cost: 0.5 [x;u]' [[Q_blk, S_blk'],[S_blk, R_blk]] [x;u] + q'x + r'u + const_term.
    Box data is present on hard-constrained stages only.
    """

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    Q_blk: np.ndarray
    R_blk: np.ndarray
    S_blk: np.ndarray
    q: np.ndarray
    r: np.ndarray
    const_term: float
    x_bar: np.ndarray
    u_bar: np.ndarray
    x_lb: np.ndarray | None = None
    x_ub: np.ndarray | None = None
    u_lb: np.ndarray | None = None
    u_ub: np.ndarray | None = None

    @property
    def has_bounds(self) -> bool:
        return (self.x_lb is not None or self.x_ub is not None
                or self.u_lb is not None or self.u_ub is not None)

    def hessian(self) -> np.ndarray:
        nx, nu = self.Q_blk.shape[0], self.R_blk.shape[0]
        H = np.zeros((nx + nu, nx + nu))
        H[:nx, :nx] = self.Q_blk
        H[nx:, nx:] = self.R_blk
        H[nx:, :nx] = self.S_blk
        H[:nx, nx:] = self.S_blk.T
        return H

    def inequality_data(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (Gx, Gu, d) rows for the finite box faces, as
        d + Gx x + Gu u <= 0."""
        if not self.has_bounds:
            raise ValueError("stage carries no hard inequality data")
        nx, nu = self.A.shape[0], self.B.shape[1]
        rows_Gx, rows_Gu, rows_d = [], [], []
        for j in range(nx):
            if self.x_ub is not None and np.isfinite(self.x_ub[j]):
                gx = np.zeros(nx); gx[j] = 1.0
                rows_Gx.append(gx); rows_Gu.append(np.zeros(nu)); rows_d.append(-self.x_ub[j])
            if self.x_lb is not None and np.isfinite(self.x_lb[j]):
                gx = np.zeros(nx); gx[j] = -1.0
                rows_Gx.append(gx); rows_Gu.append(np.zeros(nu)); rows_d.append(self.x_lb[j])
        for j in range(nu):
            if self.u_ub is not None and np.isfinite(self.u_ub[j]):
                gu = np.zeros(nu); gu[j] = 1.0
                rows_Gx.append(np.zeros(nx)); rows_Gu.append(gu); rows_d.append(-self.u_ub[j])
            if self.u_lb is not None and np.isfinite(self.u_lb[j]):
                gu = np.zeros(nu); gu[j] = -1.0
                rows_Gx.append(np.zeros(nx)); rows_Gu.append(gu); rows_d.append(self.u_lb[j])
        if not rows_d:
            return np.zeros((0, nx)), np.zeros((0, nu)), np.zeros(0)
        return np.array(rows_Gx), np.array(rows_Gu), np.array(rows_d)


@dataclass
class TerminalQuadratic:
    """Value function V(x) = 0.5 x'Px + p'x + c0."""

    P: np.ndarray
    p: np.ndarray
    c0: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.p @ x + self.c0)


def barrier_value(g_vals: np.ndarray, tau: float) -> float:
    """-tau * sum_i log(-g_i) for constraint residuals g_i <= 0."""
    g = np.asarray(g_vals, float)
    if np.any(g >= 0):
        raise InfeasiblePointError("barrier evaluated at residual >= 0")
    return float(-tau * np.sum(np.log(-g)))


def box_barrier_terms(z: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                      tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Barrier value, gradient and diagonal Hessian for lb < z < ub.

    Infinite bounds contribute nothing.  Raises if z is on or outside a
    finite face.
    """
    z = np.asarray(z, float)
    up = ub - z
    lo = z - lb
    finite_up = np.isfinite(ub)
    finite_lo = np.isfinite(lb)
    if np.any(up[finite_up] <= 0) or np.any(lo[finite_lo] <= 0):
        raise InfeasiblePointError("point on or outside the box")
    val = 0.0
    grad = np.zeros_like(z)
    hess = np.zeros_like(z)
    if np.any(finite_up):
        val -= tau * np.sum(np.log(up[finite_up]))
        grad[finite_up] += tau / up[finite_up]
        hess[finite_up] += tau / up[finite_up] ** 2
    if np.any(finite_lo):
        val -= tau * np.sum(np.log(lo[finite_lo]))
        grad[finite_lo] -= tau / lo[finite_lo]
        hess[finite_lo] += tau / lo[finite_lo] ** 2
    return val, grad, hess


def repair_into_box(z: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> tuple[np.ndarray, bool]:
    """Clip z strictly inside the box with a small width-relative margin."""
    margin = np.where(np.isfinite(ub) & np.isfinite(lb), REPAIR_MARGIN * (ub - lb), REPAIR_MARGIN)
    lo = np.where(np.isfinite(lb), lb + margin, -np.inf)
    hi = np.where(np.isfinite(ub), ub - margin, np.inf)
    clipped = np.clip(z, lo, hi)
    return clipped, bool(np.any(clipped != z))


def ggn_stage_hessian(x: np.ndarray, u: np.ndarray, x_ref: np.ndarray, u_ref: np.ndarray,
                      spec: OcpSpec, k: int, tightened: bool
                      ) -> tuple[np.ndarray, np.ndarray, float]:
    """GGN Hessian, gradient and value of the (possibly tightened) stage cost
    at the point (x, u).

    The tracking part contributes 2*diag(Q, R) scaled by gamma**k; on
    tightened stages the box barrier adds its diagonal GGN term
    tau * grad g grad g' / g^2 per face.
    """
    w = spec.stage_weight(k)
    dx = x - x_ref
    du = u - u_ref
    Hx = 2.0 * w * spec.q
    Hu = 2.0 * w * spec.r
    gx = Hx * dx
    gu = Hu * du
    val = float(w * (dx @ (spec.q * dx) + du @ (spec.r * du)))
    if tightened:
        bx, gbx, hbx = box_barrier_terms(x, spec.x_lb, spec.x_ub, spec.tau)
        bu, gbu, hbu = box_barrier_terms(u, spec.u_lb, spec.u_ub, spec.tau)
        Hx = Hx + hbx
        Hu = Hu + hbu
        gx = gx + gbx
        gu = gu + gbu
        val += bx + bu
    n = spec.nx + spec.nu
    H = np.zeros((n, n))
    H[np.arange(spec.nx), np.arange(spec.nx)] = Hx
    H[spec.nx + np.arange(spec.nu), spec.nx + np.arange(spec.nu)] = Hu
    return H, np.concatenate([gx, gu]), val


def terminal_quadratic_seed(x: np.ndarray, x_ref: np.ndarray, spec: OcpSpec,
                            tightened: bool) -> TerminalQuadratic:
    """Stage-N quadratic model (P_N, p_N, c0) in absolute coordinates."""
    w = spec.stage_weight(spec.N)
    dx = x - x_ref
    Hx = 2.0 * w * spec.terminal_weight
    gx = Hx * dx
    val = float(w * dx @ (spec.terminal_weight * dx))
    if tightened:
        bx, gbx, hbx = box_barrier_terms(x, spec.x_lb, spec.x_ub, spec.tau)
        Hx = Hx + hbx
        gx = gx + gbx
        val += bx
    P = np.diag(Hx)
    p = gx - Hx * x
    c0 = val - gx @ x + 0.5 * x @ (Hx * x)
    return TerminalQuadratic(P, p, c0)


@dataclass
class LinearizationResult:
    stages: list          # StageLinearization for k = 0..N-1
    terminal: TerminalQuadratic
    repaired: int         # number of tightened nodes clipped into the box


def linearize_trajectory(traj: Trajectory, ref: Reference, spec: OcpSpec,
                         dynamics: DiscreteDynamics,
                         tighten_from: int | None = None) -> LinearizationResult:
    """Build per-stage QP data along an iterate.

    Stages below ``tighten_from`` (default spec.M) carry hard box data;
    stages at or above it carry barrier-augmented cost models and no
    inequality data.  When ``tighten_from == N`` the terminal node keeps a
    plain quadratic model (its hard box is then enforced by the full-horizon
    solver).  Tightened linearization points that violate their box are
    clipped inside with a small margin and counted.
    """
    M = spec.M if tighten_from is None else tighten_from
    N = spec.N
    if traj.horizon != N or ref.horizon != N:
        raise ValueError("trajectory/reference horizon does not match spec")

    xs = traj.states.copy()
    us = traj.controls.copy()
    repaired = 0
    for k in range(M, N):
        xk, rx = repair_into_box(xs[k], spec.x_lb, spec.x_ub)
        uk, ru = repair_into_box(us[k], spec.u_lb, spec.u_ub)
        xs[k], us[k] = xk, uk
        repaired += int(rx) + int(ru)
    terminal_tightened = M < N
    if terminal_tightened:
        xN, rN = repair_into_box(xs[N], spec.x_lb, spec.x_ub)
        xs[N] = xN
        repaired += int(rN)

    _, A_all, B_all = dynamics.with_sensitivities(xs[:N], us)
    f_all = dynamics(xs[:N], us)
    c_all = f_all - np.einsum("kij,kj->ki", A_all, xs[:N]) - np.einsum("kij,kj->ki", B_all, us)

    stages = []
    for k in range(N):
        tightened = k >= M
        H, g, val = ggn_stage_hessian(xs[k], us[k], ref.state_refs[k], ref.control_refs[k],
                                      spec, k, tightened)
        z = np.concatenate([xs[k], us[k]])
        g_abs = g - H @ z
        const = val - g @ z + 0.5 * z @ H @ z
        stage = StageLinearization(
            A=A_all[k], B=B_all[k], c=c_all[k],
            Q_blk=H[:spec.nx, :spec.nx], R_blk=H[spec.nx:, spec.nx:],
            S_blk=H[spec.nx:, :spec.nx],
            q=g_abs[:spec.nx], r=g_abs[spec.nx:], const_term=float(const),
            x_bar=xs[k], u_bar=us[k],
        )
        if not tightened:
            stage.x_lb, stage.x_ub = spec.x_lb, spec.x_ub
            stage.u_lb, stage.u_ub = spec.u_lb, spec.u_ub
        stages.append(stage)

    terminal = terminal_quadratic_seed(xs[N], ref.state_refs[N], spec, terminal_tightened)
    return LinearizationResult(stages=stages, terminal=terminal, repaired=repaired)
