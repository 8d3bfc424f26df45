"""Riccati backward/forward sweeps and the closed-loop (policy-substituted)
Lyapunov sweep.

All quadratics live in absolute coordinates: a stage carries
``cost(x, u) = 0.5 [x;u]'H[x;u] + q'x + r'u + const`` and the sweeps return
value functions ``V(x) = 0.5 x'Px + p'x + c0``.  The constant term is
propagated so controllers can report comparable objective values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tightening import StageLinearization, TerminalQuadratic

MIN_PIVOT = 1e-6          # smallest admissible Cholesky pivot of E_k (pivot^2 = 1e-12)


class RiccatiFactorizationError(RuntimeError):
    """E_k = R_k + B_k'P_{k+1}B_k not safely positive definite."""


@dataclass
class RiccatiSweep:
    """Output of the backward sweep over stages k = 0..T-1 (local indices)."""

    Ks: np.ndarray        # (T, nu, nx) feedback gains
    ks: np.ndarray        # (T, nu) feedforwards, u_k = K_k x_k + k_k
    Ps: np.ndarray        # (T+1, nx, nx) value Hessians
    ps: np.ndarray        # (T+1, nx) value gradients
    Es: np.ndarray        # (T, nu, nu) input-space Schur complements


def _spd_inverse(E: np.ndarray, k: int) -> np.ndarray:
    """Cholesky-based inverse of a small SPD matrix with pivot checks.

    Dimensions up to 4 (the sweep hot path) are unrolled so a stage costs a
    handful of float operations instead of repeated LAPACK calls; larger
    inputs fall back to numpy.  Raises RiccatiFactorizationError when E is
    not positive definite or its smallest Cholesky pivot is below MIN_PIVOT.
    """
    n = E.shape[0]
    if n > 4:
        try:
            L = np.linalg.cholesky(E)
        except np.linalg.LinAlgError as exc:
            raise RiccatiFactorizationError(f"E_{k} not positive definite") from exc
        if np.min(np.diag(L)) < MIN_PIVOT:
            raise RiccatiFactorizationError(f"E_{k} pivot below threshold")
        return np.linalg.inv(E)
    a = E.tolist()
    try:
        l11 = math.sqrt(a[0][0])
        if n == 1:
            if l11 < MIN_PIVOT:
                raise RiccatiFactorizationError(f"E_{k} pivot below threshold")
            return np.array([[1.0 / a[0][0]]])
        l21 = a[1][0] / l11
        l22 = math.sqrt(a[1][1] - l21 * l21)
        if n == 2:
            if min(l11, l22) < MIN_PIVOT:
                raise RiccatiFactorizationError(f"E_{k} pivot below threshold")
            det = (l11 * l22) ** 2
            return np.array([[a[1][1] / det, -a[1][0] / det],
                             [-a[1][0] / det, a[0][0] / det]])
        l31 = a[2][0] / l11
        l32 = (a[2][1] - l31 * l21) / l22
        l33 = math.sqrt(a[2][2] - l31 * l31 - l32 * l32)
        if n == 3:
            if min(l11, l22, l33) < MIN_PIVOT:
                raise RiccatiFactorizationError(f"E_{k} pivot below threshold")
            j11 = 1.0 / l11
            j22 = 1.0 / l22
            j33 = 1.0 / l33
            j21 = -j22 * l21 * j11
            j31 = -j33 * (l31 * j11 + l32 * j21)
            j32 = -j33 * l32 * j22
            m11 = j11 * j11 + j21 * j21 + j31 * j31
            m12 = j21 * j22 + j31 * j32
            m13 = j31 * j33
            m22 = j22 * j22 + j32 * j32
            m23 = j32 * j33
            m33 = j33 * j33
            return np.array([[m11, m12, m13], [m12, m22, m23], [m13, m23, m33]])
        l41 = a[3][0] / l11
        l42 = (a[3][1] - l41 * l21) / l22
        l43 = (a[3][2] - l41 * l31 - l42 * l32) / l33
        l44 = math.sqrt(a[3][3] - l41 * l41 - l42 * l42 - l43 * l43)
    except (ValueError, ZeroDivisionError) as exc:
        raise RiccatiFactorizationError(f"E_{k} not positive definite") from exc
    if min(l11, l22, l33, l44) < MIN_PIVOT:
        raise RiccatiFactorizationError(f"E_{k} pivot below threshold")
    j11 = 1.0 / l11
    j22 = 1.0 / l22
    j33 = 1.0 / l33
    j44 = 1.0 / l44
    j21 = -j22 * l21 * j11
    j31 = -j33 * (l31 * j11 + l32 * j21)
    j32 = -j33 * l32 * j22
    j41 = -j44 * (l41 * j11 + l42 * j21 + l43 * j31)
    j42 = -j44 * (l42 * j22 + l43 * j32)
    j43 = -j44 * l43 * j33
    m11 = j11 * j11 + j21 * j21 + j31 * j31 + j41 * j41
    m12 = j21 * j22 + j31 * j32 + j41 * j42
    m13 = j31 * j33 + j41 * j43
    m14 = j41 * j44
    m22 = j22 * j22 + j32 * j32 + j42 * j42
    m23 = j32 * j33 + j42 * j43
    m24 = j42 * j44
    m33 = j33 * j33 + j43 * j43
    m34 = j43 * j44
    m44 = j44 * j44
    return np.array([[m11, m12, m13, m14], [m12, m22, m23, m24],
                     [m13, m23, m33, m34], [m14, m24, m34, m44]])


def backward_matrices(As: np.ndarray, Bs: np.ndarray, Qs: np.ndarray,
                      Rs: np.ndarray, Ss: np.ndarray, P_end: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Matrix part of the Riccati recursion.

    Returns (Ps, Ks, Es, Einvs) with Ps[T] = P_end and, for k = T-1..0,
    E = R + B'P+B, K = -E^{-1}(S + B'P+A), P = Q + A'P+A + (S' + A'P+B)K.
    The inverses are kept so vector passes can reuse the factorization.
    """
    T, nx = As.shape[0], As.shape[1]
    nu = Bs.shape[2]
    Ps = np.empty((T + 1, nx, nx))
    Ks = np.empty((T, nu, nx))
    Es = np.empty((T, nu, nu))
    Einvs = np.empty((T, nu, nu))
    Ps[T] = 0.5 * (P_end + P_end.T)
    no_S = not Ss.any()
    for k in range(T - 1, -1, -1):
        A, B = As[k], Bs[k]
        P_next = Ps[k + 1]
        PA = P_next @ A
        PB = P_next @ B
        E = Rs[k] + B.T @ PB
        Einv = _spd_inverse(E, k)
        G = B.T @ PA if no_S else Ss[k] + B.T @ PA
        K = -(Einv @ G)
        # one refinement against E keeps the explicit-inverse fast path
        # accurate at interior-point barrier scales
        K -= Einv @ (E @ K + G)
        # Joseph-form update: a sum of PSD terms plus the S cross terms, so
        # huge barrier-augmented diagonals cannot cancel catastrophically
        # (the Schur form Q + A'PA - G'E^{-1}G loses definiteness in floats
        # once the interior-point diagonals reach ~1/eps scale)
        A_cl = A + B @ K
        PAcl = PA + PB @ K
        if no_S:
            P = Qs[k] + K.T @ (Rs[k] @ K) + A_cl.T @ PAcl
        else:
            P = Qs[k] + K.T @ (Rs[k] @ K + Ss[k]) + Ss[k].T @ K \
                + A_cl.T @ PAcl
        Ps[k] = 0.5 * (P + P.T)
        Ks[k] = K
        Es[k] = E
        Einvs[k] = Einv
    return Ps, Ks, Es, Einvs


def backward_vectors(As: np.ndarray, Bs: np.ndarray, cs: np.ndarray,
                     qs: np.ndarray, rs: np.ndarray, consts: np.ndarray | None,
                     Ps: np.ndarray, Ks: np.ndarray, Einvs: np.ndarray,
                     p_end: np.ndarray, c0_end: float
                     ) -> tuple[np.ndarray, np.ndarray, float]:
    """Vector part of the recursion (reuses a completed matrix pass).

    Returns (ps, ks, c0_0) with, for k = T-1..0,
    e = r + B'(P+ c + p+), k_ff = -E^{-1}e, p = q + A'(P+ c + p+) + K'e,
    c0 = c0+ + const + 0.5 c'P+c + p+'c - 0.5 e'E^{-1}e.
    consts=None skips the constant accumulation (c0_0 returned as 0).
    """
    T, nx = As.shape[0], As.shape[1]
    nu = Bs.shape[2]
    ps = np.empty((T + 1, nx))
    ks = np.empty((T, nu))
    ps[T] = p_end
    # batched P_{k+1} c_k: loop-invariant, so one einsum instead of T matvecs
    Pcs = np.einsum("kij,kj->ki", Ps[1:], cs)
    c0 = float(c0_end)
    for k in range(T - 1, -1, -1):
        p_next = ps[k + 1]
        Pc_p = Pcs[k] + p_next
        e = rs[k] + Pc_p @ Bs[k]
        kff = -(Einvs[k] @ e)
        ks[k] = kff
        ps[k] = qs[k] + Pc_p @ As[k] + e @ Ks[k]
        if consts is not None:
            # 0.5 c'P+c + p+'c rewritten through Pc_p to save a product
            c0 = c0 + float(consts[k]) + 0.5 * (cs[k] @ (Pc_p + p_next)) \
                + 0.5 * (e @ kff)
    return ps, ks, c0


def forward_rollout(As: np.ndarray, Bs: np.ndarray, cs: np.ndarray,
                    Ks: np.ndarray, ks: np.ndarray, x0: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Roll x_{k+1} = A x + B u + c under u_k = K_k x_k + k_k."""
    T, nx = As.shape[0], As.shape[1]
    # closed-loop form: two precomputed batches shrink the sequential loop
    # to one matvec and one add per stage
    A_cl = As + np.einsum("kij,kjl->kil", Bs, Ks)
    offs = np.einsum("kij,kj->ki", Bs, ks) + cs
    xs = np.empty((T + 1, nx))
    xs[0] = x0
    for k in range(T):
        xs[k + 1] = A_cl[k] @ xs[k] + offs[k]
    us = np.einsum("kij,kj->ki", Ks, xs[:T]) + ks
    return xs, us


def _stack_stage_data(stages: list[StageLinearization]):
    As = np.stack([s.A for s in stages])
    Bs = np.stack([s.B for s in stages])
    cs = np.stack([s.c for s in stages])
    Qs = np.stack([s.Q_blk for s in stages])
    Rs = np.stack([s.R_blk for s in stages])
    Ss = np.stack([s.S_blk for s in stages])
    qs = np.stack([s.q for s in stages])
    rs = np.stack([s.r for s in stages])
    consts = np.array([s.const_term for s in stages])
    return As, Bs, cs, Qs, Rs, Ss, qs, rs, consts


def backward_sweep(stages: list[StageLinearization], terminal: TerminalQuadratic
                   ) -> tuple[TerminalQuadratic, RiccatiSweep]:
    """Eliminate a run of unconstrained stages against a terminal quadratic.

    Returns the value function at the first stage of the run together with
    the gains needed to recover the eliminated solution.
    """
    if not stages:
        return TerminalQuadratic(terminal.P.copy(), terminal.p.copy(), terminal.c0), \
            RiccatiSweep(Ks=np.empty((0, 0, 0)), ks=np.empty((0, 0)),
                         Ps=terminal.P[None, :, :].copy(), ps=terminal.p[None, :].copy(),
                         Es=np.empty((0, 0, 0)))
    As, Bs, cs, Qs, Rs, Ss, qs, rs, consts = _stack_stage_data(stages)
    Ps, Ks, Es, Einvs = backward_matrices(As, Bs, Qs, Rs, Ss, terminal.P)
    ps, ks, c0 = backward_vectors(As, Bs, cs, qs, rs, consts, Ps, Ks, Einvs,
                                  terminal.p, terminal.c0)
    sweep = RiccatiSweep(Ks=Ks, ks=ks, Ps=Ps, ps=ps, Es=Es)
    return TerminalQuadratic(Ps[0].copy(), ps[0].copy(), c0), sweep


def forward_sweep(sweep: RiccatiSweep, x_start: np.ndarray,
                  stages: list[StageLinearization]) -> tuple[np.ndarray, np.ndarray]:
    """Recover the eliminated trajectory from the run's entry state."""
    if not stages:
        return np.asarray(x_start, float)[None, :].copy(), np.empty((0, 0))
    As = np.stack([s.A for s in stages])
    Bs = np.stack([s.B for s in stages])
    cs = np.stack([s.c for s in stages])
    return forward_rollout(As, Bs, cs, sweep.Ks, sweep.ks, np.asarray(x_start, float))


@dataclass
class PolicyLinearization:
    """Stagewise affine model u = values[k] + jacobians[k] (x - points[k])."""

    points: np.ndarray      # (T, nx) linearization states
    values: np.ndarray      # (T, nu) policy outputs at the points
    jacobians: np.ndarray   # (T, nu, nx) policy Jacobians at the points

    def affine(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (F, h) with u = F x + h at stage k."""
        F = self.jacobians[k]
        h = self.values[k] - F @ self.points[k]
        return F, h


def closed_loop_sweep(stages: list[StageLinearization], policy: PolicyLinearization,
                      terminal: TerminalQuadratic) -> TerminalQuadratic:
    """Propagate the stage quadratics through the policy-substituted loop.

    The control is fixed to the affine policy u = F x + h at every stage;
    no minimization takes place, so the recursion is a Lyapunov-style cost
    accumulation over x_{k+1} = (A + BF) x + (Bh + c).
    """
    P = 0.5 * (terminal.P + terminal.P.T)
    p = terminal.p.copy()
    c0 = float(terminal.c0)
    for k in range(len(stages) - 1, -1, -1):
        s = stages[k]
        F, h = policy.affine(k)
        RF = s.R_blk @ F
        Rh = s.R_blk @ h
        Q_hat = s.Q_blk + F.T @ RF + F.T @ s.S_blk + s.S_blk.T @ F
        q_hat = s.q + F.T @ s.r + s.S_blk.T @ h + F.T @ Rh
        c_hat = s.const_term + s.r @ h + 0.5 * h @ Rh
        A_cl = s.A + s.B @ F
        c_cl = s.c + s.B @ h
        Pc = P @ c_cl
        c0 = c0 + c_hat + 0.5 * c_cl @ Pc + p @ c_cl
        p = q_hat + A_cl.T @ (Pc + p)
        P_new = Q_hat + A_cl.T @ P @ A_cl
        P = 0.5 * (P_new + P_new.T)
    return TerminalQuadratic(P, p, c0)


def closed_loop_forward(stages: list[StageLinearization], policy: PolicyLinearization,
                        x_start: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Roll the linearized closed loop forward from the run's entry state."""
    T = len(stages)
    nx = stages[0].A.shape[0] if T else np.asarray(x_start).shape[0]
    nu = stages[0].B.shape[1] if T else 0
    xs = np.empty((T + 1, nx))
    us = np.empty((T, nu))
    xs[0] = np.asarray(x_start, float)
    for k in range(T):
        F, h = policy.affine(k)
        us[k] = F @ xs[k] + h
        xs[k + 1] = stages[k].A @ xs[k] + stages[k].B @ us[k] + stages[k].c
    return xs, us
