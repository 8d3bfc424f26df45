"""Structure-exploiting primal-dual interior-point solver for box-constrained
multi-stage QPs.

The QP is given by a run of StageLinearization nodes (absolute-coordinate
quadratic models with optional hard box data), a TerminalQuadratic cost and a
fixed initial state.  Every Newton system is eliminated by one Riccati
backward/forward pass; box faces enter through diagonal Hessian augmentation
and gradient modifications, which keeps each iteration O(horizon).  Slack and
multiplier vectors are stored dense with a finite-bound mask so all face
updates are plain array operations.

Mehrotra-style predictor-corrector steps with a fraction-to-boundary rule
drive the max KKT residual below tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .riccati import (RiccatiFactorizationError, backward_matrices,
                      backward_vectors, forward_rollout)
from .tightening import StageLinearization, TerminalQuadratic

STATUS_SUCCESS = "success"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_NON_FINITE = "non_finite"
STATUS_FACTORIZATION = "factorization_error"
STATUS_STALLED = "stalled"

FRACTION_TO_BOUNDARY = 0.995
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERATIONS = 50
USABLE_TOL = 1e-6      # looser bar at which real-time callers may still apply the step
SLACK_FLOOR = 1e-2
STALL_WINDOW = 12      # iterations without a 10% best-KKT cut => give up early
# The barrier conditioning grows like lam^2 / mu on active faces, and a Newton
# direction computed from data of size lam^2/mu carries a relative error of
# roughly eps * lam^2 / mu even after refinement.  Flooring the target measure
# at MU_COND_FLOOR * lam^2 keeps that error near 1e-3, so large-multiplier
# instances settle in the loose-but-usable band instead of derailing on
# unresolvable directions.
MU_COND_FLOOR = 1.7e3 * np.finfo(np.float64).eps


@dataclass
class QpSolution:
    """Solution report of one structured QP solve."""

    states: np.ndarray          # (T+1, nx), states[0] = fixed initial state
    controls: np.ndarray        # (T, nu)
    lam_x_lb: np.ndarray        # (T+1, nx) multipliers, zero where no face
    lam_x_ub: np.ndarray
    lam_u_lb: np.ndarray        # (T, nu)
    lam_u_ub: np.ndarray
    stat_residual: float
    eq_residual: float
    ineq_residual: float        # max |g + s| over faces (primal slack residual)
    comp_residual: float        # max lambda_i s_i
    box_violation: float        # max(0, g) over faces at the returned point
    objective: float
    iterations: int
    status: str
    mu_history: list = field(default_factory=list)
    comp_relative: float = np.nan   # comp_residual / max(1, |lambda|_inf)

    @property
    def success(self) -> bool:
        return self.status == STATUS_SUCCESS

    @property
    def kkt_max(self) -> float:
        return max(self.stat_residual, self.eq_residual,
                   self.ineq_residual, self.comp_residual)

    @property
    def usable(self) -> bool:
        """True when the point is safe to apply in a real-time step.

        Complementarity is judged relative to the dual scale of the
        instance: when bounds carry huge multipliers, float64 cannot drive
        the raw products below an absolute tolerance no matter how exact
        the primal is, while the relative gap reduces to the distance of
        the iterate from the bounds it presses against.  Stationarity and
        feasibility stay absolute, so a genuinely bad solve is still
        rejected.
        """
        if self.success:
            return True
        others = max(self.stat_residual, self.eq_residual,
                     self.ineq_residual, self.box_violation)
        return (np.isfinite(others) and others < USABLE_TOL
                and np.isfinite(self.comp_relative)
                and self.comp_relative < USABLE_TOL)


def _bound_arrays(stages, term_lb, term_ub, T, nx, nu):
    """Dense bound values plus finite-face masks.

    State rows are indexed 0..T with row 0 always maskless (x_0 is fixed)
    and row T holding the terminal box.  Unbounded entries carry value 0
    and mask False; every use multiplies through the mask.
    """
    bx_lb = np.full((T + 1, nx), -np.inf)
    bx_ub = np.full((T + 1, nx), np.inf)
    bu_lb = np.full((T, nu), -np.inf)
    bu_ub = np.full((T, nu), np.inf)
    for k, st in enumerate(stages):
        if not st.has_bounds:
            continue
        if k >= 1:
            if st.x_lb is not None:
                bx_lb[k] = st.x_lb
            if st.x_ub is not None:
                bx_ub[k] = st.x_ub
        if st.u_lb is not None:
            bu_lb[k] = st.u_lb
        if st.u_ub is not None:
            bu_ub[k] = st.u_ub
    if term_lb is not None:
        bx_lb[T] = term_lb
    if term_ub is not None:
        bx_ub[T] = term_ub
    masks = tuple(np.isfinite(b) for b in (bx_lb, bx_ub, bu_lb, bu_ub))
    bounds = tuple(np.where(m, b, 0.0)
                   for b, m in zip((bx_lb, bx_ub, bu_lb, bu_ub), masks))
    return bounds, masks


def _slack_floor(b_lb, b_ub, m_lb, m_ub):
    """Initial slack/multiplier magnitude per variable."""
    two_sided = m_lb & m_ub
    half = np.where(two_sided, 0.5 * (b_ub - b_lb), np.inf)
    return np.where(two_sided, np.maximum(0.1 * half, SLACK_FLOOR), 1.0)


class InteriorPointSolver:
    """Owns the workspace of one structured QP; one solve at a time."""

    def __init__(self, tol: float = DEFAULT_TOL,
                 max_iterations: int = DEFAULT_MAX_ITERATIONS):
        self.tol = float(tol)
        self.max_iterations = int(max_iterations)

    def solve(self, stages: list[StageLinearization], terminal: TerminalQuadratic,
              x0: np.ndarray, term_lb: np.ndarray | None = None,
              term_ub: np.ndarray | None = None) -> QpSolution:
        T = len(stages)
        if T == 0:
            raise ValueError("QP needs at least one stage")
        nx = stages[0].A.shape[0]
        nu = stages[0].B.shape[1]
        x0 = np.asarray(x0, float)

        As = np.stack([s.A for s in stages])
        Bs = np.stack([s.B for s in stages])
        cs = np.stack([s.c for s in stages])
        Qs = np.stack([s.Q_blk for s in stages])
        Rs = np.stack([s.R_blk for s in stages])
        Ss = np.stack([s.S_blk for s in stages])
        qs = np.stack([s.q for s in stages])
        rs = np.stack([s.r for s in stages])
        consts = np.array([s.const_term for s in stages])
        P_T = 0.5 * (terminal.P + terminal.P.T)
        p_T = terminal.p

        try:
            return self._solve_inner(As, Bs, cs, Qs, Rs, Ss, qs, rs, consts,
                                     P_T, p_T, terminal.c0, x0,
                                     stages, term_lb, term_ub, T, nx, nu)
        except RiccatiFactorizationError:
            return self._failed(STATUS_FACTORIZATION, x0, T, nx, nu)

    # ----- internals -------------------------------------------------------

    def _failed(self, status, x0, T, nx, nu, xs=None, us=None, iterations=0):
        return QpSolution(
            states=xs if xs is not None else np.tile(x0, (T + 1, 1)),
            controls=us if us is not None else np.zeros((T, nu)),
            lam_x_lb=np.zeros((T + 1, nx)), lam_x_ub=np.zeros((T + 1, nx)),
            lam_u_lb=np.zeros((T, nu)), lam_u_ub=np.zeros((T, nu)),
            stat_residual=np.inf, eq_residual=np.inf, ineq_residual=np.inf,
            comp_residual=np.inf, box_violation=np.inf, objective=np.nan,
            iterations=iterations, status=status)

    def _objective(self, xs, us, Qs, Rs, Ss, qs, rs, consts, P_T, p_T, c0_T) -> float:
        val = 0.5 * np.einsum("ki,kij,kj->", xs[:-1], Qs, xs[:-1]) \
            + 0.5 * np.einsum("ki,kij,kj->", us, Rs, us) \
            + np.einsum("ki,kij,kj->", us, Ss, xs[:-1]) \
            + np.einsum("ki,ki->", qs, xs[:-1]) + np.einsum("ki,ki->", rs, us) \
            + consts.sum()
        xT = xs[-1]
        return float(val + 0.5 * xT @ P_T @ xT + p_T @ xT + c0_T)

    def _solve_inner(self, As, Bs, cs, Qs, Rs, Ss, qs, rs, consts,
                     P_T, p_T, c0_T, x0, stages, term_lb, term_ub, T, nx, nu):
        # initial primal: unconstrained Riccati solution, then box-clipped
        Ps0, Ks0, _, Einvs0 = backward_matrices(As, Bs, Qs, Rs, Ss, P_T)
        ps0, ks0, _ = backward_vectors(As, Bs, cs, qs, rs, None, Ps0, Ks0,
                                       Einvs0, p_T, c0_T)
        xs, us = forward_rollout(As, Bs, cs, Ks0, ks0, x0)
        nus = np.einsum("kij,kj->ki", Ps0[1:], xs[1:]) + ps0[1:]   # costates

        (bx_lb, bx_ub, bu_lb, bu_ub), (mx_lb, mx_ub, mu_lb, mu_ub) = \
            _bound_arrays(stages, term_lb, term_ub, T, nx, nu)
        m = int(mx_lb.sum() + mx_ub.sum() + mu_lb.sum() + mu_ub.sum())

        xs = np.where(mx_ub, np.minimum(xs, bx_ub), xs)
        xs = np.where(mx_lb, np.maximum(xs, bx_lb), xs)
        us = np.where(mu_ub, np.minimum(us, bu_ub), us)
        us = np.where(mu_lb, np.maximum(us, bu_lb), us)

        # slack floor per the stated init rule; slacks additionally made
        # consistent with the clipped primal so the run starts near the
        # central path instead of with a large primal slack residual
        floor_x = _slack_floor(bx_lb, bx_ub, mx_lb, mx_ub)
        floor_u = _slack_floor(bu_lb, bu_ub, mu_lb, mu_ub)
        sx_lb = np.where(mx_lb, np.maximum(xs - bx_lb, floor_x), 1.0)
        sx_ub = np.where(mx_ub, np.maximum(bx_ub - xs, floor_x), 1.0)
        su_lb = np.where(mu_lb, np.maximum(us - bu_lb, floor_u), 1.0)
        su_ub = np.where(mu_ub, np.maximum(bu_ub - us, floor_u), 1.0)
        lx_lb = np.where(mx_lb, floor_x, 0.0)
        lx_ub = np.where(mx_ub, floor_x, 0.0)
        lu_lb = np.where(mu_lb, floor_u, 0.0)
        lu_ub = np.where(mu_ub, floor_u, 0.0)

        mu_history: list[float] = []
        status = STATUS_MAX_ITERATIONS
        iterations = 0
        ix = np.arange(nx)
        iu = np.arange(nu)
        best = None
        best_kkt = np.inf
        best_u = None
        best_u_fig = np.inf
        feas_hist: list[float] = []
        last_progress = 0
        comp_rel = np.nan

        def u_figure(c):
            # usability figure: absolute residuals except complementarity,
            # which is judged against the dual scale of the point
            return max(c[6], c[7], c[8], c[10], c[11])

        for iterations in range(self.max_iterations + 1):
            if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us))):
                if best is None:
                    return self._failed(STATUS_NON_FINITE, x0, T, nx, nu,
                                        iterations=iterations)
                # a diverging endgame overflowed, but earlier iterations
                # produced a finite point worth reporting
                status = STATUS_NON_FINITE
                break
            # stationarity / equality residuals (x_0 is eliminated); the
            # costate- and multiplier-free base rows are kept so the dual
            # polish below can rebuild both from them
            r_dyn = np.einsum("kij,kj->ki", As, xs[:T]) \
                + np.einsum("kij,kj->ki", Bs, us) + cs - xs[1:]
            base_u = np.einsum("kij,kj->ki", Ss, xs[:T]) \
                + np.einsum("kij,kj->ki", Rs, us) + rs
            base_x = np.zeros((T + 1, nx))  # rows 1..T-1 interior, row T terminal
            if T > 1:
                base_x[1:T] = np.einsum("kij,kj->ki", Qs[1:], xs[1:T]) \
                    + np.einsum("kji,kj->ki", Ss[1:], us[1:]) + qs[1:]
            base_x[T] = P_T @ xs[T] + p_T
            ru0 = base_u + np.einsum("kji,kj->ki", Bs, nus)
            rx0 = base_x.copy()
            if T > 1:
                rx0[1:T] += np.einsum("kji,kj->ki", As[1:], nus[1:]) - nus[:-1]
            rx0[T] -= nus[T - 1]
            lam_x = lx_ub - lx_lb
            ru = ru0 + (lu_ub - lu_lb)
            rx = rx0[:T] + lam_x[:T]    # rx[k] valid for k >= 1; row 0 zero
            rT = rx0[T] + lam_x[T]

            gx_lb = bx_lb - xs
            gx_ub = xs - bx_ub
            gu_lb = bu_lb - us
            gu_ub = us - bu_ub
            rs_x_lb = np.where(mx_lb, gx_lb + sx_lb, 0.0)
            rs_x_ub = np.where(mx_ub, gx_ub + sx_ub, 0.0)
            rs_u_lb = np.where(mu_lb, gu_lb + su_lb, 0.0)
            rs_u_ub = np.where(mu_ub, gu_ub + su_ub, 0.0)

            stat = max(float(np.max(np.abs(ru))),
                       float(np.max(np.abs(rx[1:]))) if T > 1 else 0.0,
                       float(np.max(np.abs(rT))))
            eq = float(np.max(np.abs(r_dyn)))
            ineq = max(float(np.max(np.abs(rs_x_lb))), float(np.max(np.abs(rs_x_ub))),
                       float(np.max(np.abs(rs_u_lb))), float(np.max(np.abs(rs_u_ub))))
            comp = max(float(np.max(lx_lb * sx_lb)), float(np.max(lx_ub * sx_ub)),
                       float(np.max(lu_lb * su_lb)), float(np.max(lu_ub * su_ub)))
            viol = max(
                float(np.max(np.where(mx_lb, gx_lb, 0.0), initial=0.0)),
                float(np.max(np.where(mx_ub, gx_ub, 0.0), initial=0.0)),
                float(np.max(np.where(mu_lb, gu_lb, 0.0), initial=0.0)),
                float(np.max(np.where(mu_ub, gu_ub, 0.0), initial=0.0)))
            if m:
                mu = float((lx_lb * sx_lb).sum() + (lx_ub * sx_ub).sum()
                           + (lu_lb * su_lb).sum() + (lu_ub * su_ub).sum()) / m
                mu_history.append(mu)
            kkt_now = max(stat, eq, ineq, comp)

            def dual_scale(l_x_lb, l_x_ub, l_u_lb, l_u_ub):
                return max(1.0,
                           float(np.max(l_x_lb)), float(np.max(l_x_ub)),
                           float(np.max(l_u_lb)), float(np.max(l_u_ub)))

            cand = (xs, us, lx_lb, lx_ub, lu_lb, lu_ub,
                    stat, eq, ineq, comp, viol,
                    comp / dual_scale(lx_lb, lx_ub, lu_lb, lu_ub))
            cand_kkt = kkt_now

            if comp < 1e-4 and m:
                # endgame dual polish: the Newton dual/costate recovery
                # divides by the slacks, which amplifies primal roundoff by
                # 1/s on active faces and floors the reachable stationarity
                # residual.  Clamping multipliers from the gradient rows and
                # re-deriving costates through the adjoint recursion (twice,
                # so both noise sources collapse) sidesteps that; the
                # candidate is adopted only if its recomputed residuals
                # actually improve on the iterate's.
                g_x = rx0
                nus_p = np.empty_like(nus)
                for _ in range(2):
                    plx_lb = np.where(mx_lb, np.maximum(g_x, 0.0), 0.0)
                    plx_ub = np.where(mx_ub, np.maximum(-g_x, 0.0), 0.0)
                    dlamx = plx_ub - plx_lb
                    nus_p[T - 1] = base_x[T] + dlamx[T]
                    for k in range(T - 1, 0, -1):
                        nus_p[k - 1] = base_x[k] + As[k].T @ nus_p[k] + dlamx[k]
                    g_x = base_x.copy()
                    if T > 1:
                        g_x[1:T] += np.einsum("kji,kj->ki", As[1:], nus_p[1:]) \
                            - nus_p[:-1]
                    g_x[T] -= nus_p[T - 1]
                g_u = base_u + np.einsum("kji,kj->ki", Bs, nus_p)
                plu_lb = np.where(mu_lb, np.maximum(g_u, 0.0), 0.0)
                plu_ub = np.where(mu_ub, np.maximum(-g_u, 0.0), 0.0)
                pru = g_u + plu_ub - plu_lb
                prx = g_x + plx_ub - plx_lb
                stat_p = max(float(np.max(np.abs(pru))),
                             float(np.max(np.abs(prx[1:]))))
                comp_p = max(float(np.max(plx_lb * sx_lb)),
                             float(np.max(plx_ub * sx_ub)),
                             float(np.max(plu_lb * su_lb)),
                             float(np.max(plu_ub * su_ub)))
                kkt_p = max(stat_p, eq, ineq, comp_p)
                if kkt_p < kkt_now:
                    cand = (xs, us, plx_lb, plx_ub, plu_lb, plu_ub,
                            stat_p, eq, ineq, comp_p, viol,
                            comp_p / dual_scale(plx_lb, plx_ub, plu_lb, plu_ub))
                    cand_kkt = kkt_p
                if kkt_p < best_kkt:
                    # Feed the recovered duals back into the iterate as well:
                    # left in place, the slack-divided Newton dual noise
                    # compounds through the next barrier weights, whereas the
                    # recovered point restarts the path coherently.  Only a
                    # polish that beats everything seen so far is trusted; a
                    # tiny floor keeps strict positivity for the step rule.
                    lx_lb = np.where(mx_lb, np.maximum(plx_lb, 1e-12), 0.0)
                    lx_ub = np.where(mx_ub, np.maximum(plx_ub, 1e-12), 0.0)
                    lu_lb = np.where(mu_lb, np.maximum(plu_lb, 1e-12), 0.0)
                    lu_ub = np.where(mu_ub, np.maximum(plu_ub, 1e-12), 0.0)
                    nus = nus_p.copy()
                    rx0 = g_x
                    ru0 = g_u
                    lam_x = lx_ub - lx_lb
                    ru = ru0 + (lu_ub - lu_lb)
                    rx = rx0[:T] + lam_x[:T]
                    rT = rx0[T] + lam_x[T]
                    stat, comp = stat_p, comp_p
                    mu = float((lx_lb * sx_lb).sum() + (lx_ub * sx_ub).sum()
                               + (lu_lb * su_lb).sum()
                               + (lu_ub * su_ub).sum()) / m

            feas_hist.append(max(eq, ineq))
            if cand_kkt < 0.9 * best_kkt:
                last_progress = iterations
            if cand_kkt < best_kkt:
                best_kkt = cand_kkt
                best = cand
            cand_u = u_figure(cand)
            if cand_u < best_u_fig:
                best_u_fig = cand_u
                best_u = cand
            if cand_kkt < self.tol:
                (xs, us, lx_lb, lx_ub, lu_lb, lu_ub,
                 stat, eq, ineq, comp, viol, comp_rel) = cand
                status = STATUS_SUCCESS
                break
            if iterations == self.max_iterations or m == 0:
                # m == 0 cannot stall here except for a numerically
                # unreachable tolerance: the initial point is already the
                # unconstrained optimum.
                break
            if iterations - last_progress >= STALL_WINDOW:
                # A shrinking feasibility gap also counts as progress: while
                # the active-set multipliers are still growing toward their
                # final magnitude the max-KKT figure is dominated by
                # complementarity and can rise for a dozen iterations even
                # though the iteration is healthy.  The cut can be slow (a
                # few percent per iteration), so it is judged cumulatively
                # over the whole window; a hopeless instance -- typically an
                # escaped plant making the box unreachable -- leaves eq/ineq
                # essentially frozen instead.
                if (feas_hist[-1] > self.tol
                        and feas_hist[-1] < 0.95 * feas_hist[-1 - STALL_WINDOW]):
                    last_progress = iterations
                else:
                    status = STATUS_STALLED
                    break

            # Hessian augmentation (shared by predictor and corrector)
            dx_diag = lx_lb / sx_lb + lx_ub / sx_ub     # (T+1, nx)
            du_diag = lu_lb / su_lb + lu_ub / su_ub     # (T, nu)
            Qs_bar = Qs.copy()
            Qs_bar[1:, ix, ix] += dx_diag[1:T]
            Rs_bar = Rs.copy()
            Rs_bar[:, iu, iu] += du_diag
            P_bar = P_T.copy()
            P_bar[ix, ix] += dx_diag[T]
            try:
                Ps, Ks, _, Einvs = backward_matrices(As, Bs, Qs_bar, Rs_bar,
                                                     Ss, P_bar)
            except RiccatiFactorizationError:
                # barrier conditioning beyond float64; keep the best point
                status = STATUS_FACTORIZATION
                break

            def solve_eliminated(q_hat, r_hat, p_hat_T, c_hat, refine=True):
                ps_n, ks_n, _ = backward_vectors(As, Bs, c_hat, q_hat, r_hat,
                                                 None, Ps, Ks, Einvs,
                                                 p_hat_T, 0.0)
                dxs, dus = forward_rollout(As, Bs, c_hat, Ks, ks_n, np.zeros(nx))
                dnus = np.einsum("kij,kj->ki", Ps[1:], dxs[1:]) + ps_n[1:]
                if not refine:
                    return dxs, dus, dnus
                # One refinement pass: the sweep reuses approximate inverses
                # whose error is magnified by the barrier scales, which would
                # otherwise floor the reachable stationarity residual above
                # the tolerance.
                res_u = np.einsum("kij,kj->ki", Rs_bar, dus) \
                    + np.einsum("kij,kj->ki", Ss, dxs[:T]) \
                    + np.einsum("kji,kj->ki", Bs, dnus) + r_hat
                res_x = np.zeros((T, nx))
                if T > 1:
                    res_x[1:] = np.einsum("kij,kj->ki", Qs_bar[1:], dxs[1:T]) \
                        + np.einsum("kji,kj->ki", Ss[1:], dus[1:]) + q_hat[1:] \
                        + np.einsum("kji,kj->ki", As[1:], dnus[1:]) - dnus[:-1]
                res_T = P_bar @ dxs[T] + p_hat_T - dnus[T - 1]
                res_dyn = np.einsum("kij,kj->ki", As, dxs[:T]) \
                    + np.einsum("kij,kj->ki", Bs, dus) + c_hat - dxs[1:]
                ps_r, ks_r, _ = backward_vectors(As, Bs, res_dyn, res_x, res_u,
                                                 None, Ps, Ks, Einvs,
                                                 res_T, 0.0)
                exs, eus = forward_rollout(As, Bs, res_dyn, Ks, ks_r, np.zeros(nx))
                dxs = dxs + exs
                dus = dus + eus
                dnus = dnus + np.einsum("kij,kj->ki", Ps[1:], exs[1:]) + ps_r[1:]
                return dxs, dus, dnus

            def newton(rho_x, rho_u, rho_T, rho_dyn, rho_s, rc, refine=True):
                rsx_lb, rsx_ub, rsu_lb, rsu_ub = rho_s
                rcx_lb, rcx_ub, rcu_lb, rcu_ub = rc
                wx = np.where(mx_ub, (lx_ub * rsx_ub - rcx_ub) / sx_ub, 0.0) \
                    - np.where(mx_lb, (lx_lb * rsx_lb - rcx_lb) / sx_lb, 0.0)
                wu = np.where(mu_ub, (lu_ub * rsu_ub - rcu_ub) / su_ub, 0.0) \
                    - np.where(mu_lb, (lu_lb * rsu_lb - rcu_lb) / su_lb, 0.0)
                q_hat = rho_x.copy()
                q_hat[1:] += wx[1:T]
                r_hat = rho_u + wu
                p_hat_T = rho_T + wx[T]
                dxs, dus, dnus = solve_eliminated(q_hat, r_hat, p_hat_T,
                                                  rho_dyn, refine)
                dsx_lb = np.where(mx_lb, -rsx_lb + dxs, 0.0)
                dsx_ub = np.where(mx_ub, -rsx_ub - dxs, 0.0)
                dsu_lb = np.where(mu_lb, -rsu_lb + dus, 0.0)
                dsu_ub = np.where(mu_ub, -rsu_ub - dus, 0.0)
                dlx_lb = np.where(mx_lb, -(rcx_lb + lx_lb * dsx_lb) / sx_lb, 0.0)
                dlx_ub = np.where(mx_ub, -(rcx_ub + lx_ub * dsx_ub) / sx_ub, 0.0)
                dlu_lb = np.where(mu_lb, -(rcu_lb + lu_lb * dsu_lb) / su_lb, 0.0)
                dlu_ub = np.where(mu_ub, -(rcu_ub + lu_ub * dsu_ub) / su_ub, 0.0)
                return (dxs, dus, dnus,
                        (dsx_lb, dsx_ub, dsu_lb, dsu_ub),
                        (dlx_lb, dlx_ub, dlu_lb, dlu_ub))

            def max_step(d_s, d_lam):
                alpha = 1.0
                with np.errstate(divide="ignore", invalid="ignore"):
                    for val, dval in zip((sx_lb, sx_ub, su_lb, su_ub) + (
                            lx_lb, lx_ub, lu_lb, lu_ub), d_s + d_lam):
                        ratio = np.where(dval < 0.0, -val / dval, np.inf)
                        alpha = min(alpha, float(np.min(ratio)))
                return alpha

            rho_s = (rs_x_lb, rs_x_ub, rs_u_lb, rs_u_ub)
            slacks = (sx_lb, sx_ub, su_lb, su_ub)
            lams = (lx_lb, lx_ub, lu_lb, lu_ub)

            # predictor (affine scaling direction)
            rc_aff = tuple(lam * s for lam, s in zip(lams, slacks))
            _, _, _, ds_a, dlam_a = newton(rx, ru, rT, r_dyn, rho_s, rc_aff,
                                           refine=False)
            alpha_aff = max_step(ds_a, dlam_a)
            mu_aff = sum(float(((s + alpha_aff * ds) * (lam + alpha_aff * dl)).sum())
                         for s, lam, ds, dl in zip(slacks, lams, ds_a, dlam_a)) / m
            sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** 3) if mu > 0 else 0.0
            # target duality measure; floored near tol/20 so the endgame lands
            # at a measure the barrier conditioning can still resolve instead
            # of overshooting toward zero.  The multiplier scale of the best
            # point seen raises that floor for stiff instances (see
            # MU_COND_FLOOR); the floor never pushes the target above mu.
            lam_ref = best[2:6] if best is not None else lams
            lam_scale = max(float(np.max(la)) for la in lam_ref)
            mu_t = max(sigma * mu, min(self.tol / 20.0, mu),
                       min(mu, MU_COND_FLOOR * lam_scale * lam_scale))
            # corrector (reuses the factorized Newton matrices); the
            # refinement pass only pays off once the barrier conditioning is
            # high, so it is switched on in the endgame
            refine_dir = comp < 1e-3
            rc_cor = tuple(rc + ds * dl - mu_t
                           for rc, ds, dl in zip(rc_aff, ds_a, dlam_a))
            dxs_c, dus_c, dnus_c, ds_c, dlam_c = newton(rx, ru, rT, r_dyn,
                                                        rho_s, rc_cor,
                                                        refine=refine_dir)
            step = max_step(ds_c, dlam_c)

            # centrality corrections: pull straggler products back toward the
            # mean so the max-norm complementarity converges together with the
            # duality measure instead of forcing it far below tolerance
            zero_rho = (np.zeros((T, nx)), np.zeros((T, nu)), np.zeros(nx),
                        np.zeros((T, nx)))
            zero_s = tuple(np.zeros_like(s) for s in slacks)
            for _ in range(2):
                a_t = min(1.0, step + 0.1)
                prods = tuple((s + a_t * ds) * (lam + a_t * dl)
                              for s, lam, ds, dl in zip(slacks, lams, ds_c, dlam_c))
                spread = max(float(np.max(np.where(msk, p, mu_t)))
                             for p, msk in zip(prods, (mx_lb, mx_ub, mu_lb, mu_ub)))
                if step >= 0.995 and spread <= 10.0 * mu_t:
                    break
                rc_g = tuple(np.where(msk, p - np.clip(p, 0.1 * mu_t, 10.0 * mu_t), 0.0)
                             for p, msk in zip(prods, (mx_lb, mx_ub, mu_lb, mu_ub)))
                dxs_g, dus_g, dnus_g, ds_g, dlam_g = newton(*zero_rho, zero_s,
                                                            rc_g, refine=False)
                trial_ds = tuple(d + g for d, g in zip(ds_c, ds_g))
                trial_dlam = tuple(d + g for d, g in zip(dlam_c, dlam_g))
                trial_step = max_step(trial_ds, trial_dlam)
                if trial_step < step:
                    break
                dxs_c = dxs_c + dxs_g
                dus_c = dus_c + dus_g
                dnus_c = dnus_c + dnus_g
                ds_c, dlam_c, step = trial_ds, trial_dlam, trial_step
            alpha = min(1.0, FRACTION_TO_BOUNDARY * step)

            xs = xs + alpha * dxs_c
            us = us + alpha * dus_c
            nus = nus + alpha * dnus_c
            sx_lb = sx_lb + alpha * ds_c[0]
            sx_ub = sx_ub + alpha * ds_c[1]
            su_lb = su_lb + alpha * ds_c[2]
            su_ub = su_ub + alpha * ds_c[3]
            lx_lb = lx_lb + alpha * dlam_c[0]
            lx_ub = lx_ub + alpha * dlam_c[1]
            lu_lb = lu_lb + alpha * dlam_c[2]
            lu_ub = lu_ub + alpha * dlam_c[3]

        if status != STATUS_SUCCESS and best is not None:
            # Return the best point visited; late iterations can degrade once
            # the barrier conditioning exceeds what float64 can resolve.  When
            # a different iterate is strictly better by the usability figure
            # and clears the loose bar, prefer it: on large-multiplier
            # instances the raw-product minimiser is often an earlier, less
            # polished point than the one with machine-exact primal residuals.
            if (best_u is not None and best_u_fig < USABLE_TOL
                    and best_u_fig < u_figure(best)):
                best = best_u
            (xs, us, lx_lb, lx_ub, lu_lb, lu_ub,
             stat, eq, ineq, comp, viol, comp_rel) = best
        return QpSolution(
            states=xs, controls=us,
            lam_x_lb=np.where(mx_lb, lx_lb, 0.0),
            lam_x_ub=np.where(mx_ub, lx_ub, 0.0),
            lam_u_lb=np.where(mu_lb, lu_lb, 0.0),
            lam_u_ub=np.where(mu_ub, lu_ub, 0.0),
            stat_residual=stat, eq_residual=eq, ineq_residual=ineq,
            comp_residual=comp, box_violation=viol,
            objective=self._objective(xs, us, Qs, Rs, Ss, qs, rs, consts,
                                      P_T, p_T, c0_T),
            iterations=iterations, status=status, mu_history=mu_history,
            comp_relative=comp_rel)


def solve(stages: list[StageLinearization], terminal: TerminalQuadratic,
          x0: np.ndarray, tol: float = DEFAULT_TOL,
          max_iterations: int = DEFAULT_MAX_ITERATIONS) -> QpSolution:
    """Solve the first-phase QP: hard boxes on the given stages, quadratic
    terminal cost, no terminal box."""
    return InteriorPointSolver(tol, max_iterations).solve(stages, terminal, x0)


def solve_full_horizon(stages: list[StageLinearization], terminal: TerminalQuadratic,
                       x0: np.ndarray, x_lb: np.ndarray | None, x_ub: np.ndarray | None,
                       tol: float = DEFAULT_TOL,
                       max_iterations: int = DEFAULT_MAX_ITERATIONS) -> QpSolution:
    """Solve the full-horizon QP with box data on every stage and on the
    terminal state."""
    return InteriorPointSolver(tol, max_iterations).solve(
        stages, terminal, x0, term_lb=x_lb, term_ub=x_ub)
