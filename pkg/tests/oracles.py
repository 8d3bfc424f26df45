"""Independent reference implementations used to cross-check the package.

Everything here is written against the mathematical problem statements only:
dense matrix assembly plus generic linear algebra, no reuse of the package's
structured algorithms.  Deliberately slow and simple.
"""
from __future__ import annotations

import itertools

import numpy as np


# ----- dense LQ assembly ----------------------------------------------------

def assemble_dense_lq(As, Bs, cs, Qs, Rs, Ss, qs, rs, consts, P_T, p_T, c0_T, x0):
    """Stack a fixed-x0 multi-stage LQ problem into one dense QP.

    Variables z = (x_1, ..., x_T, u_0, ..., u_{T-1}).  Returns
    (H, g, const, C, d) with cost 0.5 z'Hz + g'z + const subject to C z = d.
    """
    As, Bs, cs = np.asarray(As, float), np.asarray(Bs, float), np.asarray(cs, float)
    Qs, Rs, Ss = np.asarray(Qs, float), np.asarray(Rs, float), np.asarray(Ss, float)
    qs, rs = np.asarray(qs, float), np.asarray(rs, float)
    x0 = np.asarray(x0, float)
    T, nx = As.shape[0], As.shape[1]
    nu = Bs.shape[2]
    nz = T * nx + T * nu
    xi = lambda k: slice((k - 1) * nx, k * nx)          # x_k block, k >= 1
    ui = lambda k: slice(T * nx + k * nu, T * nx + (k + 1) * nu)

    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    const = float(np.sum(consts)) + float(c0_T)

    # stage 0: x_0 is data, so its quadratic terms become constants/linear-in-u
    const += 0.5 * x0 @ Qs[0] @ x0 + qs[0] @ x0
    H[ui(0), ui(0)] += Rs[0]
    g[ui(0)] += rs[0] + Ss[0] @ x0
    for k in range(1, T):
        H[xi(k), xi(k)] += Qs[k]
        H[ui(k), ui(k)] += Rs[k]
        H[ui(k), xi(k)] += Ss[k]
        H[xi(k), ui(k)] += Ss[k].T
        g[xi(k)] += qs[k]
        g[ui(k)] += rs[k]
    H[xi(T), xi(T)] += np.asarray(P_T, float)
    g[xi(T)] += np.asarray(p_T, float)

    C = np.zeros((T * nx, nz))
    d = np.zeros(T * nx)
    for k in range(T):
        rows = slice(k * nx, (k + 1) * nx)
        C[rows, xi(k + 1)] = np.eye(nx)
        C[rows, ui(k)] = -Bs[k]
        if k == 0:
            d[rows] = cs[0] + As[0] @ x0
        else:
            C[rows, xi(k)] = -As[k]
            d[rows] = cs[k]
    return H, g, const, C, d


def solve_eq_qp(H, g, C, d):
    """Minimize 0.5 z'Hz + g'z subject to C z = d via the dense KKT system.

    Returns (z, nu, value_without_const).  Raises numpy.linalg.LinAlgError if
    the KKT matrix is singular.
    """
    nz, nc = H.shape[0], C.shape[0]
    K = np.zeros((nz + nc, nz + nc))
    K[:nz, :nz] = H
    K[:nz, nz:] = C.T
    K[nz:, :nz] = C
    rhs = np.concatenate([-g, d])
    sol = np.linalg.solve(K, rhs)
    z, lam = sol[:nz], sol[nz:]
    if not np.allclose(K @ sol, rhs, atol=1e-8 * max(1.0, np.abs(rhs).max())):
        raise np.linalg.LinAlgError("inconsistent KKT system")
    return z, lam, float(0.5 * z @ H @ z + g @ z)


def dense_lq_solution(As, Bs, cs, Qs, Rs, Ss, qs, rs, consts, P_T, p_T, c0_T, x0):
    """Unconstrained-stage LQ optimum as (xs, us, value) via the dense KKT."""
    H, g, const, C, d = assemble_dense_lq(As, Bs, cs, Qs, Rs, Ss, qs, rs,
                                          consts, P_T, p_T, c0_T, x0)
    z, _, val = solve_eq_qp(H, g, C, d)
    T, nx = np.asarray(As).shape[0], np.asarray(As).shape[1]
    nu = np.asarray(Bs).shape[2]
    xs = np.vstack([np.asarray(x0, float)[None, :], z[:T * nx].reshape(T, nx)])
    us = z[T * nx:].reshape(T, nu)
    return xs, us, val + const


def dense_value_function(As, Bs, cs, Qs, Rs, Ss, qs, rs, consts, P_T, p_T, c0_T, nx):
    """Entry-state value function V(x) = 0.5 x'Px + p'x + c0 of the LQ tail.

    Reconstructed by evaluating the dense optimum at x = 0, e_i, e_i + e_j;
    exact for a quadratic V.
    """
    def v(x):
        return dense_lq_solution(As, Bs, cs, Qs, Rs, Ss, qs, rs, consts,
                                 P_T, p_T, c0_T, x)[2]

    v0 = v(np.zeros(nx))
    basis = np.eye(nx)
    vi = np.array([v(basis[i]) for i in range(nx)])
    P = np.empty((nx, nx))
    for i in range(nx):
        P[i, i] = vi[i] + v(-basis[i]) - 2.0 * v0
        for j in range(i + 1, nx):
            P[i, j] = P[j, i] = v(basis[i] + basis[j]) - vi[i] - vi[j] + v0
    p = np.array([vi[i] - v0 - 0.5 * P[i, i] for i in range(nx)])
    return P, p, v0


# ----- box-constrained QP by active-set enumeration -------------------------

def enumerate_box_qp(H, g, const, C, d, lb, ub, tol=1e-9):
    """Global optimum of 0.5 z'Hz + g'z + const s.t. Cz = d, lb <= z <= ub.

    Brute force over all assignments of every variable to {free, at lower,
    at upper}; each candidate solves the reduced equality-constrained KKT
    system, then primal feasibility and multiplier signs are checked.
    Returns (z, value) of the best verified candidate.
    """
    nz = H.shape[0]
    lb = np.asarray(lb, float)
    ub = np.asarray(ub, float)
    options = []
    for i in range(nz):
        opts = [("f", 0.0)]
        if np.isfinite(lb[i]):
            opts.append(("l", lb[i]))
        if np.isfinite(ub[i]):
            opts.append(("u", ub[i]))
        options.append(opts)

    best_val = np.inf
    best_z = None
    for combo in itertools.product(*options):
        fixed = np.array([c[0] != "f" for c in combo])
        z_fix = np.array([c[1] for c in combo])
        free = ~fixed
        nf = int(free.sum())
        Cf = C[:, free]
        rhs_c = d - C[:, fixed] @ z_fix[fixed] if fixed.any() else d.copy()
        Hff = H[np.ix_(free, free)]
        gf = g[free] + (H[np.ix_(free, fixed)] @ z_fix[fixed] if fixed.any() else 0.0)
        nc = C.shape[0]
        K = np.zeros((nf + nc, nf + nc))
        K[:nf, :nf] = Hff
        K[:nf, nf:] = Cf.T
        K[nf:, :nf] = Cf
        rhs = np.concatenate([-gf, rhs_c])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(sol)):
            continue
        if np.abs(K @ sol - rhs).max() > 1e-7 * max(1.0, np.abs(rhs).max()):
            continue
        z = z_fix.copy()
        z[free] = sol[:nf]
        nu_eq = sol[nf:]
        if np.any(z < lb - tol) or np.any(z > ub + tol):
            continue
        grad = H @ z + g + C.T @ nu_eq
        ok = True
        for i, c in enumerate(combo):
            if c[0] == "l" and grad[i] < -tol * max(1.0, np.abs(grad).max()):
                ok = False
                break
            if c[0] == "u" and grad[i] > tol * max(1.0, np.abs(grad).max()):
                ok = False
                break
        if not ok:
            continue
        val = float(0.5 * z @ H @ z + g @ z) + const
        if val < best_val - 1e-12:
            best_val = val
            best_z = z
    if best_z is None:
        raise RuntimeError("enumeration found no feasible candidate")
    return best_z, best_val


def stack_bounds(stages, T, nx, nu, term_lb=None, term_ub=None):
    """Per-variable bounds matching the z = (x_1..x_T, u_0..u_{T-1}) layout."""
    lb = np.full(T * nx + T * nu, -np.inf)
    ub = np.full(T * nx + T * nu, np.inf)
    for k, s in enumerate(stages):
        if k >= 1:
            if s.x_lb is not None:
                lb[(k - 1) * nx:k * nx] = s.x_lb
            if s.x_ub is not None:
                ub[(k - 1) * nx:k * nx] = s.x_ub
        if s.u_lb is not None:
            lb[T * nx + k * nu:T * nx + (k + 1) * nu] = s.u_lb
        if s.u_ub is not None:
            ub[T * nx + k * nu:T * nx + (k + 1) * nu] = s.u_ub
    if term_lb is not None:
        lb[(T - 1) * nx:T * nx] = term_lb
    if term_ub is not None:
        ub[(T - 1) * nx:T * nx] = term_ub
    return lb, ub


# ----- finite differences ---------------------------------------------------

def fd_gradient(f, x, h=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, float)
    f0 = np.asarray(f(x), float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(f(x + e), float) - np.asarray(f(x - e), float)) / (2.0 * h)
    return J


# ----- random problem generators --------------------------------------------

def random_stage_data(rng, T, nx, nu, coupled=True, scale=1.0):
    """Random well-conditioned LQ stage data stacks."""
    As = rng.uniform(-1.0, 1.0, (T, nx, nx)) * scale
    Bs = rng.uniform(-1.0, 1.0, (T, nx, nu)) * scale
    cs = rng.uniform(-0.5, 0.5, (T, nx))
    Qs = np.empty((T, nx, nx))
    Rs = np.empty((T, nu, nu))
    Ss = np.zeros((T, nu, nx))
    for k in range(T):
        Mx = rng.uniform(-1.0, 1.0, (nx, nx))
        Qs[k] = Mx.T @ Mx + 0.1 * np.eye(nx)
        Mu = rng.uniform(-1.0, 1.0, (nu, nu))
        Rs[k] = Mu.T @ Mu + 0.5 * np.eye(nu)
        if coupled:
            Ss[k] = 0.1 * rng.uniform(-1.0, 1.0, (nu, nx))
    qs = rng.uniform(-1.0, 1.0, (T, nx))
    rs = rng.uniform(-1.0, 1.0, (T, nu))
    consts = rng.uniform(-0.2, 0.2, T)
    Mt = rng.uniform(-1.0, 1.0, (nx, nx))
    P_T = Mt.T @ Mt + 0.1 * np.eye(nx)
    p_T = rng.uniform(-1.0, 1.0, nx)
    c0_T = float(rng.uniform(-0.2, 0.2))
    return As, Bs, cs, Qs, Rs, Ss, qs, rs, consts, P_T, p_T, c0_T
