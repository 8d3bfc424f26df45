"""12-state quadcopter model: rigid-body ODE, analytic Jacobians, references.

State layout: x = (p, v, Psi, omega) with world-frame position/velocity,
roll-pitch-yaw angles (ZYX convention) and body angular rates.  Controls are
the four rotor thrusts in newtons.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81
HOVER_THRUST = 0.06615          # per-rotor thrust balancing gravity, N


class ModelValidityError(ValueError):
    """State outside the model's validity region (e.g. pitch at gimbal lock)."""


@dataclass(frozen=True)
class QuadParams:
    """Physical parameters.  Defaults are nano-quadcopter values with the mass
    pinned by the hover thrust so that four rotors at ``u_hover`` exactly
    balance gravity."""

    m: float = 4.0 * HOVER_THRUST / GRAVITY
    J: tuple[float, float, float] = (1.4e-5, 1.4e-5, 2.17e-5)
    arm: float = 0.0397
    g_acc: float = GRAVITY
    torque_coeff: float = 0.005964552
    u_hover: float = HOVER_THRUST
    layout: str = "x"            # rotor geometry: "x" or "plus"

    def __post_init__(self):
        if self.m <= 0 or self.arm <= 0 or self.torque_coeff <= 0:
            raise ValueError("mass, arm length and torque coefficient must be positive")
        if any(j <= 0 for j in self.J):
            raise ValueError("inertia diagonal must be positive")
        if self.layout not in ("x", "plus"):
            raise ValueError(f"unknown rotor layout {self.layout!r}")
        rel = abs(4.0 * self.u_hover - self.m * self.g_acc) / (self.m * self.g_acc)
        if rel > 1e-6:
            raise ValueError(
                f"hover thrust inconsistent with mass: 4*u_hover={4*self.u_hover:.6g} "
                f"vs m*g={self.m*self.g_acc:.6g}")

    def to_dict(self) -> dict:
        return {"m": self.m, "J": list(self.J), "arm": self.arm, "g_acc": self.g_acc,
                "torque_coeff": self.torque_coeff, "u_hover": self.u_hover,
                "layout": self.layout}

    @classmethod
    def from_dict(cls, d: dict) -> "QuadParams":
        base = cls()
        return cls(
            m=float(d.get("m", base.m)),
            J=tuple(d.get("J", base.J)),
            arm=float(d.get("arm", base.arm)),
            g_acc=float(d.get("g_acc", base.g_acc)),
            torque_coeff=float(d.get("torque_coeff", base.torque_coeff)),
            u_hover=float(d.get("u_hover", base.u_hover)),
            layout=d.get("layout", base.layout),
        )


@dataclass(frozen=True)
class QuadState:
    """Structured view of the 12-vector state."""

    p: np.ndarray
    v: np.ndarray
    psi: np.ndarray      # (roll, pitch, yaw)
    omega: np.ndarray

    def __post_init__(self):
        for name in ("p", "v", "psi", "omega"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        if abs(self.psi[0]) >= math.pi / 2 or abs(self.psi[1]) >= math.pi / 2:
            raise ModelValidityError("roll/pitch outside (-pi/2, pi/2)")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.psi, self.omega])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "QuadState":
        x = np.asarray(x, dtype=float)
        if x.shape != (12,):
            raise ValueError(f"state must be a 12-vector, got {x.shape}")
        return cls(x[0:3], x[3:6], x[6:9], x[9:12])


def _moment_matrix(params: QuadParams) -> np.ndarray:
    """3x4 map from rotor thrusts to body torques for the configured layout."""
    a, c = params.arm, params.torque_coeff
    if params.layout == "x":
        L = a / math.sqrt(2.0)
        return np.array([
            [-L, -L, L, L],
            [-L, L, L, -L],
            [-c, c, -c, c],
        ])
    return np.array([
        [0.0, a, 0.0, -a],
        [-a, 0.0, a, 0.0],
        [-c, c, -c, c],
    ])


class QuadcopterModel:
    """Continuous-time quadcopter dynamics with analytic Jacobians.

    ``rhs`` and ``jac`` broadcast over a leading batch axis, which the
    linearization pipeline uses to process all shooting nodes at once.
    """

    nx = 12
    nu = 4

    def __init__(self, params: QuadParams | None = None):
        self.params = params or QuadParams()
        self._Mmat = _moment_matrix(self.params)
        self._Jdiag = np.array(self.params.J)
        self._Jinv = 1.0 / self._Jdiag
        self._JinvM = self._Mmat * self._Jinv[:, None]

    def hover_state(self, p=(0.0, 0.0, 0.0)) -> np.ndarray:
        x = np.zeros(12)
        x[0:3] = p
        return x

    def hover_control(self) -> np.ndarray:
        return np.full(4, self.params.m * self.params.g_acc / 4.0)

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        phi, th, psi = x[..., 6], x[..., 7], x[..., 8]
        cth = np.cos(th)
        if np.any(np.abs(cth) < 1e-9):
            raise ModelValidityError("pitch at gimbal lock")
        sph, cph = np.sin(phi), np.cos(phi)
        sth = np.sin(th)
        sps, cps = np.sin(psi), np.cos(psi)
        tth = sth / cth

        total = np.sum(u, axis=-1)
        m = self.params.m
        # world-frame direction of the collective thrust: third column of R_bw
        ez_b = np.stack([cps * sth * cph + sps * sph,
                         sps * sth * cph - cps * sph,
                         cth * cph], axis=-1)
        acc = ez_b * (total / m)[..., None]
        acc = acc - np.array([0.0, 0.0, self.params.g_acc])

        w = x[..., 9:12]
        w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
        # Euler-rate map T(phi, theta) @ omega for the ZYX convention
        dpsi = np.stack([w1 + sph * tth * w2 + cph * tth * w3,
                         cph * w2 - sph * w3,
                         (sph * w2 + cph * w3) / cth], axis=-1)

        Jw = w * self._Jdiag
        gyro = np.cross(w, Jw)
        torque = u @ self._Mmat.T
        domega = (torque - gyro) * self._Jinv

        return np.concatenate([x[..., 3:6], acc, dpsi, domega], axis=-1)

    def jac(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Analytic Jacobians of ``rhs`` w.r.t. state and control."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        batch = x.shape[:-1]
        Jx = np.zeros(batch + (12, 12))
        Ju = np.zeros(batch + (12, 4))

        phi, th, psi = x[..., 6], x[..., 7], x[..., 8]
        sph, cph = np.sin(phi), np.cos(phi)
        sth, cth = np.sin(th), np.cos(th)
        if np.any(np.abs(cth) < 1e-9):
            raise ModelValidityError("pitch at gimbal lock")
        sps, cps = np.sin(psi), np.cos(psi)
        tth = sth / cth
        sec2 = 1.0 / cth ** 2

        # dp' / dv
        Jx[..., 0, 3] = Jx[..., 1, 4] = Jx[..., 2, 5] = 1.0

        m = self.params.m
        total = np.sum(u, axis=-1)
        s = total / m
        # dv' / dPsi through the thrust direction column
        Jx[..., 3, 6] = s * (-cps * sth * sph + sps * cph)
        Jx[..., 4, 6] = s * (-sps * sth * sph - cps * cph)
        Jx[..., 5, 6] = s * (-cth * sph)
        Jx[..., 3, 7] = s * (cps * cth * cph)
        Jx[..., 4, 7] = s * (sps * cth * cph)
        Jx[..., 5, 7] = s * (-sth * cph)
        Jx[..., 3, 8] = s * (-sps * sth * cph + cps * sph)
        Jx[..., 4, 8] = s * (cps * sth * cph + sps * sph)
        # dv' / du: every rotor pushes along the same body axis
        ez_b = np.stack([cps * sth * cph + sps * sph,
                         sps * sth * cph - cps * sph,
                         cth * cph], axis=-1) / m
        Ju[..., 3:6, :] = ez_b[..., :, None]

        w = x[..., 9:12]
        w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
        # dPsi' / d(phi, theta)
        Jx[..., 6, 6] = cph * tth * w2 - sph * tth * w3
        Jx[..., 7, 6] = -sph * w2 - cph * w3
        Jx[..., 8, 6] = (cph * w2 - sph * w3) / cth
        Jx[..., 6, 7] = sec2 * (sph * w2 + cph * w3)
        Jx[..., 8, 7] = (sph * w2 + cph * w3) * sth * sec2
        # dPsi' / domega = T
        Jx[..., 6, 9] = 1.0
        Jx[..., 6, 10] = sph * tth
        Jx[..., 6, 11] = cph * tth
        Jx[..., 7, 10] = cph
        Jx[..., 7, 11] = -sph
        Jx[..., 8, 10] = sph / cth
        Jx[..., 8, 11] = cph / cth

        # domega' / domega = Jinv (skew(J w) - skew(w) J)
        J1, J2, J3 = self._Jdiag
        Jx[..., 9, 10] = ((J2 - J3) * w3) / J1
        Jx[..., 9, 11] = ((J2 - J3) * w2) / J1
        Jx[..., 10, 9] = ((J3 - J1) * w3) / J2
        Jx[..., 10, 11] = ((J3 - J1) * w1) / J2
        Jx[..., 11, 9] = ((J1 - J2) * w2) / J3
        Jx[..., 11, 10] = ((J1 - J2) * w1) / J3

        Ju[..., 9:12, :] = self._JinvM
        return Jx, Ju

    def euler_substeps(self, x: np.ndarray, u: np.ndarray, period: float, n: int) -> np.ndarray:
        """Plant-side integration: n explicit-Euler substeps with u constant.

        Scalar fast path of ``rhs``; equivalence with the vector path is
        covered by tests.
        """
        h = period / n
        p1, p2, p3, v1, v2, v3, phi, th, psi, w1, w2, w3 = (float(c) for c in x)
        u1, u2, u3, u4 = (float(c) for c in u)
        total = u1 + u2 + u3 + u4
        m, g = self.params.m, self.params.g_acc
        J1, J2, J3 = self._Jdiag
        Mm = self._Mmat
        t1 = Mm[0, 0] * u1 + Mm[0, 1] * u2 + Mm[0, 2] * u3 + Mm[0, 3] * u4
        t2 = Mm[1, 0] * u1 + Mm[1, 1] * u2 + Mm[1, 2] * u3 + Mm[1, 3] * u4
        t3 = Mm[2, 0] * u1 + Mm[2, 1] * u2 + Mm[2, 2] * u3 + Mm[2, 3] * u4
        for _ in range(n):
            sph, cph = math.sin(phi), math.cos(phi)
            sth, cth = math.sin(th), math.cos(th)
            if abs(cth) < 1e-9:
                raise ModelValidityError("pitch at gimbal lock")
            sps, cps = math.sin(psi), math.cos(psi)
            tth = sth / cth
            a = total / m
            a1 = a * (cps * sth * cph + sps * sph)
            a2 = a * (sps * sth * cph - cps * sph)
            a3 = a * (cth * cph) - g
            dphi = w1 + sph * tth * w2 + cph * tth * w3
            dth = cph * w2 - sph * w3
            dpsi = (sph * w2 + cph * w3) / cth
            dw1 = (t1 - (J3 - J2) * w2 * w3) / J1
            dw2 = (t2 - (J1 - J3) * w3 * w1) / J2
            dw3 = (t3 - (J2 - J1) * w1 * w2) / J3
            p1 += h * v1; p2 += h * v2; p3 += h * v3
            v1 += h * a1; v2 += h * a2; v3 += h * a3
            phi += h * dphi; th += h * dth; psi += h * dpsi
            w1 += h * dw1; w2 += h * dw2; w3 += h * dw3
        out = np.array([p1, p2, p3, v1, v2, v3, phi, th, psi, w1, w2, w3])
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite plant state")
        return out


def lemniscate_reference(t: float | np.ndarray, alpha: float, period: float = 4.5,
                         u_hover: float = HOVER_THRUST) -> tuple[np.ndarray, np.ndarray]:
    """Figure-eight position/velocity reference; orientation and rates zero.

    Accepts scalar or vector times; returns 12-vector state reference(s) and
    the constant hover control reference.
    """
    t = np.asarray(t, float)
    rho = 2.0 * math.pi / period
    s, c = np.sin(rho * t), np.cos(rho * t)
    bend = 1.0 + alpha * s * c
    # The y/z positions mirror each other around the 1 m flight altitude, so
    # p_y + p_z = 1 identically, and the velocity rows are the exact time
    # derivatives of the position rows.
    state = np.stack([
        alpha * s,
        0.5 - 0.5 * bend,
        0.5 + 0.5 * bend,
        alpha * rho * c,
        -0.5 * alpha * rho * (c ** 2 - s ** 2),
        0.5 * alpha * rho * (c ** 2 - s ** 2),
    ] + [np.zeros_like(t)] * 6, axis=-1)
    control = np.full(t.shape + (4,), u_hover)
    return state, control
