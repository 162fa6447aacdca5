"""Unconstrained energy/time-optimal reference trajectory computed at CZ entry.

With every constraint inactive the optimal control is affine in time, so the
trajectory is the cubic

    u*(t) = a t + b
    v*(t) = a t^2 / 2 + b t + c
    x*(t) = a t^3 / 6 + b t^2 / 2 + c t + d

whose coefficients and merge time ``tm`` solve five algebraic conditions:
entry speed, entry position, terminal position ``L``, zero terminal
acceleration and the free-terminal-time (transversality) condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class ReferenceTrajectory:
    a: float
    b: float
    c: float
    d: float
    t0: float
    tm: float


def residuals(z, v0: float, t0: float, L: float, beta: float) -> np.ndarray:
    """The five optimality conditions evaluated at ``z = (a, b, c, d, tm)``."""
    a, b, c, d, tm = z
    return np.array([
        0.5 * a * t0**2 + b * t0 + c - v0,
        a * t0**3 / 6.0 + 0.5 * b * t0**2 + c * t0 + d,
        a * tm**3 / 6.0 + 0.5 * b * tm**2 + c * tm + d - L,
        a * tm + b,
        beta + 0.5 * a**2 * tm**2 + a * b * tm + a * c,
    ])


def jacobian(z, t0: float) -> np.ndarray:
    a, b, c, d, tm = z
    return np.array([
        [0.5 * t0**2, t0, 1.0, 0.0, 0.0],
        [t0**3 / 6.0, 0.5 * t0**2, t0, 1.0, 0.0],
        [tm**3 / 6.0, 0.5 * tm**2, tm, 1.0, 0.5 * a * tm**2 + b * tm + c],
        [tm, 1.0, 0.0, 0.0, a],
        [a * tm**2 + b * tm + c, a * tm, a, 0.0, a**2 * tm + a * b],
    ])


def _scales(v0, L, beta):
    return np.array([max(abs(v0), 1.0), L, L, 1.0, max(beta, 1.0)])


def scaled_residual(traj: ReferenceTrajectory, v0: float, L: float, beta: float) -> float:
    z = (traj.a, traj.b, traj.c, traj.d, traj.tm)
    return float(np.max(np.abs(residuals(z, v0, traj.t0, L, beta)) / _scales(v0, L, beta)))


def _newton(z, v0, t0, L, beta, tol, max_iter):
    scale = _scales(v0, L, beta)
    F = residuals(z, v0, t0, L, beta)
    norm = np.max(np.abs(F) / scale)
    for _ in range(max_iter):
        if norm <= tol:
            return z, norm
        try:
            step = np.linalg.solve(jacobian(z, t0), -F)
        except np.linalg.LinAlgError:
            return z, norm
        lam = 1.0
        while lam > 1e-6:
            cand = z + lam * step
            # keep the merge time strictly after entry
            if cand[4] > t0:
                F_c = residuals(cand, v0, t0, L, beta)
                norm_c = np.max(np.abs(F_c) / scale)
                if norm_c < norm or norm_c <= tol:
                    break
            lam *= 0.5
        else:
            return z, norm
        z, F, norm = cand, F_c, norm_c
    return z, norm


def solve_reference(v0: float, t0: float, L: float, beta: float,
                    v_max: float = 30.0, v_min: float = 0.0,
                    tol: float = 1e-12, max_iter: int = 50) -> ReferenceTrajectory:
    """Solve the five optimality conditions by damped Newton.

    Starts from constant-speed coefficients with ``tm = t0 + 2L/(v0+v_max)``
    and falls back to a sweep of merge-time guesses. Only the stationary point
    with ``a <= 0`` (accelerate-then-coast for beta > 0, cruise for beta = 0)
    is accepted; the other branch is a deceleration profile that is not the
    minimizer.

    Raises:
        NoConvergence: if no start reaches the tolerance on the optimal branch.
    """
    if not (v0 > 0 and beta >= 0 and L > 0):
        raise ValueError("need v0 > 0, beta >= 0, L > 0")
    starts = [t0 + 2.0 * L / (v0 + v_max)]
    starts += list(np.linspace(t0 + L / v_max, t0 + L / max(v_min, 1.0), 8))
    for tm0 in starts:
        z0 = np.array([0.0, 0.0, v0, -v0 * t0, tm0])
        z, norm = _newton(z0, v0, t0, L, beta, tol, max_iter)
        if norm <= max(tol, 1e-10) and z[4] > t0 and z[0] <= 1e-9:
            a, b, c, d, tm = (float(w) for w in z)
            return ReferenceTrajectory(a, b, c, d, t0, tm)
    raise NoConvergence(f"reference solve failed for v0={v0}, t0={t0}, L={L}, beta={beta}")


def eval_reference(traj: ReferenceTrajectory, t: float) -> tuple[float, float, float]:
    """Return ``(u*, v*, x*)`` at time ``t``; held at the ``tm`` values afterwards."""
    if t > traj.tm:
        t = traj.tm
    a, b, c, d = traj.a, traj.b, traj.c, traj.d
    u = a * t + b
    v = 0.5 * a * t * t + b * t + c
    x = a * t * t * t / 6.0 + 0.5 * b * t * t + c * t + d
    return u, v, x


X_FLOOR = 0.1
RATIO_BOUNDS = (0.5, 2.0)


def reference_control(traj: ReferenceTrajectory, x_actual: float, t: float,
                      hold: float = 0.0) -> tuple[float, float]:
    """Position-feedback reference ``(u_ref, v_ref)``.

    Both reference values are the optimal ones scaled by ``x*(t)/x``, which
    speeds up a CAV that lags its planned position and slows one that leads.
    The ratio is taken as 1 below ``X_FLOOR`` (it is 0/0 at entry) and clipped
    to ``RATIO_BOUNDS``.

    With ``hold > 0`` the optimal control is averaged over ``[t, t + hold]``,
    so a control held constant over the step reproduces v* exactly there.
    """
    u_star, v_star, x_star = eval_reference(traj, t)
    if hold > 0.0:
        u_star = (eval_reference(traj, t + hold)[1] - v_star) / hold
    if x_actual < X_FLOOR:
        ratio = 1.0
    else:
        ratio = min(max(x_star / x_actual, RATIO_BOUNDS[0]), RATIO_BOUNDS[1])
    return ratio * u_star, ratio * v_star
