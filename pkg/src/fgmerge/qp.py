"""Exact solver for the per-step QP in (u, e).

    min  lambda_e * e^2 + 1/2 (u - u_ref)^2
    s.t. hard rows in u only, plus at most one soft row involving e.

For fixed u the best e is the projection of 0 onto the soft row's half-line,
so the problem collapses to minimizing a convex piecewise quadratic in u over
the interval cut out by the hard rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

from fgmerge.constraints import GE, LinearRow, Tag

# rows may be violated by at most this much at a reported optimum
FEAS_TOL = 1e-9


class InternalError(RuntimeError):
    pass


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


@dataclass
class QpProblem:
    u_ref: float
    lambda_e: float
    rows: list[LinearRow]

    def __post_init__(self):
        if not self.lambda_e > 0:
            raise ValueError("lambda_e must be positive")


@dataclass
class QpSolution:
    status: QpStatus
    u: float = math.nan
    e: float = math.nan
    active_set: list[Tag] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status is QpStatus.OPTIMAL


class Interval(NamedTuple):
    lo: float
    hi: float
    state_ok: bool = True

    @property
    def empty(self) -> bool:
        return (not self.state_ok) or self.lo > self.hi + FEAS_TOL


def feasible_interval_u(rows: Sequence[LinearRow]) -> Interval:
    """Intersect the half-lines in u given by every row without an e term."""
    lo, hi, ok = -math.inf, math.inf, True
    for r in rows:
        if r.coef_e != 0.0:
            continue
        c = r.coef_u
        if c == 0.0:
            # pure state condition: 0 (sense) rhs
            if (r.sense == GE and r.rhs > FEAS_TOL) or (r.sense != GE and r.rhs < -FEAS_TOL):
                ok = False
            continue
        bound = r.rhs / c
        lower = (c > 0.0) == (r.sense == GE)
        if lower:
            if bound > lo:
                lo = bound
        elif bound < hi:
            hi = bound
    return Interval(lo, hi, ok)


def _soft_row(rows):
    soft = [r for r in rows if r.coef_e != 0.0]
    if len(soft) > 1:
        raise InternalError("at most one row may involve e")
    return soft[0] if soft else None


def solve_qp(p: QpProblem) -> QpSolution:
    interval = feasible_interval_u(p.rows)
    if interval.empty:
        return QpSolution(QpStatus.INFEASIBLE)
    lo, hi = interval.lo, interval.hi
    soft = _soft_row(p.rows)
    lam, u_ref = p.lambda_e, p.u_ref

    if soft is None:
        u = u_ref
    else:
        # row as e >= g(u) (sign=+1) or e <= g(u) (sign=-1), g(u) = slope*u + icpt
        ce = soft.coef_e
        slope, icpt = -soft.coef_u / ce, soft.rhs / ce
        sign = 1.0 if (ce > 0.0) == (soft.sense == GE) else -1.0
        # cost of e is lam * max(0, pu + q)^2 with p, q below
        pp, qq = sign * slope, sign * icpt
        if pp * u_ref + qq <= 0.0:
            u = u_ref
        else:
            u = (u_ref - 2.0 * lam * pp * qq) / (1.0 + 2.0 * lam * pp * pp)
            if pp * u + qq < 0.0:
                u = -qq / pp
    if u < lo:
        u = lo
    elif u > hi:
        u = hi
    if hi < lo:
        # within FEAS_TOL of empty; lo is as good as hi
        u = lo

    if soft is None:
        e = 0.0
    else:
        g = slope * u + icpt
        e = g if sign * g > 0.0 else 0.0
    if not (math.isfinite(u) and math.isfinite(e)):
        raise InternalError(f"non-finite QP solution u={u}, e={e}")

    active = []
    for r in p.rows:
        scale = max(1.0, abs(r.rhs))
        if r.coef_e != 0.0:
            if e != 0.0:
                active.append(r.tag)
        elif r.coef_u != 0.0 and abs(r.slack(u, e)) <= 1e-9 * scale:
            active.append(r.tag)
    return QpSolution(QpStatus.OPTIMAL, u, e, active)


def objective(p: QpProblem, u: float, e: float) -> float:
    return p.lambda_e * e * e + 0.5 * (u - p.u_ref) ** 2
