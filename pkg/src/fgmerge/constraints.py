"""Affine constraint rows in the decision variables (u, e).

Every safety constraint here is a control barrier function row
``Lf b + Lg b * u + k * b >= 0`` for the double integrator, with a linear
class-K function. Rows are stored as ``coef_u * u + coef_e * e (sense) rhs``.

Barriers (i_p: same-lane predecessor, i-1: FIFO predecessor on the other road):

    b1    = z_{i,ip} - phi v_i - delta
    b2    = z_{i,i-1} - phi2 x_i v_i - delta,            phi2 = phi / L
    bF1   = v_ip - v_i + k1 b1 - phi u_min               (= b_eta1 + k1 b1)
    bF2   = v_{i-1} - v_i - phi2 v_i^2 + k2 b2 - phi2 x_i u_min
    b_eta1 = v_ip - v_i - phi u_min
    b_eta2 = v_{i-1} - v_i - phi2 v_i^2 - phi2 x_i u_min

bF1/bF2 keep the corresponding CBF row compatible with ``u >= u_min``. Their
own CBF rows (with gain equal to k1/k2) split into the candidate row eta and
k times the safety CBF row, so enforcing eta >= 0 next to the CBF row is
enough; eta >= 0 is in turn the CBF row of b_eta.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

from fgmerge.vehicle import NeighborView, SimParams, VehicleState, gap


class Tag(str, Enum):
    REAR_END_CBF = "RearEndCbf"
    MERGE_CBF = "MergeCbf"
    CLF = "Clf"
    CONTROL_LOWER = "ControlLower"
    CONTROL_UPPER = "ControlUpper"
    SPEED_MAX_CBF = "SpeedMaxCbf"
    SPEED_MIN_CBF = "SpeedMinCbf"
    FEAS_REAR = "FeasRear"
    FEAS_MERGE = "FeasMerge"


SAFETY_TAGS = frozenset({Tag.REAR_END_CBF, Tag.MERGE_CBF, Tag.FEAS_REAR, Tag.FEAS_MERGE})

GE = ">="
LE = "<="


class LinearRow(NamedTuple):
    coef_u: float
    coef_e: float
    rhs: float
    sense: str
    tag: Tag

    def lhs(self, u: float, e: float = 0.0) -> float:
        return self.coef_u * u + self.coef_e * e

    def slack(self, u: float, e: float = 0.0) -> float:
        """Signed margin; nonnegative iff the row holds."""
        d = self.lhs(u, e) - self.rhs
        return d if self.sense == GE else -d

    def holds(self, u: float, e: float = 0.0, tol: float = 0.0) -> bool:
        return self.slack(u, e) >= -tol


@dataclass
class BarrierSnapshot:
    """Barrier values for logging; ``None`` marks a non-applicable barrier."""

    b1: Optional[float] = None
    b2: Optional[float] = None
    b_eta1: Optional[float] = None
    b_eta2: Optional[float] = None
    bF_rear: Optional[float] = None
    bF_merge: Optional[float] = None


# -- rear-end (same lane) ---------------------------------------------------

def rear_end_barrier(ego: VehicleState, pred: VehicleState, params: SimParams) -> float:
    return gap(pred, ego) - params.phi * ego.v - params.delta


def rear_end_cbf_row(ego: VehicleState, pred: VehicleState, params: SimParams,
                     dt: Optional[float] = None) -> LinearRow:
    """v_ip - v_i - phi u + k1 b1 >= 0, an upper bound on u.

    With ``dt`` the Lie-derivative part is replaced by the exact one-step
    difference (b1(t+dt) - b1(t)) / dt under constant controls, which adds
    dt/2 (u_ip - u).
    """
    b1 = rear_end_barrier(ego, pred, params)
    const = pred.v - ego.v + params.k1 * b1
    coef = -params.phi
    if dt is not None:
        const += 0.5 * dt * pred.u
        coef -= 0.5 * dt
    return LinearRow(coef, 0.0, -const, GE, Tag.REAR_END_CBF)


def rear_eta_barrier(ego: VehicleState, pred: VehicleState, params: SimParams) -> float:
    return pred.v - ego.v - params.phi * params.u_min


def rear_feasibility_barrier(ego: VehicleState, pred: VehicleState, params: SimParams) -> float:
    return (pred.v - ego.v + params.k1 * rear_end_barrier(ego, pred, params)
            - params.phi * params.u_min)


def feasibility_row_rear(ego: VehicleState, pred: VehicleState, params: SimParams) -> LinearRow:
    """eta1 = u_ip - u + k1 b_eta1 >= 0, using the predecessor's known control."""
    b_eta1 = rear_eta_barrier(ego, pred, params)
    return LinearRow(-1.0, 0.0, -(pred.u + params.k1 * b_eta1), GE, Tag.FEAS_REAR)


def feasibility_cbf_row_rear(ego: VehicleState, pred: VehicleState, params: SimParams,
                             k_f: float) -> LinearRow:
    """Full CBF row of bF1 with gain ``k_f``: d/dt bF1 + k_f bF1 >= 0."""
    k1, phi = params.k1, params.phi
    b1 = rear_end_barrier(ego, pred, params)
    const = (pred.u + k1 * (pred.v - ego.v) + k_f * (pred.v - ego.v)
             + k_f * k1 * b1 - k_f * phi * params.u_min)
    return LinearRow(-(1.0 + k1 * phi), 0.0, -const, GE, Tag.FEAS_REAR)


# -- safe merging (other road) -----------------------------------------------

def merge_barrier(ego: VehicleState, pred_fifo: VehicleState, params: SimParams) -> float:
    return gap(pred_fifo, ego) - params.phi2 * ego.x * ego.v - params.delta


def _chord(params: SimParams, ego: VehicleState) -> tuple[float, float]:
    # u^2 <= slope*u + icpt on [u_min, u_max], tight at both ends
    lo, hi = params.u_min, ego.u_upper(params)
    return lo + hi, -lo * hi


def merge_cbf_row(ego: VehicleState, pred_fifo: VehicleState, params: SimParams,
                  dt: Optional[float] = None) -> LinearRow:
    """v_{i-1} - v_i - phi2 v_i^2 - phi2 x_i u + k2 b2 >= 0.

    With ``dt`` the exact one-step difference of b2 is used instead; its u^2
    term is replaced by the chord over the control bounds, which only
    tightens the row inside the bounds and is exact at u_min.
    """
    phi2 = params.phi2
    b2 = merge_barrier(ego, pred_fifo, params)
    v = ego.v
    const = pred_fifo.v - v - phi2 * v * v + params.k2 * b2
    coef = -phi2 * ego.x
    if dt is not None:
        slope, icpt = _chord(params, ego)
        const += 0.5 * dt * pred_fifo.u - 0.5 * phi2 * dt * dt * icpt
        coef -= 0.5 * dt + 1.5 * phi2 * v * dt + 0.5 * phi2 * dt * dt * slope
    return LinearRow(coef, 0.0, -const, GE, Tag.MERGE_CBF)


def merge_eta_barrier(ego: VehicleState, pred_fifo: VehicleState, params: SimParams) -> float:
    phi2 = params.phi2
    return pred_fifo.v - ego.v - phi2 * ego.v * ego.v - phi2 * ego.x * params.u_min


def merge_feasibility_barrier(ego: VehicleState, pred_fifo: VehicleState, params: SimParams) -> float:
    phi2 = params.phi2
    return (pred_fifo.v - ego.v - phi2 * ego.v * ego.v
            + params.k2 * merge_barrier(ego, pred_fifo, params)
            - phi2 * ego.x * params.u_min)


def feasibility_row_merge(ego: VehicleState, pred_fifo: VehicleState, params: SimParams,
                          dt: Optional[float] = None) -> LinearRow:
    """eta2 = u_{i-1} - u - 2 phi2 v_i u - phi2 v_i u_min + k2 b_eta2 >= 0.

    ``dt`` switches to the one-step difference of b_eta2, with the same chord
    treatment of u^2 as in :func:`merge_cbf_row`.
    """
    phi2, u_min = params.phi2, params.u_min
    b_eta2 = merge_eta_barrier(ego, pred_fifo, params)
    v = ego.v
    const = pred_fifo.u - phi2 * v * u_min + params.k2 * b_eta2
    coef = -(1.0 + 2.0 * phi2 * v)
    if dt is not None:
        slope, icpt = _chord(params, ego)
        const -= phi2 * dt * icpt
        coef -= phi2 * dt * slope + 0.5 * phi2 * u_min * dt
    return LinearRow(coef, 0.0, -const, GE, Tag.FEAS_MERGE)


def feasibility_cbf_row_merge(ego: VehicleState, pred_fifo: VehicleState, params: SimParams,
                              k_f: float) -> LinearRow:
    """Full CBF row of bF2 with gain ``k_f``: d/dt bF2 + k_f bF2 >= 0."""
    k2, phi2, u_min = params.k2, params.phi2, params.u_min
    v, x = ego.v, ego.x
    lf2 = pred_fifo.v - v - phi2 * v * v
    b2 = merge_barrier(ego, pred_fifo, params)
    coef_u = -1.0 - 2.0 * phi2 * v - k2 * phi2 * x
    const = (pred_fifo.u + k2 * lf2 - phi2 * v * u_min
             + k_f * (lf2 + k2 * b2 - phi2 * x * u_min))
    return LinearRow(coef_u, 0.0, -const, GE, Tag.FEAS_MERGE)


# -- tracking and limits -------------------------------------------------------

def clf_row(ego: VehicleState, v_ref: float, params: SimParams) -> LinearRow:
    """2 (v - v_ref) u + eps (v - v_ref)^2 <= e, for V = (v - v_ref)^2."""
    err = ego.v - v_ref
    return LinearRow(2.0 * err, -1.0, -params.eps_clf * err * err, LE, Tag.CLF)


def control_bound_rows(params: SimParams, vehicle: VehicleState) -> list[LinearRow]:
    return [
        LinearRow(1.0, 0.0, params.u_min, GE, Tag.CONTROL_LOWER),
        LinearRow(1.0, 0.0, vehicle.u_upper(params), LE, Tag.CONTROL_UPPER),
    ]


def speed_limit_rows(ego: VehicleState, params: SimParams) -> list[LinearRow]:
    """CBF rows for v <= v_max and v >= v_min with gain k_v."""
    return [
        LinearRow(1.0, 0.0, params.k_v * (params.v_max - ego.v), LE, Tag.SPEED_MAX_CBF),
        LinearRow(1.0, 0.0, -params.k_v * (ego.v - params.v_min), GE, Tag.SPEED_MIN_CBF),
    ]


def snapshot_barriers(ego: VehicleState, neighbors: NeighborView, params: SimParams) -> BarrierSnapshot:
    snap = BarrierSnapshot()
    ip = neighbors.pred_physical
    if ip is not None:
        snap.b1 = rear_end_barrier(ego, ip, params)
        snap.b_eta1 = rear_eta_barrier(ego, ip, params)
        snap.bF_rear = snap.b_eta1 + params.k1 * snap.b1
    mp = neighbors.merge_pred
    if mp is not None:
        snap.b2 = merge_barrier(ego, mp, params)
        snap.b_eta2 = merge_eta_barrier(ego, mp, params)
        snap.bF_merge = snap.b_eta2 + params.k2 * snap.b2
    return snap


def upper_bound_only(row: LinearRow) -> bool:
    """True when the row can only cap u from above (the conflict-free direction)."""
    if row.sense == GE:
        return row.coef_u <= 0.0
    return row.coef_u >= 0.0
