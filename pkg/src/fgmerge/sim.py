"""Closed-loop merging simulation: FIFO coordinator, entry zone, per-step QPs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from fgmerge.constraints import (
    BarrierSnapshot,
    LinearRow,
    clf_row,
    control_bound_rows,
    feasibility_row_merge,
    feasibility_row_rear,
    merge_cbf_row,
    rear_end_cbf_row,
    snapshot_barriers,
    speed_limit_rows,
)
from fgmerge.qp import QpProblem, QpStatus, feasible_interval_u, solve_qp
from fgmerge.reference import ReferenceTrajectory, reference_control, solve_reference
from fgmerge.vehicle import ConfigError, Lane, NeighborView, SimParams, VehicleState, integrate_step

# barrier values below -VIOLATION_TOL count as violations
VIOLATION_TOL = 1e-3

RowObserver = Callable[[int, float, list], None]


class Mode(str, Enum):
    OCBF = "Ocbf"
    FG_OCBF = "FgOcbf"


@dataclass
class ScenarioConfig:
    """Everything that determines a run.

    ``predecessor_info`` selects which predecessor control enters the
    feasibility rows: ``"current"`` (CAVs decide in FIFO order, each seeing
    the control its predecessors picked for this interval) or ``"previous"``
    (all decide on the last applied controls). ``cbf_sampling="zoh"`` builds
    the safety rows from exact one-step barrier differences, ``"continuous"``
    from Lie derivatives. ``v_entry_min`` is the lowest
    speed the entry zone may impose; an arrival that would need less waits.
    """

    params: SimParams = field(default_factory=SimParams)
    arrival_rate_main: float = 0.2
    arrival_rate_merge: float = 0.2
    v0_lo: float = 15.0
    v0_hi: float = 25.0
    horizon: float = 120.0
    seed: int = 0
    mode: Mode = Mode.FG_OCBF
    speed_limit_rows: bool = True
    integrator: str = "zoh"
    predecessor_info: str = "current"
    cbf_sampling: str = "zoh"
    v_entry_min: float = 1.0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.validate()

    def validate(self) -> None:
        p = self.params
        if self.arrival_rate_main < 0:
            raise ConfigError("arrival_rate_main", "must be >= 0")
        if self.arrival_rate_merge < 0:
            raise ConfigError("arrival_rate_merge", "must be >= 0")
        if not (p.v_min <= self.v0_lo <= self.v0_hi <= p.v_max):
            raise ConfigError("v0_lo", "entry speed range must lie inside [v_min, v_max]")
        if self.v0_lo <= 0:
            raise ConfigError("v0_lo", "must be > 0")
        if self.horizon <= 0:
            raise ConfigError("horizon", "must be > 0")
        if self.integrator not in ("zoh", "euler"):
            raise ConfigError("integrator", "must be 'zoh' or 'euler'")
        if self.predecessor_info not in ("current", "previous"):
            raise ConfigError("predecessor_info", "must be 'current' or 'previous'")
        if self.cbf_sampling not in ("zoh", "continuous"):
            raise ConfigError("cbf_sampling", "must be 'zoh' or 'continuous'")
        if self.v_entry_min <= 0:
            raise ConfigError("v_entry_min", "must be > 0")


@dataclass(slots=True)
class StepRecord:
    t: float
    vehicle_id: int
    lane: str
    fifo_index: int
    x: float
    v: float
    u_applied: float
    u_ref: float
    v_ref: float
    qp_status: str
    feasible_lo: float
    feasible_hi: float
    e: float
    b1: Optional[float] = None
    b2: Optional[float] = None
    b_eta1: Optional[float] = None
    b_eta2: Optional[float] = None
    bF_rear: Optional[float] = None
    bF_merge: Optional[float] = None

    @property
    def feasible(self) -> bool:
        return self.qp_status == QpStatus.OPTIMAL.value


@dataclass
class Arrival:
    time: float
    lane: Lane
    v0: float
    seq: int


@dataclass(slots=True)
class Car:
    state: VehicleState
    traj: ReferenceTrajectory
    arrival: Arrival
    v0_entry: float
    energy: float = 0.0
    tm: Optional[float] = None
    infeasible_steps: int = 0
    min_b1: float = math.inf
    min_b2: float = math.inf


@dataclass
class VehicleSummary:
    id: int
    lane: str
    arrival_time: float
    t0: float
    v0_sampled: float
    v0_entry: float
    tm: Optional[float]
    travel_time: Optional[float]
    energy: float
    infeasible_steps: int
    min_b1: Optional[float]
    min_b2: Optional[float]
    b1_violated: bool
    b2_violated: bool


@dataclass
class RunSummary:
    vehicles: list[VehicleSummary]
    fifo_violations: int = 0
    deferred_at_horizon: int = 0

    @property
    def completed(self) -> list[VehicleSummary]:
        return [v for v in self.vehicles if v.tm is not None]

    @property
    def mean_travel_time(self) -> Optional[float]:
        done = self.completed
        return sum(v.travel_time for v in done) / len(done) if done else None

    @property
    def mean_energy(self) -> Optional[float]:
        done = self.completed
        return sum(v.energy for v in done) / len(done) if done else None

    @property
    def total_infeasible_steps(self) -> int:
        return sum(v.infeasible_steps for v in self.vehicles)

    @property
    def min_b1(self) -> Optional[float]:
        vals = [v.min_b1 for v in self.vehicles if v.min_b1 is not None]
        return min(vals) if vals else None

    @property
    def min_b2(self) -> Optional[float]:
        vals = [v.min_b2 for v in self.vehicles if v.min_b2 is not None]
        return min(vals) if vals else None


# -- arrivals -------------------------------------------------------------------

def generate_arrivals(config: ScenarioConfig) -> list[Arrival]:
    """Poisson arrival stream for both roads over the horizon.

    Depends only on the seed, rates, speed range and horizon, so two runs that
    differ only in controller mode see the same arrivals.
    """
    main_ss, merge_ss = np.random.SeedSequence(config.seed).spawn(2)
    out = []
    for lane, rate, ss in ((Lane.MAIN, config.arrival_rate_main, main_ss),
                           (Lane.MERGING, config.arrival_rate_merge, merge_ss)):
        if rate <= 0:
            continue
        rng = np.random.default_rng(ss)
        t = 0.0
        while True:
            t += float(rng.exponential(1.0 / rate))
            if t >= config.horizon:
                break
            out.append(Arrival(t, lane, float(rng.uniform(config.v0_lo, config.v0_hi)), 0))
    out.sort(key=lambda a: (a.time, a.lane != Lane.MAIN))
    for k, a in enumerate(out):
        a.seq = k
    return out


def entry_speed_cap(lane: Lane, pred_same_lane: Optional[VehicleState],
                    pred_fifo: Optional[VehicleState], params: SimParams) -> float:
    """Largest entry speed at x = 0 meeting the initial barrier conditions.

    Rear-end: b1 >= 0 and b_eta1 >= 0 (then bF1 = b_eta1 + k1 b1 >= 0).
    Merging: b2 >= 0 and b_eta2 >= 0. Returns -inf when no speed works.
    """
    cap = math.inf
    if pred_same_lane is not None:
        z = pred_same_lane.x
        cap = min(cap, (z - params.delta) / params.phi,
                  pred_same_lane.v - params.phi * params.u_min)
    if pred_fifo is not None and pred_fifo.lane != lane:
        if pred_fifo.x - params.delta < 0.0:
            return -math.inf
        phi2 = params.phi2
        # phi2 v^2 + v - v_{i-1} <= 0
        cap = min(cap, (-1.0 + math.sqrt(1.0 + 4.0 * phi2 * pred_fifo.v)) / (2.0 * phi2))
    return cap


def spawn_arrivals(pending: list[Arrival], state: "CoordinatorState",
                   config: ScenarioConfig) -> list[Car]:
    """Admit due arrivals through the entry zone, lowering speeds as needed.

    A vehicle's id is its index in the arrival stream, so ids match across
    runs that share a seed. Arrivals that cannot be admitted even at ``max(v_min, v_entry_min)`` stay
    in ``pending`` (and so do later arrivals on the same road).
    """
    params = config.params
    blocked = set()
    admitted = []
    floor = max(params.v_min, config.v_entry_min)
    for arr in list(pending):
        if arr.time > state.clock + 1e-12:
            break
        if arr.lane in blocked:
            continue
        queue = state.queue()
        pred_fifo = queue[-1].state if queue else None
        pred_same = next((c.state for c in reversed(queue) if c.state.lane == arr.lane), None)
        cap = entry_speed_cap(arr.lane, pred_same, pred_fifo, params)
        v0 = min(arr.v0, cap)
        if v0 < floor:
            blocked.add(arr.lane)
            continue
        traj = solve_reference(v0, state.clock, params.L, params.beta, params.v_max, params.v_min)
        vs = VehicleState(arr.seq, arr.lane, 0.0, v0, 0.0, state.clock, len(queue))
        car = Car(vs, traj, arr, v0)
        state.in_cz.append(car)
        state.all_cars.append(car)
        admitted.append(car)
        pending.remove(arr)
    return admitted


# -- controller -------------------------------------------------------------------

def build_rows(vehicle: VehicleState, neighbors: NeighborView, v_ref: float,
               params: SimParams, mode: Mode, speed_limits: bool,
               sampled: bool = True) -> list[LinearRow]:
    dt = params.dt if sampled else None
    rows = [clf_row(vehicle, v_ref, params)]
    rows += control_bound_rows(params, vehicle)
    if speed_limits:
        rows += speed_limit_rows(vehicle, params)
    ip = neighbors.pred_physical
    if ip is not None:
        rows.append(rear_end_cbf_row(vehicle, ip, params, dt))
        if mode is Mode.FG_OCBF:
            rows.append(feasibility_row_rear(vehicle, ip, params))
    mp = neighbors.merge_pred
    if mp is not None:
        rows.append(merge_cbf_row(vehicle, mp, params, dt))
        if mode is Mode.FG_OCBF:
            rows.append(feasibility_row_merge(vehicle, mp, params, dt))
    return rows


def controller_step(vehicle: VehicleState, neighbors: NeighborView, traj: ReferenceTrajectory,
                    params: SimParams, mode: Mode, t: float, speed_limits: bool = False,
                    observer: Optional[RowObserver] = None, sampled: bool = True) -> tuple[float, float, StepRecord]:
    """Assemble and solve one CAV's QP for the interval starting at ``t``.

    An infeasible QP applies ``u_min`` so the run can continue; the record
    carries the verdict and the (empty) feasible interval.
    """
    u_ref, v_ref = reference_control(traj, vehicle.x, t, params.dt)
    rows = build_rows(vehicle, neighbors, v_ref, params, Mode(mode), speed_limits, sampled)
    if observer is not None:
        observer(vehicle.id, t, rows)
    sol = solve_qp(QpProblem(u_ref, params.lambda_e, rows))
    interval = feasible_interval_u(rows)
    if sol.status is QpStatus.OPTIMAL:
        u, e = sol.u, sol.e
    else:
        u, e = params.u_min, math.nan
    snap: BarrierSnapshot = snapshot_barriers(vehicle, neighbors, params)
    lo, hi = interval.lo, interval.hi
    if not interval.state_ok:
        lo, hi = math.inf, -math.inf
    rec = StepRecord(t, vehicle.id, vehicle.lane.value, vehicle.fifo_index, vehicle.x, vehicle.v,
                     u, u_ref, v_ref, sol.status.value, lo, hi, e,
                     snap.b1, snap.b2, snap.b_eta1, snap.b_eta2, snap.bF_rear, snap.bF_merge)
    return u, e, rec


# -- coordinator --------------------------------------------------------------------

@dataclass
class CoordinatorState:
    """FIFO queue S(t): the last CAV to leave the CZ (index 0) then every CAV
    still inside, in order of CZ arrival."""

    clock: float = 0.0
    in_cz: list[Car] = field(default_factory=list)
    last_departed: Optional[Car] = None
    pending: list[Arrival] = field(default_factory=list)
    all_cars: list[Car] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    fifo_violations: int = 0
    step_count: int = 0

    def queue(self) -> list[Car]:
        if self.last_departed is None:
            return list(self.in_cz)
        return [self.last_departed] + self.in_cz


def _neighbors(queue_states: list[VehicleState], k: int) -> NeighborView:
    ego = queue_states[k]
    if k == 0:
        return NeighborView()
    pred_fifo = queue_states[k - 1]
    ip = None
    for j in range(k - 1, -1, -1):
        if queue_states[j].lane == ego.lane:
            ip = queue_states[j]
            break
    same = ip is not None and ip.id == pred_fifo.id
    return NeighborView(ip, pred_fifo, same)


def _crossing_time(x: float, v: float, u: float, L: float, dt: float) -> float:
    """Time within a step at which x + v s + u s^2 / 2 reaches L."""
    if abs(u) < 1e-12:
        return (L - x) / v if v > 0 else dt
    disc = v * v + 2.0 * u * (L - x)
    if disc < 0:
        return dt
    s = (-v + math.sqrt(disc)) / u
    return min(max(s, 0.0), dt)


def advance(state: CoordinatorState, config: ScenarioConfig,
            observer: Optional[RowObserver] = None) -> CoordinatorState:
    """One synchronous interval of length dt.

    Controls are decided in FIFO order against the states at ``clock``; then
    every CAV (including the departed leader, at its held control) is
    integrated, MP crossings are processed and new arrivals are admitted.
    """
    params = config.params
    dt = params.dt
    t = state.clock
    queue = state.queue()
    offset = 1 if state.last_departed is not None else 0
    # predecessor views carry the control each CAV uses in this interval
    views = [c.state for c in queue]
    decided = {}
    for k, car in enumerate(state.in_cz):
        qk = k + offset
        car.state.fifo_index = qk
        nb = _neighbors(views, qk)
        u, e, rec = controller_step(car.state, nb, car.traj, params, config.mode, t,
                                    config.speed_limit_rows, observer,
                                    config.cbf_sampling == "zoh")
        decided[car.state.id] = u
        if config.predecessor_info == "current":
            s = car.state
            views[qk] = VehicleState(s.id, s.lane, s.x, s.v, u, s.t0, s.fifo_index, s.u_max)
        state.records.append(rec)
        if not rec.feasible:
            car.infeasible_steps += 1
        if rec.b1 is not None and rec.b1 < car.min_b1:
            car.min_b1 = rec.b1
        if rec.b2 is not None and rec.b2 < car.min_b2:
            car.min_b2 = rec.b2

    crossed = []
    for car in state.in_cz:
        u = decided[car.state.id]
        s = car.state
        new = integrate_step(s, u, dt, config.integrator)
        if new.x >= params.L:
            tau = _crossing_time(s.x, s.v, u, params.L, dt)
            car.tm = t + tau
            car.energy += 0.5 * u * u * tau
            crossed.append(car)
        else:
            car.energy += 0.5 * u * u * dt
        car.state = new
    if state.last_departed is not None:
        d = state.last_departed
        d.state = integrate_step(d.state, d.state.u, dt, config.integrator)

    crossed.sort(key=lambda c: c.tm)
    for car in crossed:
        if state.in_cz[0] is not car:
            state.fifo_violations += 1
        state.in_cz.remove(car)
        # former index 0 drops out; the crosser becomes the new index 0
        state.last_departed = car

    state.step_count += 1
    state.clock = state.step_count * dt
    spawn_arrivals(state.pending, state, config)
    for k, car in enumerate(state.queue()):
        car.state.fifo_index = k
    return state


def _summarize(state: CoordinatorState) -> RunSummary:
    out = []
    for car in state.all_cars:
        s = car.state
        min_b1 = None if car.min_b1 == math.inf else car.min_b1
        min_b2 = None if car.min_b2 == math.inf else car.min_b2
        out.append(VehicleSummary(
            s.id, s.lane.value, car.arrival.time, car.traj.t0, car.arrival.v0, car.v0_entry,
            car.tm, None if car.tm is None else car.tm - car.traj.t0, car.energy,
            car.infeasible_steps, min_b1, min_b2,
            min_b1 is not None and min_b1 < -VIOLATION_TOL,
            min_b2 is not None and min_b2 < -VIOLATION_TOL))
    return RunSummary(out, state.fifo_violations, len(state.pending))


def run(config: ScenarioConfig, observer: Optional[RowObserver] = None) -> tuple[list[StepRecord], RunSummary]:
    """Simulate ``config`` over its horizon; deterministic in the seed."""
    config.validate()
    state = CoordinatorState(pending=generate_arrivals(config))
    spawn_arrivals(state.pending, state, config)
    n_steps = int(round(config.horizon / config.params.dt))
    for _ in range(n_steps):
        advance(state, config, observer)
    return state.records, _summarize(state)
