"""Vehicle state, scenario parameters and double-integrator integration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for parameter or configuration values that violate an invariant."""

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


class Lane(str, Enum):
    MAIN = "main"
    MERGING = "merging"


@dataclass(frozen=True)
class SimParams:
    """Physical and controller parameters shared by every CAV in a scenario.

    Distances in meters, speeds in m/s, accelerations in m/s^2, times in s.
    ``u_max`` is the default per-vehicle maximum acceleration; a vehicle may
    carry its own override.
    """

    L: float = 400.0
    phi: float = 1.8
    delta: float = 10.0
    u_min: float = -2.0
    u_max: float = 3.0
    v_min: float = 0.0
    v_max: float = 30.0
    dt: float = 0.05
    beta: float = 1.0
    k1: float = 1.0
    k2: float = 1.0
    k_v: float = 1.0
    eps_clf: float = 10.0
    lambda_e: float = 1.0

    def __post_init__(self):
        self.validate()

    @property
    def phi2(self) -> float:
        # merging barrier slope: phi / x(t_m) with x(t_m) = L
        return self.phi / self.L

    def validate(self) -> None:
        checks = [
            ("L", self.L > 0, "must be > 0"),
            ("phi", self.phi > 0, "must be > 0"),
            ("delta", self.delta >= 0, "must be >= 0"),
            ("dt", self.dt > 0, "must be > 0"),
            ("u_min", self.u_min < 0, "must be < 0"),
            ("u_max", self.u_max > 0, "must be > 0"),
            ("v_min", self.v_min >= 0, "must be >= 0"),
            ("v_max", self.v_max > self.v_min, "must exceed v_min"),
            ("beta", self.beta >= 0, "must be >= 0"),
            ("k1", self.k1 >= 0, "must be >= 0"),
            ("k2", self.k2 >= 0, "must be >= 0"),
            ("k_v", self.k_v > 0, "must be > 0"),
            ("eps_clf", self.eps_clf > 0, "must be > 0"),
            ("lambda_e", self.lambda_e > 0, "must be > 0"),
        ]
        for key, ok, reason in checks:
            if not ok:
                raise ConfigError(key, f"{reason} (got {getattr(self, key)!r})")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(slots=True)
class VehicleState:
    id: int
    lane: Lane
    x: float
    v: float
    u: float = 0.0
    t0: float = 0.0
    fifo_index: int = 0
    u_max: Optional[float] = None

    def u_upper(self, params: SimParams) -> float:
        return params.u_max if self.u_max is None else self.u_max


@dataclass
class NeighborView:
    """Predecessors relevant to one CAV.

    ``pred_physical`` is i_p, the nearest CAV ahead in the same lane;
    ``pred_fifo`` is CAV i-1 in the FIFO queue. When they coincide only the
    rear-end constraint applies.
    """

    pred_physical: Optional[VehicleState] = None
    pred_fifo: Optional[VehicleState] = None
    pred_fifo_same_lane: bool = field(default=False)

    def __post_init__(self):
        if self.pred_fifo_same_lane:
            assert self.pred_fifo is not None and self.pred_physical is not None
            assert self.pred_fifo.id == self.pred_physical.id

    @property
    def merge_pred(self) -> Optional[VehicleState]:
        """CAV i-1 when it is on the other road, else None."""
        if self.pred_fifo is None or self.pred_fifo_same_lane:
            return None
        return self.pred_fifo


def integrate_step(state: VehicleState, u: float, dt: float, method: str = "zoh") -> VehicleState:
    """Advance one CAV by ``dt`` under constant acceleration ``u``.

    ``method="zoh"`` integrates the double integrator exactly for a
    piecewise-constant input; if the speed would cross zero the vehicle stops
    at the crossing instant and stays stopped. ``method="euler"`` is the
    forward-Euler update ``x + v*dt``, ``v + u*dt`` with the speed floored at 0.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, v = state.x, state.v
    v_next = v + u * dt
    if method == "zoh":
        if v_next < 0.0:
            # stop at tau = -v/u, then hold
            tau = -v / u
            x_next = x + v * tau + 0.5 * u * tau * tau
            logger.debug("vehicle %s: speed clamped at 0", state.id)
            v_next = 0.0
        else:
            x_next = x + v * dt + 0.5 * u * dt * dt
    elif method == "euler":
        x_next = x + v * dt
        if v_next < 0.0:
            logger.debug("vehicle %s: speed clamped at 0", state.id)
            v_next = 0.0
    else:
        raise ValueError(f"unknown integration method {method!r}")
    return VehicleState(state.id, state.lane, x_next, v_next, u, state.t0,
                        state.fifo_index, state.u_max)


def gap(pred: VehicleState, ego: VehicleState) -> float:
    """Distance x_pred - x_ego, both measured from their lane origins."""
    return pred.x - ego.x
