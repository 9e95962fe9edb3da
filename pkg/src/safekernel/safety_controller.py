"""Minimally invasive safety filtering.

The filter passes the nominal control through untouched until the composite
value (minimum over detected obstacles, each scored in its own frame through
the canonical value function) reaches the activation level alpha.  It then
latches on and steers with the full-turn avoidance law against the binding
obstacle until the value clears alpha plus a hysteresis band, so the
override does not chatter along the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    Costate,
    DubinsParams,
    State,
    optimal_avoid_control,
    rk4_step,
)
from .reachability import (
    KeepOutDisk,
    ValueFunction,
    cell_value,
    gradient_many,
    interpolate_many,
    value_tolerance,
)

CONTROL_SLACK = 1e-9


@dataclass
class SafetyPolicy:
    vf: ValueFunction
    alpha: float
    hysteresis: float | None = None
    engaged: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.hysteresis is None:
            # wide enough to cross grid noise, narrow enough to release
            # promptly once the pass is over
            self.hysteresis = 0.1 * abs(self.alpha) + cell_value(self.vf.grid)
        if self.hysteresis < 0:
            raise ValueError("hysteresis must be >= 0")


Sensed = Sequence[tuple[KeepOutDisk, bool]]


def composite_value(vf: ValueFunction, state: State, obstacles: Sensed
                    ) -> tuple[float, int]:
    """Min over detected obstacles of the canonical value in each frame.

    Returns (value, index of the binding obstacle); (+inf, -1) with nothing
    detected.  Ties go to the earliest obstacle in the list.
    """
    xs = []
    ys = []
    idx = []
    for i, (disk, detected) in enumerate(obstacles):
        if detected:
            xs.append(state.x - disk.cx)
            ys.append(state.y - disk.cy)
            idx.append(i)
    if not idx:
        return math.inf, -1
    vals = interpolate_many(vf, xs, ys, np.full(len(xs), state.theta))
    k = int(np.argmin(vals))
    return float(vals[k]), idx[k]


def filter_control(policy: SafetyPolicy, state: State, nominal_u: float,
                   obstacles: Sensed, params: DubinsParams
                   ) -> tuple[float, bool]:
    """Pass the nominal through, or override with the avoidance turn.

    Engages when the composite value reaches alpha (inclusive); releases
    once it clears alpha + hysteresis.  Whenever the override is inactive
    the returned control is exactly the nominal.
    """
    if abs(nominal_u) > params.omega_max + CONTROL_SLACK:
        raise ValueError(
            f"|nominal_u|={abs(nominal_u)} exceeds omega_max={params.omega_max}")
    v, k = composite_value(policy.vf, state, obstacles)
    if policy.engaged:
        if v > policy.alpha + policy.hysteresis:
            policy.engaged = False
    elif v <= policy.alpha:
        policy.engaged = True
    if not policy.engaged:
        return nominal_u, False
    disk = obstacles[k][0]
    p1, p2, p3 = gradient_many(policy.vf, [state.x - disk.cx],
                               [state.y - disk.cy], [state.theta])
    costate = Costate(float(p1[0]), float(p2[0]), float(p3[0]))
    return optimal_avoid_control(costate, params), True


def closed_loop_safe(policy: SafetyPolicy, state: State, nominal_policy,
                     obstacles: Sensed, params: DubinsParams,
                     dt: float = 1 / 60, horizon: float = 30.0,
                     slack: float | None = None) -> bool:
    """Roll the filtered loop forward and check the composite value never
    drops materially below alpha (within grid tolerance by default)."""
    if slack is None:
        slack = value_tolerance(policy.vf)
    floor = policy.alpha - slack
    s = state
    n = int(math.floor(horizon / dt + 1e-12))
    for _ in range(n):
        v, _ = composite_value(policy.vf, s, obstacles)
        if v < floor:
            return False
        u, _ = filter_control(policy, s, nominal_policy(s), obstacles, params)
        s = rk4_step(s, u, dt, params)
    v, _ = composite_value(policy.vf, s, obstacles)
    return v >= floor
