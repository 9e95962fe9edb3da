"""Dubins-car kinematics: constant forward speed, bounded turn rate.

State is (x, y, theta) with theta kept in [-pi, pi).  The only control is
the turn rate u, |u| <= omega_max.  Everything downstream (the reachability
solver, the safety filter, the trial engine) shares these conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

TWO_PI = 2.0 * math.pi

# slack applied to every control-bound check so that controls computed as
# +/-omega_max survive float round-trips
CONTROL_SLACK = 1e-9


class ControlBoundError(ValueError):
    """Commanded turn rate exceeds omega_max."""


class PolicyFaultError(RuntimeError):
    """A feedback policy produced a non-finite control."""


def wrap_angle(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    return (theta + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class DubinsParams:
    speed: float = 3.0
    omega_max: float = 1.0

    def __post_init__(self):
        if not (self.speed > 0.0 and math.isfinite(self.speed)):
            raise ValueError(f"speed must be positive, got {self.speed}")
        if not (self.omega_max >= 0.0 and math.isfinite(self.omega_max)):
            raise ValueError(f"omega_max must be >= 0, got {self.omega_max}")

    @property
    def turning_radius(self) -> float:
        return self.speed / self.omega_max if self.omega_max > 0 else math.inf


@dataclass(frozen=True)
class State:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x, self.y, self.theta))):
            raise ValueError(f"non-finite state {(self.x, self.y, self.theta)}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class Costate:
    p1: float
    p2: float
    p3: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.p1, self.p2, self.p3))):
            raise ValueError("non-finite costate")


# a rollout is a list of (time, state) samples
Trajectory = list[tuple[float, State]]

Policy = Callable[[State], float]


def _check_control(u: float, params: DubinsParams) -> float:
    if not math.isfinite(u):
        raise PolicyFaultError(f"non-finite control {u}")
    if abs(u) > params.omega_max + CONTROL_SLACK:
        raise ControlBoundError(f"|u|={abs(u)} exceeds omega_max={params.omega_max}")
    return u


def flow(state: State, u: float, params: DubinsParams) -> tuple[float, float, float]:
    """Right-hand side (dx, dy, dtheta) under turn rate u."""
    if not math.isfinite(u):
        raise ControlBoundError(f"non-finite control {u}")
    _check_control(u, params)
    return (params.speed * math.cos(state.theta),
            params.speed * math.sin(state.theta),
            u)


def rk4_step(state: State, u: float, dt: float, params: DubinsParams) -> State:
    """One classic RK4 step holding u constant across the step."""
    v = params.speed

    def deriv(th):
        return v * math.cos(th), v * math.sin(th)

    th0 = state.theta
    k1x, k1y = deriv(th0)
    k2x, k2y = deriv(th0 + 0.5 * dt * u)
    k3x, k3y = k2x, k2y  # theta' = u is state-independent, so k3 == k2
    k4x, k4y = deriv(th0 + dt * u)
    x = state.x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    y = state.y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
    return State(x, y, th0 + dt * u)


def integrate(state: State, policy: Policy, dt: float, horizon: float,
              params: DubinsParams) -> Trajectory:
    """Fixed-step RK4 rollout under a feedback policy (zero-order hold).

    Returns floor(horizon / dt) + 1 samples including the initial state.
    """
    if dt <= 0 or horizon < 0:
        raise ValueError("dt must be positive and horizon non-negative")
    n_steps = int(math.floor(horizon / dt + 1e-12))
    traj: Trajectory = [(0.0, state)]
    s = state
    for k in range(n_steps):
        u = policy(s)
        if u is None or not math.isfinite(u):
            raise PolicyFaultError(f"policy returned {u} at {s}")
        _check_control(u, params)
        s = rk4_step(s, u, dt, params)
        traj.append(((k + 1) * dt, s))
    return traj


def optimal_avoid_control(costate: Costate, params: DubinsParams) -> float:
    """Turn rate maximising the avoidance Hamiltonian: full turn along p3.

    A zero p3 ties; the tie breaks toward the positive (counter-clockwise)
    turn so the law is a deterministic function of the costate.
    """
    return params.omega_max if costate.p3 >= 0.0 else -params.omega_max


def hamiltonian(state: State, costate: Costate, params: DubinsParams) -> float:
    """max_u costate . flow(state, u): closed form of the avoidance Hamiltonian."""
    return (params.speed * (costate.p1 * math.cos(state.theta)
                            + costate.p2 * math.sin(state.theta))
            + params.omega_max * abs(costate.p3))
