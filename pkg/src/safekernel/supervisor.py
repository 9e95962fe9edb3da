"""The supervisor model and the scene machinery that elicits interventions.

A supervisor is idealised as a value function plus a trigger level mu: they
step in whenever the observed value drops to mu or below.  Judgement noise
is one Gaussian draw per approach (a person sizes up an approach once, not
sixty times a second), so a whole approach shares a single draw w and the
trigger fires at the first tick with V(x) + w <= mu.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import State
from .reachability import (
    DataFormatError,
    KeepOutDisk,
    ValueFunction,
    interpolate_many,
)

DEFAULT_DISTANCE_RANGE = (8.0, 14.0)
DEFAULT_HEADING_JITTER = math.pi / 12  # +/- 15 degrees
PASS_BY_SLACK = 0.5  # beyond the spawn distance counts as a completed pass
MAX_SCENE_RETRIES = 10


class SceneGenerationError(RuntimeError):
    """A scene slot kept failing to produce a triggering approach."""


@dataclass(frozen=True)
class SupervisorParams:
    vf: ValueFunction
    mu: float
    sigma: float

    def __post_init__(self):
        if self.mu < 0 or not math.isfinite(self.mu):
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class InterventionRecord:
    relative_state: State  # obstacle frame: the canonical value functions read this
    obstacle: KeepOutDisk
    absolute_state: State
    session_id: str
    tick: int


def judge(params: SupervisorParams, state: State, w: float) -> bool:
    """Would the supervisor intervene on this state given noise draw w?

    The comparison is inclusive: sitting exactly on the level set triggers.
    Out-of-domain states are judged by the clamped boundary value.
    """
    v = float(interpolate_many(params.vf, [state.x], [state.y], [state.theta])[0])
    return v + w <= params.mu


def generate_scene(rng: np.random.Generator, obstacle_radius: float,
                   distance_range: tuple[float, float] = DEFAULT_DISTANCE_RANGE,
                   heading_jitter: float = DEFAULT_HEADING_JITTER,
                   ) -> tuple[State, KeepOutDisk]:
    """One canonical approach: obstacle at the origin, robot spawned on a ring
    heading roughly at it."""
    lo, hi = distance_range
    if not 0 < lo <= hi:
        raise ValueError(f"bad distance range {distance_range}")
    bearing = rng.uniform(-math.pi, math.pi)
    d = rng.uniform(lo, hi)
    heading = bearing + math.pi + rng.uniform(-heading_jitter, heading_jitter)
    state = State(d * math.cos(bearing), d * math.sin(bearing), heading)
    return state, KeepOutDisk(0.0, 0.0, obstacle_radius)


def _roll_straight(vf: ValueFunction, spawn: State, w: float, mu: float,
                   dt: float) -> tuple[State, int] | None:
    """Drive u = 0 from the spawn; return (state, tick) at the first trigger,
    or None if the robot passes by / leaves the domain untriggered."""
    speed = vf.speed
    d0 = math.hypot(spawn.x, spawn.y)
    step = speed * dt
    n = int(math.ceil((2.0 * d0 + 2.0) / step)) + 1
    ks = np.arange(n + 1, dtype=np.float64)
    xs = spawn.x + step * ks * math.cos(spawn.theta)
    ys = spawn.y + step * ks * math.sin(spawn.theta)
    dist = np.hypot(xs, ys)

    grid = vf.grid
    outside = ((xs < grid.mins[0]) | (xs > grid.maxs[0])
               | (ys < grid.mins[1]) | (ys > grid.maxs[1]))
    done = (dist > d0 + PASS_BY_SLACK) | outside
    done[0] = False
    stop = int(np.argmax(done)) if done.any() else n + 1

    vals = interpolate_many(vf, xs[:stop], ys[:stop],
                            np.full(stop, spawn.theta))
    trig = vals + w <= mu
    if not trig.any():
        return None
    k = int(np.argmax(trig))
    return State(float(xs[k]), float(ys[k]), spawn.theta), k


def collect_interventions(params: SupervisorParams, n_scenes: int,
                          rng: np.random.Generator, dt: float = 1 / 60,
                          distance_range: tuple[float, float] = DEFAULT_DISTANCE_RANGE,
                          heading_jitter: float = DEFAULT_HEADING_JITTER,
                          session_id: str = "synthetic",
                          max_retries: int = MAX_SCENE_RETRIES,
                          ) -> list[InterventionRecord]:
    """Run scripted approach scenes and record where the supervisor triggers.

    Scenes that never trigger (the approach misses wide, or the noise draw
    pushes the trigger level below anything the path reaches) are discarded
    and regenerated, up to ``max_retries`` per scene slot.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    radius = params.vf.obstacle_radius
    if not (radius > 0 and math.isfinite(radius)):
        raise ValueError("supervisor value function lacks an obstacle radius")

    records: list[InterventionRecord] = []
    for _ in range(n_scenes):
        for attempt in range(max_retries + 1):
            spawn, disk = generate_scene(rng, radius, distance_range,
                                         heading_jitter)
            w = float(rng.normal(0.0, params.sigma)) if params.sigma > 0 else 0.0
            hit = _roll_straight(params.vf, spawn, w, params.mu, dt)
            if hit is not None:
                state, tick = hit
                records.append(InterventionRecord(
                    relative_state=state, obstacle=disk, absolute_state=state,
                    session_id=session_id, tick=tick))
                break
        else:
            raise SceneGenerationError(
                f"no triggering approach in {max_retries + 1} attempts; "
                f"is mu={params.mu} reachable at all?")
    return records


# ---------------------------------------------------------------------------
# record persistence (JSONL, one record per line)
# ---------------------------------------------------------------------------

def _state_doc(s: State) -> dict:
    return {"x": s.x, "y": s.y, "theta": s.theta}


def record_to_doc(rec: InterventionRecord) -> dict:
    return {
        "relative_state": _state_doc(rec.relative_state),
        "obstacle": {"cx": rec.obstacle.cx, "cy": rec.obstacle.cy,
                     "r": rec.obstacle.r},
        "absolute_state": _state_doc(rec.absolute_state),
        "session_id": rec.session_id,
        "tick": rec.tick,
    }


def record_from_doc(doc: dict) -> InterventionRecord:
    rel = doc["relative_state"]
    ab = doc["absolute_state"]
    ob = doc["obstacle"]
    return InterventionRecord(
        relative_state=State(float(rel["x"]), float(rel["y"]), float(rel["theta"])),
        obstacle=KeepOutDisk(float(ob["cx"]), float(ob["cy"]), float(ob["r"])),
        absolute_state=State(float(ab["x"]), float(ab["y"]), float(ab["theta"])),
        session_id=str(doc["session_id"]),
        tick=int(doc["tick"]),
    )


def write_records(records: list[InterventionRecord], path: str) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(record_to_doc(rec)) + "\n")


def read_records(path: str) -> list[InterventionRecord]:
    records = []
    with open(path) as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_doc(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{i}: bad record: {exc}") from exc
    return records
