"""Team crossing task with supervisor removals and false-positive accounting.

A seeded world holds a row of lane-crossing robots and a field of keep-out
disks.  Robots steer toward their goals with a proportional heading law,
filtered through a SafetyPolicy that sees only the obstacles the robot
detected at spawn time.  A supervisor (simulated here, or a live client via
the session service) may remove one obstacle per tick; every removal is
classified true or false positive at the moment it happens.

Obstacles occupy stable slots: a removal replaces the slot's disk with a
freshly placed one, so the obstacle count is constant for a whole trial and
per-slot detection flags and supervisor noise draws have a fixed home.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import DubinsParams, State, rk4_step, wrap_angle
from .learning import SupervisorFit
from .reachability import KeepOutDisk, ValueFunction, interpolate_many
from .safety_controller import SafetyPolicy, filter_control
from .supervisor import SupervisorParams

PLACEMENT_ATTEMPTS = 1000

FALSE_POSITIVE = "false_positive"
TRUE_POSITIVE = "true_positive"


class ArenaTooCrowdedError(RuntimeError):
    """Obstacle placement failed to honour the clearance rules."""


def lane_clearance(params: DubinsParams) -> float:
    """Minimum free gap kept between obstacle surfaces: one turning diameter,
    so a robot can always thread between two obstacles."""
    return 2.0 * params.speed / params.omega_max


def relevance_radius(params: DubinsParams) -> float:
    """How far a closing robot can be from an obstacle and still count as
    involved with it: two turning diameters."""
    return 4.0 * params.speed / params.omega_max


@dataclass(frozen=True)
class ScoreRule:
    trip_reward: float = 1.0
    crash_cost: float = 10.0
    removal_cost: float = 5.0

    def __post_init__(self):
        if not math.isclose(self.removal_cost, self.crash_cost / 2.0):
            raise ValueError("removal_cost must be half of crash_cost")
        if self.trip_reward < 0 or self.crash_cost < 0:
            raise ValueError("rewards and costs must be nonnegative")


@dataclass(frozen=True)
class WorldConfig:
    arena: tuple[float, float] = (80.0, 48.0)
    n_robots: int = 4
    n_obstacles: int = 10
    obstacle_radius: float = 2.25
    detection_prob: float = 0.8
    score: ScoreRule = field(default_factory=ScoreRule)
    dt: float = 1 / 60
    trial_ticks: int = 10800
    seed: int = 0
    speed: float = 3.0
    omega_max: float = 1.0
    capture_radius: float = 1.5
    nominal_gain: float = 2.0
    # extra raise of the filter's activation level over the reported alpha;
    # compensates the one-tick overshoot past the level set so a noiseless
    # supervisor watching the same set never beats the filter to it
    activation_margin: float = 0.25

    def __post_init__(self):
        if self.arena[0] <= 0 or self.arena[1] <= 0:
            raise ValueError("arena sides must be positive")
        if self.n_robots < 1 or self.n_obstacles < 1:
            raise ValueError("need at least one robot and one obstacle")
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError("detection_prob must be in [0, 1]")
        if self.obstacle_radius <= 0 or self.dt <= 0 or self.trial_ticks < 0:
            raise ValueError("obstacle_radius, dt, trial_ticks out of range")

    @property
    def params(self) -> DubinsParams:
        return DubinsParams(speed=self.speed, omega_max=self.omega_max)


@dataclass
class Obstacle:
    id: int
    disk: KeepOutDisk


@dataclass
class Robot:
    id: int
    lane_y: float
    state: State
    goal: tuple[float, float]
    policy: SafetyPolicy
    trips: int = 0


class WorldState:
    def __init__(self, config: WorldConfig, robots: list[Robot],
                 obstacles: list[Obstacle], detected: np.ndarray,
                 rng: np.random.Generator, reported_alpha: float,
                 safeset_name: str):
        self.config = config
        self.params = config.params
        self.robots = robots
        self.obstacles = obstacles
        self.detected = detected  # bool (n_robots, n_obstacles) by slot
        self.rng = rng
        self.reported_alpha = reported_alpha
        self.safeset_name = safeset_name
        self.score = 0.0
        self.tick = 0
        self.trips = 0
        self.crashes = 0
        self.interventions = 0
        self.false_positives = 0
        self.intervention_log: list[dict] = []
        self._next_obstacle_id = len(obstacles)

    def slot_of(self, obstacle_id: int) -> int:
        for j, obstacle in enumerate(self.obstacles):
            if obstacle.id == obstacle_id:
                return j
        raise ValueError(f"no live obstacle with id {obstacle_id}")


@dataclass(frozen=True)
class SafeSet:
    """A value function for the robots to operate on, with its provenance."""
    name: str
    vf: ValueFunction
    fit: SupervisorFit | None = None


def standard_safeset(vf: ValueFunction) -> SafeSet:
    return SafeSet("standard", vf)


def learned_safeset(fit: SupervisorFit) -> SafeSet:
    return SafeSet("learned", fit.vf, fit)


def conservative_safeset(vf: ValueFunction) -> SafeSet:
    return SafeSet("conservative", vf)


def resolve_alpha(safeset: SafeSet, alpha_rule) -> float:
    """Activation level for a treatment: a named rule or an explicit value."""
    if isinstance(alpha_rule, (int, float)) and not isinstance(alpha_rule, bool):
        return float(alpha_rule)
    if alpha_rule == "zero":
        return 0.0
    if alpha_rule in ("mu", "mu_plus_2sigma"):
        if safeset.fit is None:
            raise ValueError(f"alpha rule {alpha_rule!r} needs a fitted safe set")
        if alpha_rule == "mu":
            return safeset.fit.mu_hat
        return safeset.fit.mu_hat + 2.0 * safeset.fit.sigma_hat
    raise ValueError(f"unknown alpha rule {alpha_rule!r}")


def _lane_ys(config: WorldConfig) -> list[float]:
    height = config.arena[1]
    n = config.n_robots
    return [height * (i + 1) / (n + 1) for i in range(n)]


def _lane_endpoints(config: WorldConfig) -> list[tuple[float, float]]:
    width = config.arena[0]
    points = []
    for y in _lane_ys(config):
        points.append((2.0, y))
        points.append((width - 2.0, y))
    return points


def _place_obstacle(rng: np.random.Generator, config: WorldConfig,
                    occupied: Sequence[KeepOutDisk],
                    keep_clear: Sequence[tuple[float, float]]) -> KeepOutDisk:
    """Rejection-sample one disk honouring the clearance rules: fully inside
    the arena, one turning diameter of free gap to every other disk, and the
    same gap to every keep-clear point (lane ends, live robots)."""
    width, height = config.arena
    r = config.obstacle_radius
    gap = lane_clearance(config.params)
    pad = r + 0.5
    if width <= 2 * pad or height <= 2 * pad:
        raise ArenaTooCrowdedError("arena smaller than one obstacle")
    for _ in range(PLACEMENT_ATTEMPTS):
        cx = rng.uniform(pad, width - pad)
        cy = rng.uniform(pad, height - pad)
        ok = all(math.hypot(cx - d.cx, cy - d.cy) >= gap + r + d.r
                 for d in occupied)
        ok = ok and all(math.hypot(cx - px, cy - py) >= gap + r
                        for px, py in keep_clear)
        if ok:
            return KeepOutDisk(cx, cy, r)
    raise ArenaTooCrowdedError(
        f"no valid obstacle position in {PLACEMENT_ATTEMPTS} attempts")


def spawn_world(config: WorldConfig, safeset: SafeSet,
                alpha_rule="zero") -> WorldState:
    """Deterministic world from config.seed.  Robots start on the left edge
    of their lanes facing right-edge goals; every robot-obstacle detection
    flag is drawn once at spawn."""
    world_seed, _ = _seed_children(config.seed)
    rng = np.random.default_rng(world_seed)
    alpha = resolve_alpha(safeset, alpha_rule)
    width = config.arena[0]

    keep_clear = _lane_endpoints(config)
    disks: list[KeepOutDisk] = []
    for _ in range(config.n_obstacles):
        disks.append(_place_obstacle(rng, config, disks, keep_clear))
    obstacles = [Obstacle(j, d) for j, d in enumerate(disks)]

    robots = []
    for i, y in enumerate(_lane_ys(config)):
        policy = SafetyPolicy(safeset.vf,
                              alpha=alpha + config.activation_margin)
        robots.append(Robot(i, y, State(2.0, y, 0.0), (width - 2.0, y),
                            policy))

    detected = rng.random((config.n_robots, config.n_obstacles)) \
        < config.detection_prob
    return WorldState(config, robots, obstacles, detected, rng,
                      reported_alpha=alpha, safeset_name=safeset.name)


def _seed_children(seed: int) -> tuple:
    kids = np.random.SeedSequence(seed).spawn(2)
    return kids[0], kids[1]


def classify_intervention(world: WorldState, obstacle_id: int) -> str:
    """False positive iff every robot currently involved with the obstacle
    (closing, within two turning diameters) had already detected it; a
    removal with nobody involved was unnecessary, so it is a false positive
    too."""
    j = world.slot_of(obstacle_id)
    disk = world.obstacles[j].disk
    radius = relevance_radius(world.params)
    for i, robot in enumerate(world.robots):
        dx = disk.cx - robot.state.x
        dy = disk.cy - robot.state.y
        if math.hypot(dx, dy) > radius:
            continue
        if dx * math.cos(robot.state.theta) + dy * math.sin(robot.state.theta) <= 0:
            continue
        if not world.detected[i, j]:
            return TRUE_POSITIVE
    return FALSE_POSITIVE


def _nominal_control(robot: Robot, config: WorldConfig) -> float:
    gx, gy = robot.goal
    bearing = math.atan2(gy - robot.state.y, gx - robot.state.x)
    err = wrap_angle(bearing - robot.state.theta)
    w = config.omega_max
    return min(max(config.nominal_gain * err, -w), w)


def _respawn_obstacle(world: WorldState, slot: int) -> Obstacle:
    config = world.config
    occupied = [o.disk for j, o in enumerate(world.obstacles) if j != slot]
    keep_clear = _lane_endpoints(config) + \
        [(r.state.x, r.state.y) for r in world.robots]
    disk = _place_obstacle(world.rng, config, occupied, keep_clear)
    obstacle = Obstacle(world._next_obstacle_id, disk)
    world._next_obstacle_id += 1
    world.obstacles[slot] = obstacle
    world.detected[:, slot] = world.rng.random(config.n_robots) \
        < config.detection_prob
    return obstacle


def _teleport(world: WorldState, robot: Robot):
    """Back to the start of the current leg, facing the goal, fresh flags."""
    width = world.config.arena[0]
    going_right = robot.goal[0] > width / 2.0
    x = 2.0 if going_right else width - 2.0
    robot.state = State(x, robot.lane_y, 0.0 if going_right else math.pi)
    robot.policy.engaged = False
    world.detected[robot.id, :] = world.rng.random(world.config.n_obstacles) \
        < world.config.detection_prob


def step(world: WorldState, remove_id: int | None = None,
         dt: float | None = None) -> list[dict]:
    """Advance one tick; returns the events that happened.

    Order: the supervisor's removal is applied first (classified against the
    pre-removal world), then robots move under their filtered controls, then
    crashes teleport and goals score.
    """
    config = world.config
    if dt is None:
        dt = config.dt
    events: list[dict] = []

    if remove_id is not None:
        slot = world.slot_of(remove_id)
        removed = world.obstacles[slot]
        classification = classify_intervention(world, remove_id)
        world.interventions += 1
        if classification == FALSE_POSITIVE:
            world.false_positives += 1
        world.score -= config.score.removal_cost
        world.intervention_log.append({
            "tick": world.tick,
            "obstacle": {"id": removed.id, "cx": removed.disk.cx,
                         "cy": removed.disk.cy, "r": removed.disk.r},
            "classification": classification,
        })
        replacement = _respawn_obstacle(world, slot)
        events.append({"kind": "removal", "tick": world.tick,
                       "obstacle_id": removed.id,
                       "replacement_id": replacement.id,
                       "slot": slot,
                       "classification": classification})

    for i, robot in enumerate(world.robots):
        sensed = [(o.disk, bool(world.detected[i, j]))
                  for j, o in enumerate(world.obstacles)]
        u, _ = filter_control(robot.policy, robot.state,
                              _nominal_control(robot, config), sensed,
                              world.params)
        robot.state = rk4_step(robot.state, u, dt, world.params)

    for robot in world.robots:
        hit = None
        for obstacle in world.obstacles:
            if math.hypot(robot.state.x - obstacle.disk.cx,
                          robot.state.y - obstacle.disk.cy) <= obstacle.disk.r:
                hit = obstacle
                break
        if hit is not None:
            world.crashes += 1
            world.score -= config.score.crash_cost
            _teleport(world, robot)
            events.append({"kind": "crash", "tick": world.tick,
                           "robot_id": robot.id, "obstacle_id": hit.id})

    for robot in world.robots:
        gx, gy = robot.goal
        if math.hypot(robot.state.x - gx, robot.state.y - gy) \
                <= config.capture_radius:
            robot.trips += 1
            world.trips += 1
            world.score += config.score.trip_reward
            width = config.arena[0]
            robot.goal = (2.0 if gx > width / 2.0 else width - 2.0,
                          robot.lane_y)
            events.append({"kind": "trip", "tick": world.tick,
                           "robot_id": robot.id, "trips": robot.trips})

    world.tick += 1
    return events


class SimulatedSupervisor:
    """Watches every robot-obstacle pair with its own value function and
    removes an obstacle when a pair's value plus the pair's noise draw falls
    to mu.  One draw per approach: the draw is made when the pair first gets
    within range while closing and lives until the pair separates (or either
    party is replaced).  Fires only while closing, at most one removal per
    tick, most urgent pair first."""

    def __init__(self, params: SupervisorParams, rng: np.random.Generator,
                 n_robots: int, n_obstacles: int,
                 engage_radius: float = 12.0):
        self.params = params
        self.rng = rng
        self.engage_radius = engage_radius
        self.active = np.zeros((n_robots, n_obstacles), dtype=bool)
        self.w = np.zeros((n_robots, n_obstacles))

    def reset_robot(self, i: int):
        self.active[i, :] = False

    def reset_slot(self, j: int):
        self.active[:, j] = False

    def act(self, world: WorldState) -> int | None:
        pos = np.array([(r.state.x, r.state.y) for r in world.robots])
        heading = np.array([(math.cos(r.state.theta), math.sin(r.state.theta))
                            for r in world.robots])
        thetas = np.array([r.state.theta for r in world.robots])
        centers = np.array([(o.disk.cx, o.disk.cy) for o in world.obstacles])

        rel = centers[None, :, :] - pos[:, None, :]
        dist = np.hypot(rel[:, :, 0], rel[:, :, 1])
        closing = (rel * heading[:, None, :]).sum(axis=2) > 0.0

        self.active[dist > self.engage_radius] = False
        started = (dist <= self.engage_radius) & closing & ~self.active
        n_new = int(started.sum())
        if n_new:
            # row-major assignment keeps the draw order deterministic
            self.w[started] = self.rng.normal(0.0, self.params.sigma, n_new)
            self.active[started] = True

        watch = self.active & closing
        if not watch.any():
            return None
        n_obs = len(world.obstacles)
        vals = interpolate_many(
            self.params.vf,
            (-rel[:, :, 0]).ravel(), (-rel[:, :, 1]).ravel(),
            np.repeat(thetas, n_obs)).reshape(dist.shape)
        fire = watch & (vals + self.w <= self.params.mu)
        if not fire.any():
            return None
        flat = np.where(fire.ravel(), vals.ravel(), np.inf)
        i, j = divmod(int(np.argmin(flat)), n_obs)
        return world.obstacles[j].id


@dataclass(frozen=True)
class TrialMetrics:
    safeset: str
    alpha: float
    trips: int
    crashes: int
    interventions: int
    false_positives: int
    score: float
    intervention_log: tuple


def _metrics(world: WorldState) -> TrialMetrics:
    return TrialMetrics(
        safeset=world.safeset_name,
        alpha=world.reported_alpha,
        trips=world.trips,
        crashes=world.crashes,
        interventions=world.interventions,
        false_positives=world.false_positives,
        score=world.score,
        intervention_log=tuple(
            (e["tick"], e["obstacle"]["id"], e["obstacle"]["cx"],
             e["obstacle"]["cy"], e["classification"])
            for e in world.intervention_log),
    )


def run_trial(config: WorldConfig, safeset: SafeSet,
              supervisor: SupervisorParams | None = None,
              alpha_rule="zero", trace_path: str | None = None
              ) -> TrialMetrics:
    """One full trial.  With a supervisor, its removals are applied through
    the same step() a live client would drive; without one the robots run
    unsupervised."""
    world = spawn_world(config, safeset, alpha_rule)
    driver = None
    if supervisor is not None:
        _, sup_seed = _seed_children(config.seed)
        driver = SimulatedSupervisor(supervisor, np.random.default_rng(sup_seed),
                                     config.n_robots, config.n_obstacles,
                                     engage_radius=relevance_radius(config.params))
    sink = open(trace_path, "w") if trace_path else None
    try:
        for _ in range(config.trial_ticks):
            action = driver.act(world) if driver is not None else None
            tick = world.tick
            events = step(world, action)
            if driver is not None:
                for event in events:
                    if event["kind"] == "crash":
                        driver.reset_robot(event["robot_id"])
                    elif event["kind"] == "removal":
                        driver.reset_slot(event["slot"])
            if sink is not None:
                sink.write(json.dumps(_trace_line(world, tick, events),
                                      sort_keys=True) + "\n")
    finally:
        if sink is not None:
            sink.close()
    return _metrics(world)


def _trace_line(world: WorldState, tick: int, events: list[dict]) -> dict:
    return {
        "tick": tick,
        "robots": [{"id": r.id, "x": r.state.x, "y": r.state.y,
                    "theta": r.state.theta} for r in world.robots],
        "obstacles": [{"id": o.id, "cx": o.disk.cx, "cy": o.disk.cy,
                       "r": o.disk.r} for o in world.obstacles],
        "events": events,
    }


def metrics_doc(metrics: TrialMetrics) -> dict:
    return {
        "safeset": metrics.safeset,
        "alpha": metrics.alpha,
        "trips": metrics.trips,
        "crashes": metrics.crashes,
        "interventions": metrics.interventions,
        "false_positives": metrics.false_positives,
        "score": metrics.score,
        "intervention_log": [list(entry) for entry in metrics.intervention_log],
    }


def save_metrics(path, runs: list[TrialMetrics]):
    doc = {
        "trials": [metrics_doc(m) for m in runs],
        "totals": {
            "trips": sum(m.trips for m in runs),
            "crashes": sum(m.crashes for m in runs),
            "interventions": sum(m.interventions for m in runs),
            "false_positives": sum(m.false_positives for m in runs),
            "score": sum(m.score for m in runs),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
