"""Live sessions over a JSON message protocol.

Three phases: free keyboard driving (I), straight-approach scenes where the
client marks intervention points (II), and live team supervision with
obstacle-removal clicks (III).  The state machine is synchronous and owns no
sockets, so scripted clients can drive it tick by tick in tests; serve()
wraps one instance per connection in an asyncio websocket handler.

The server tick is the time authority.  Client messages take effect at the
tick they arrive in: intervention records are stamped with the server-side
state at receipt, and removals queue one per tick in arrival order.
"""

from __future__ import annotations

import asyncio
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import State, rk4_step
from .reachability import KeepOutDisk
from .simulation import SafeSet, WorldConfig, spawn_world, step
from .supervisor import (
    DEFAULT_DISTANCE_RANGE,
    DEFAULT_HEADING_JITTER,
    PASS_BY_SLACK,
    InterventionRecord,
    generate_scene,
    record_to_doc,
)

PHASES = ("I", "II", "III")
BROADCAST_EVERY = 2  # physics at 60 Hz, state frames at 30 Hz


@dataclass
class SessionConfig:
    session_id: str = "session"
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    safeset: SafeSet | None = None
    alpha_rule: object = "zero"
    scene_radius: float = 2.25
    distance_range: tuple[float, float] = DEFAULT_DISTANCE_RANGE
    heading_jitter: float = DEFAULT_HEADING_JITTER
    phase1_ticks: int = 3600
    phase2_scenes: int = 10
    log_path: str | None = None


def _error(message: str) -> dict:
    return {"type": "error", "message": message}


def _event(kind: str, **fields) -> dict:
    frame = {"type": "event", "kind": kind}
    frame.update(fields)
    return frame


class SessionCore:
    """One client's session: phase state, tick loop, and message handling.

    advance() runs one 60 Hz tick and returns the frames to send (a state
    frame every second tick, plus any events).  handle_message() applies one
    client message at the current tick.
    """

    def __init__(self, config: SessionConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.phase: str | None = None
        self.tick = 0
        self.records: list[InterventionRecord] = []
        self._control = 0.0
        self._robot: State | None = None
        self._scene = None          # (spawn_distance, disk, index)
        self._scene_done = 0
        self._intervened = False
        self._world = None
        self._removals: list[int] = []
        self._phase_over = False

    # -- message handling ---------------------------------------------------

    def handle_message(self, text: str) -> list[dict]:
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            return [_error("malformed JSON")]
        if not isinstance(msg, dict) or "type" not in msg:
            return [_error("message must be an object with a type")]
        kind = msg["type"]
        if kind == "start_phase":
            return self._start_phase(msg)
        if kind == "control":
            return self._on_control(msg)
        if kind == "intervene":
            return self._on_intervene()
        if kind == "remove":
            return self._on_remove(msg)
        return [_error(f"unknown message type {kind!r}")]

    def _start_phase(self, msg: dict) -> list[dict]:
        phase = msg.get("phase")
        if phase not in PHASES:
            return [_error(f"unknown phase {phase!r}")]
        if self.phase is not None and PHASES.index(phase) <= PHASES.index(self.phase):
            return [_error(f"cannot go back from phase {self.phase} to {phase}")]
        params = msg.get("params") or {}
        self.phase = phase
        self.tick = 0
        self._phase_over = False
        if phase == "I":
            w, h = self.config.world.arena
            self._robot = State(w / 2.0, h / 2.0, 0.0)
            self._control = 0.0
        elif phase == "II":
            self._scene = None
            self._scene_done = 0
            self._scene_total = int(params.get("scenes",
                                               self.config.phase2_scenes))
        else:
            if self.config.safeset is None:
                self.phase = None
                return [_error("phase III needs a configured safe set")]
            self._world = spawn_world(self.config.world, self.config.safeset,
                                      self.config.alpha_rule)
            self._removals = []
        return [_event("phase_start", phase=phase)]

    def _on_control(self, msg: dict) -> list[dict]:
        if self.phase != "I":
            return [_error("control messages are phase I only")]
        u = msg.get("u")
        limit = self.config.world.omega_max
        if not isinstance(u, (int, float)) or not math.isfinite(u) \
                or abs(u) > limit + 1e-9:
            return [_error(f"control must be a number within ±{limit}")]
        self._control = float(u)
        return []

    def _on_intervene(self) -> list[dict]:
        if self.phase != "II":
            return [_error("intervene messages are phase II only")]
        if self._scene is None or self._intervened:
            return []  # scene not running, or duplicate: ignored
        self._intervened = True
        _, disk, index = self._scene
        absolute = self._robot
        relative = State(absolute.x - disk.cx, absolute.y - disk.cy,
                         absolute.theta)
        record = InterventionRecord(relative_state=relative, obstacle=disk,
                                    absolute_state=absolute,
                                    session_id=self.config.session_id,
                                    tick=self.tick)
        self.records.append(record)
        if self.config.log_path:
            with open(self.config.log_path, "a") as fh:
                fh.write(json.dumps(record_to_doc(record)) + "\n")
        return self._finish_scene(index, recorded=True)

    def _on_remove(self, msg: dict) -> list[dict]:
        if self.phase != "III":
            return [_error("remove messages are phase III only")]
        obstacle_id = msg.get("obstacle_id")
        if not isinstance(obstacle_id, int):
            return [_error("remove needs an integer obstacle_id")]
        self._removals.append(obstacle_id)
        return []

    # -- tick loop ----------------------------------------------------------

    @property
    def phase_active(self) -> bool:
        return self.phase is not None and not self._phase_over

    def advance(self) -> list[dict]:
        if not self.phase_active:
            return []
        if self.phase == "I":
            frames = self._tick_free_drive()
        elif self.phase == "II":
            frames = self._tick_scene()
        else:
            frames = self._tick_world()
        return frames

    def _tick_free_drive(self) -> list[dict]:
        dt = self.config.world.dt
        self._robot = rk4_step(self._robot, self._control, dt,
                               self.config.world.params)
        self.tick += 1
        frames = []
        if self.tick % BROADCAST_EVERY == 0:
            left = (self.config.phase1_ticks - self.tick) * dt
            frames.append(self._state_frame(
                robots=[{"id": 0, "x": self._robot.x, "y": self._robot.y,
                         "theta": self._robot.theta}],
                obstacles=[], score=0.0, time_left=left))
        if self.tick >= self.config.phase1_ticks:
            self._phase_over = True
            frames.append(_event("phase_end", phase="I"))
        return frames

    def _tick_scene(self) -> list[dict]:
        frames = []
        if self._scene is None:
            rel, _ = generate_scene(self.rng, self.config.scene_radius,
                                    self.config.distance_range,
                                    self.config.heading_jitter)
            w, h = self.config.world.arena
            disk = KeepOutDisk(w / 2.0, h / 2.0, self.config.scene_radius)
            self._robot = State(rel.x + disk.cx, rel.y + disk.cy, rel.theta)
            self._scene = (math.hypot(rel.x, rel.y), disk, self._scene_done)
            self._intervened = False
        dt = self.config.world.dt
        self._robot = rk4_step(self._robot, 0.0, dt, self.config.world.params)
        self.tick += 1
        spawn_distance, disk, index = self._scene
        if math.hypot(self._robot.x - disk.cx, self._robot.y - disk.cy) \
                > spawn_distance + PASS_BY_SLACK:
            frames.extend(self._finish_scene(index, recorded=False))
        if self.tick % BROADCAST_EVERY == 0 and self._scene is not None:
            frames.append(self._state_frame(
                robots=[{"id": 0, "x": self._robot.x, "y": self._robot.y,
                         "theta": self._robot.theta}],
                obstacles=[{"id": index, "cx": disk.cx, "cy": disk.cy,
                            "r": disk.r}],
                score=0.0, time_left=0.0,
                scene=index, scenes_total=self._scene_total))
        return frames

    def _finish_scene(self, index: int, recorded: bool) -> list[dict]:
        self._scene = None
        self._scene_done += 1
        frames = [_event("scene_end", scene=index, recorded=recorded)]
        if self._scene_done >= self._scene_total:
            self._phase_over = True
            frames.append(_event("phase_end", phase="II",
                                 records=len(self.records)))
        return frames

    def _tick_world(self) -> list[dict]:
        world = self._world
        frames = []
        remove_id = None
        while self._removals:
            candidate = self._removals.pop(0)
            try:
                world.slot_of(candidate)
            except ValueError:
                frames.append(_error(f"no live obstacle {candidate}"))
                continue
            remove_id = candidate
            break
        events = step(world, remove_id=remove_id)
        self.tick = world.tick
        for ev in events:
            payload = {k: v for k, v in ev.items() if k != "kind"}
            frames.append(_event(ev["kind"], **payload))
        if self.tick % BROADCAST_EVERY == 0:
            left = max(0, self.config.world.trial_ticks - self.tick) \
                * self.config.world.dt
            frames.append(self._state_frame(
                robots=[{"id": r.id, "x": r.state.x, "y": r.state.y,
                         "theta": r.state.theta} for r in world.robots],
                obstacles=[{"id": o.id, "cx": o.disk.cx, "cy": o.disk.cy,
                            "r": o.disk.r} for o in world.obstacles],
                score=world.score, time_left=left))
        if self.tick >= self.config.world.trial_ticks:
            self._phase_over = True
            frames.append(_event("phase_end", phase="III",
                                 score=world.score))
        return frames

    def _state_frame(self, robots, obstacles, score, time_left, **extra):
        frame = {"type": "state", "phase": self.phase, "tick": self.tick,
                 "robots": robots, "obstacles": obstacles, "score": score,
                 "time_left": time_left}
        frame.update(extra)
        return frame

    @property
    def world(self):
        return self._world


async def _handle_connection(ws, config_factory, time_scale: float):
    from websockets.exceptions import ConnectionClosed

    core = SessionCore(config_factory())

    async def pump_messages():
        async for text in ws:
            for frame in core.handle_message(text):
                await ws.send(json.dumps(frame))

    pump = asyncio.ensure_future(pump_messages())
    try:
        dt = core.config.world.dt / time_scale
        while not pump.done():
            if core.phase_active:
                for frame in core.advance():
                    await ws.send(json.dumps(frame))
            await asyncio.sleep(dt)
    except ConnectionClosed:
        # a vanished client ends its session, nothing more
        pass
    finally:
        pump.cancel()


async def serve(port: int, config_factory, time_scale: float = 1.0,
                host: str = "127.0.0.1", ready: asyncio.Event | None = None):
    """Accept connections until cancelled; every connection gets an isolated
    session built from config_factory().  Raises OSError if the port is
    busy."""
    import websockets

    async def handler(ws):
        await _handle_connection(ws, config_factory, time_scale)

    async with websockets.serve(handler, host, port):
        if ready is not None:
            ready.set()
        await asyncio.Future()
