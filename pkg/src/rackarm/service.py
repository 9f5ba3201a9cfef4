"""Live session host: streams robot state, accepts operator inputs.

The simulation itself lives in ``ServiceSession``, a synchronous,
deterministic state machine: inputs are drained from a mailbox at the
start of every tick, the most recent obstacle/tip update wins, and one
control cycle advances the plant.  The network layer is a thin shell —
one WebSocket connection handler per client, one tick loop, per-client
outbound queues so sequence numbers stay strictly increasing per
connection.  Timestamps are logical (tick index times the tick period),
which is what makes recorded sessions replay exactly.

Wire format: one JSON object per WebSocket text frame with fields
``kind``, ``seq``, ``t`` (ms), ``payload``:

  hello            -> {schema_version, n_segments, tick_hz, broadcast_every}
  state            -> {step, q, nodes, tip_error, beta, min_clearance,
                       obstacle, paused, plan_failed, fault}
  obstacle_update  <- {x, y, radius}
  target_update    <- {x, y}
  session_control  <- {action: start | pause | reset}
  fault            -> {message}
"""

import asyncio
import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import AppConfig, ServiceSettings
from .control import ControllerConfig, control_cycle
from .errors import InfeasiblePlanError, InvalidInputError
from .geometry import RobotGeometry, clamp_to_bounds, forward_kinematics
from .network import NetworkParams
from .planner import Obstacle, PlanConfig, envelope_points, plan_shape
from .plant import DisturbanceProfile, make_initial_state, observe, plant_step

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CLIENT_KINDS = ("obstacle_update", "target_update", "session_control")
_CONTROL_ACTIONS = ("start", "pause", "reset")


def _finite_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def validate_client_message(text):
    """Parse one inbound frame.  Returns (message, None) or (None, reason)."""
    try:
        msg = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return None, "frame is not valid JSON"
    if not isinstance(msg, dict):
        return None, "frame must be a JSON object"
    kind = msg.get("kind")
    if kind not in CLIENT_KINDS:
        return None, f"unknown kind {kind!r}"
    payload = msg.get("payload")
    if not isinstance(payload, dict):
        return None, "payload must be an object"
    if kind == "obstacle_update":
        if not all(_finite_number(payload.get(k)) for k in ("x", "y", "radius")):
            return None, "obstacle_update needs finite x, y, radius"
        if payload["radius"] <= 0:
            return None, "obstacle radius must be positive"
    elif kind == "target_update":
        if not all(_finite_number(payload.get(k)) for k in ("x", "y")):
            return None, "target_update needs finite x, y"
    else:
        if payload.get("action") not in _CONTROL_ACTIONS:
            return None, "session_control action must be start, pause, or reset"
    return {"kind": kind, "payload": payload}, None


class ServiceSession:
    """Deterministic tick-stepped avoidance session.

    The same (seed, input schedule) always yields the same state stream;
    driving it from a file reproduces the headless session runner.
    """

    def __init__(
        self,
        params: NetworkParams | None,
        profile: DisturbanceProfile,
        plan_cfg: PlanConfig,
        ctrl_cfg: ControllerConfig,
        geo: RobotGeometry,
        replan_every: int = 5,
        q0: np.ndarray | None = None,
    ):
        if replan_every < 1:
            raise InvalidInputError("replan_every must be at least 1")
        if params is None and ctrl_cfg.force_beta != 1.0:
            raise InvalidInputError("gated control without parameters; force the gate or pass a checkpoint")
        self.params = params
        self.profile = profile
        self.base_plan_cfg = plan_cfg
        self.ctrl_cfg = ctrl_cfg
        self.geo = geo
        self.replan_every = int(replan_every)
        if q0 is None:
            q0 = np.full(geo.n_joints, plan_cfg.q_nominal)
        self._q0 = clamp_to_bounds(np.asarray(q0, dtype=float), geo)
        self.reset()
        # Construction is not a client-visible reset: the first tick advances
        # normally so the stream lines up with a headless session log.
        self._hold_one_tick = False

    def reset(self):
        self.plan_cfg = self.base_plan_cfg
        self.state = make_initial_state(self._q0, self.profile, self.geo)
        self.dq_hist = np.zeros(self.geo.n_joints)
        self.target = forward_kinematics(self.state.q, self.geo)
        self.target_q = self.state.q.copy()
        self.obstacle: Obstacle | None = None
        self.step_index = 0
        self.paused = False
        self.plan_failed = False
        self.last_beta = np.ones((self.geo.n_segments, 3))
        self.last_fault = None
        # Let the state message for the tick that processed the reset show
        # the restored posture itself (step 0, nominal q) before advancing.
        self._hold_one_tick = True

    def apply(self, msg: dict):
        """Apply one validated client message.  Assignments overwrite, so
        draining a backlog in order leaves the most recent update in force."""
        kind, payload = msg["kind"], msg["payload"]
        if kind == "obstacle_update":
            self.obstacle = Obstacle(
                center=(float(payload["x"]), float(payload["y"])),
                radius=float(payload["radius"]),
                influence=self.plan_cfg.influence_factor * float(payload["radius"]),
            )
        elif kind == "target_update":
            self.plan_cfg = replace(
                self.plan_cfg, tip_target=(float(payload["x"]), float(payload["y"]))
            )
        else:
            action = payload["action"]
            if action == "start":
                self.paused = False
            elif action == "pause":
                self.paused = True
            else:
                self.reset()

    def drain(self, messages):
        for msg in messages:
            self.apply(msg)

    def tick(self) -> dict:
        """Advance one control cycle (unless paused) and snapshot state."""
        if self._hold_one_tick:
            self._hold_one_tick = False
            return self.snapshot()
        if not self.paused:
            if self.obstacle is not None and self.step_index % self.replan_every == 0:
                try:
                    plan = plan_shape(self.state.q, self.obstacle, self.plan_cfg, self.geo)
                    self.target, self.target_q = plan.shape, plan.q
                    self.plan_failed = False
                except InfeasiblePlanError:
                    self.plan_failed = True
            obs = observe(self.state, self.profile)
            res = control_cycle(
                self.params, obs, self.state.q, self.dq_hist, self.target,
                self.ctrl_cfg, self.geo,
            )
            self.state = plant_step(self.state, res.dq, self.profile, self.geo)
            self.dq_hist = res.dq
            self.step_index += 1
            self.last_beta = res.beta
            self.last_fault = res.fault
        return self.snapshot()

    def snapshot(self) -> dict:
        shape = self.state.shape
        tip_goal = np.asarray(self.plan_cfg.tip_target, dtype=float)
        clearance = None
        obstacle = None
        if self.obstacle is not None:
            clearance = float(self.obstacle.clearance(envelope_points(shape)).min())
            obstacle = {
                "x": self.obstacle.center[0],
                "y": self.obstacle.center[1],
                "radius": self.obstacle.radius,
            }
        return {
            "step": self.step_index,
            "q": [float(v) for v in self.state.q],
            "nodes": [[float(v) for v in row] for row in shape.world],
            "tip_error": float(np.linalg.norm(shape.world[-1, :2] - tip_goal)),
            "beta": [[float(v) for v in row] for row in self.last_beta],
            "min_clearance": clearance,
            "obstacle": obstacle,
            "paused": self.paused,
            "plan_failed": self.plan_failed,
            "fault": self.last_fault,
        }


def session_from_config(cfg: AppConfig, params: NetworkParams | None, replan_every: int = 5) -> ServiceSession:
    return ServiceSession(
        params, cfg.disturbance, cfg.planner, cfg.controller, cfg.geometry,
        replan_every=replan_every,
    )


def broadcast_decimation(settings: ServiceSettings) -> int:
    """Send every k-th tick so the client rate never exceeds broadcast_hz."""
    return max(1, math.ceil(settings.tick_hz / settings.broadcast_hz))


def _forces_broadcast(pending) -> bool:
    # A tick that processed a reset broadcasts unconditionally so the
    # restored step-0 posture is always visible on the wire.
    return any(
        m["kind"] == "session_control" and m["payload"].get("action") == "reset"
        for m in pending
    )


def _wire_message(kind: str, seq: int, t_ms: int, payload: dict) -> str:
    return json.dumps(
        {"kind": kind, "seq": seq, "t": t_ms, "payload": payload},
        separators=(",", ":"),
    )


class _Client:
    """Per-connection outbound queue; one writer assigns sequence numbers."""

    def __init__(self, ws):
        self.ws = ws
        self.queue: asyncio.Queue = asyncio.Queue()
        self.seq = 0

    async def writer(self):
        while True:
            kind, t_ms, payload = await self.queue.get()
            await self.ws.send(_wire_message(kind, self.seq, t_ms, payload))
            self.seq += 1

    def push(self, kind: str, t_ms: int, payload: dict):
        self.queue.put_nowait((kind, t_ms, payload))


class LiveService:
    """WebSocket shell around a ServiceSession."""

    def __init__(
        self,
        session: ServiceSession,
        settings: ServiceSettings,
        record_path: str | None = None,
    ):
        self.session = session
        self.settings = settings
        self.record_path = record_path
        self.mailbox: list = []
        self.clients: set[_Client] = set()
        self.tick_index = 0
        self.broadcast_seq = 0
        self._record_fh = None

    def _t_ms(self, tick: int) -> int:
        return round(tick * 1000.0 / self.settings.tick_hz)

    def _record(self, direction: str, tick: int, msg: dict):
        if self._record_fh is not None:
            self._record_fh.write(
                json.dumps({"dir": direction, "tick": tick, "msg": msg}, separators=(",", ":"))
                + "\n"
            )

    async def _handle_client(self, ws):
        client = _Client(ws)
        client.push("hello", self._t_ms(self.tick_index), {
            "schema_version": SCHEMA_VERSION,
            "n_segments": self.session.geo.n_segments,
            "tick_hz": self.settings.tick_hz,
            "broadcast_every": broadcast_decimation(self.settings),
        })
        writer = asyncio.ensure_future(client.writer())
        self.clients.add(client)
        try:
            async for raw in ws:
                msg, reason = validate_client_message(raw)
                if msg is None:
                    client.push("fault", self._t_ms(self.tick_index), {"message": reason})
                else:
                    self.mailbox.append(msg)
        finally:
            self.clients.discard(client)
            writer.cancel()

    def _run_tick(self):
        """Drain the mailbox, step the session, fan out one snapshot."""
        pending, self.mailbox = self.mailbox, []
        for msg in pending:
            self._record("in", self.tick_index, msg)
        self.session.drain(pending)
        payload = self.session.tick()
        t_ms = self._t_ms(self.tick_index)
        if _forces_broadcast(pending) or self.tick_index % broadcast_decimation(self.settings) == 0:
            self._record(
                "out", self.tick_index,
                {"kind": "state", "seq": self.broadcast_seq, "t": t_ms, "payload": payload},
            )
            self.broadcast_seq += 1
            for client in self.clients:
                client.push("state", t_ms, payload)
        self.tick_index += 1

    async def run(
        self,
        host: str = "127.0.0.1",
        port: int | None = None,
        *,
        ready: asyncio.Future | None = None,
        stop: asyncio.Event | None = None,
        max_ticks: int | None = None,
    ):
        from websockets.asyncio.server import serve as ws_serve

        if port is None:
            port = self.settings.port
        if self.record_path is not None:
            self._record_fh = open(self.record_path, "w")
        try:
            async with ws_serve(self._handle_client, host, port) as server:
                bound = server.sockets[0].getsockname()[1]
                if ready is not None and not ready.done():
                    ready.set_result((host, bound))
                loop = asyncio.get_running_loop()
                period = 1.0 / self.settings.tick_hz
                next_tick = loop.time() + period
                while True:
                    if stop is not None and stop.is_set():
                        break
                    if max_ticks is not None and self.tick_index >= max_ticks:
                        break
                    self._run_tick()
                    now = loop.time()
                    if now > next_tick + period:
                        log.warning(
                            "tick %d overran by %.1f ms",
                            self.tick_index - 1, (now - next_tick) * 1000.0,
                        )
                    await asyncio.sleep(max(0.0, next_tick - now))
                    next_tick = max(next_tick + period, loop.time())
        finally:
            if self._record_fh is not None:
                self._record_fh.close()
                self._record_fh = None


def serve(
    cfg: AppConfig,
    params: NetworkParams | None,
    *,
    host: str = "127.0.0.1",
    port: int | None = None,
    replan_every: int = 5,
    record_path: str | None = None,
    max_ticks: int | None = None,
):
    """Blocking entry point: host one live session until interrupted."""
    session = session_from_config(cfg, params, replan_every=replan_every)
    service = LiveService(session, cfg.service, record_path=record_path)
    asyncio.run(service.run(host=host, port=port, max_ticks=max_ticks))


def load_recording(path: str) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_recording(
    record_path: str,
    params: NetworkParams | None,
    profile: DisturbanceProfile,
    plan_cfg: PlanConfig,
    ctrl_cfg: ControllerConfig,
    geo: RobotGeometry,
    settings: ServiceSettings,
    replan_every: int = 5,
) -> list:
    """Re-drive a recorded input schedule and return the state stream.

    The result should equal the recording's own out-stream line for
    line; compare with ``ndjson`` equality to audit a session.
    """
    rows = load_recording(record_path)
    inputs: dict[int, list] = {}
    last_tick = -1
    for row in rows:
        last_tick = max(last_tick, int(row["tick"]))
        if row["dir"] == "in":
            inputs.setdefault(int(row["tick"]), []).append(row["msg"])

    session = ServiceSession(
        params, profile, plan_cfg, ctrl_cfg, geo, replan_every=replan_every
    )
    decim = broadcast_decimation(settings)
    out = []
    seq = 0
    for tick in range(last_tick + 1):
        pending = inputs.get(tick, [])
        session.drain(pending)
        payload = session.tick()
        if _forces_broadcast(pending) or tick % decim == 0:
            out.append({
                "kind": "state", "seq": seq,
                "t": round(tick * 1000.0 / settings.tick_hz), "payload": payload,
            })
            seq += 1
    return out
