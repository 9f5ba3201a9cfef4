"""Live-session core and WebSocket shell tests."""

import asyncio
import json

import numpy as np
import pytest

from rackarm.config import ServiceSettings, from_dict
from rackarm.control import ControllerConfig
from rackarm.errors import InvalidInputError
from rackarm.geometry import default_geometry
from rackarm.planner import PlanConfig, avoidance_session
from rackarm.plant import DisturbanceProfile
from rackarm.service import (
    LiveService,
    ServiceSession,
    broadcast_decimation,
    load_recording,
    replay_recording,
    session_from_config,
    validate_client_message,
)
from rackarm import network as net

GEO = default_geometry()
N = GEO.n_segments
PROFILE = DisturbanceProfile(
    coupling_gain=0.2, friction_scale=1.5, hysteresis_decay=0.2, noise_std=0.2, seed=5
)
PLAN = PlanConfig(tip_target=(0.0, 500.0))
PHY = ControllerConfig(force_beta=1.0, dt_delay=0.0)
FAST = ServiceSettings(port=8731, tick_hz=200.0, broadcast_hz=100.0)


def obstacle_msg(x, y, radius=12.0):
    return {"kind": "obstacle_update", "payload": {"x": x, "y": y, "radius": radius}}


def control_msg(action):
    return {"kind": "session_control", "payload": {"action": action}}


def make_session(**kw):
    kw.setdefault("replan_every", 4)
    return ServiceSession(None, PROFILE, PLAN, PHY, GEO, **kw)


class TestValidateClientMessage:
    @pytest.mark.parametrize(
        "text",
        [
            json.dumps(obstacle_msg(10.0, 200.0)),
            json.dumps({"kind": "target_update", "payload": {"x": 5.0, "y": 400.0}}),
            json.dumps(control_msg("start")),
            json.dumps(control_msg("pause")),
            json.dumps(control_msg("reset")),
        ],
    )
    def test_accepts_well_formed(self, text):
        msg, reason = validate_client_message(text)
        assert reason is None
        assert msg["kind"] in ("obstacle_update", "target_update", "session_control")

    @pytest.mark.parametrize(
        "text",
        [
            "not json at all",
            json.dumps([1, 2, 3]),
            json.dumps({"kind": "state", "payload": {}}),
            json.dumps({"kind": "obstacle_update"}),
            json.dumps({"kind": "obstacle_update", "payload": {"x": 1.0, "y": 2.0}}),
            json.dumps({"kind": "obstacle_update", "payload": {"x": 1.0, "y": 2.0, "radius": 0.0}}),
            json.dumps({"kind": "obstacle_update", "payload": {"x": None, "y": 2.0, "radius": 3.0}}),
            json.dumps({"kind": "target_update", "payload": {"x": float("nan"), "y": 0.0}})
            .replace("NaN", "1e999"),
            json.dumps({"kind": "session_control", "payload": {"action": "stop"}}),
        ],
    )
    def test_rejects_malformed(self, text):
        msg, reason = validate_client_message(text)
        assert msg is None
        assert isinstance(reason, str) and reason


class TestServiceSession:
    def test_snapshot_fields(self):
        session = make_session()
        snap = session.tick()
        assert snap["step"] == 1
        assert len(snap["q"]) == GEO.n_joints
        assert np.asarray(snap["nodes"]).shape == (N, 3)
        assert np.asarray(snap["beta"]).shape == (N, 3)
        assert snap["min_clearance"] is None and snap["obstacle"] is None
        assert snap["paused"] is False and snap["fault"] is None

    def test_reset_returns_to_nominal(self):
        session = make_session()
        session.drain([obstacle_msg(40.0, 250.0)])
        for _ in range(6):
            session.tick()
        session.drain([control_msg("reset")])
        held = session.tick()  # the reset tick shows the restored posture
        assert held["step"] == 0
        assert held["q"] == [100.0] * GEO.n_joints
        assert held["obstacle"] is None
        assert session.tick()["step"] == 1

    def test_pause_freezes_and_start_resumes(self):
        session = make_session()
        session.tick()
        session.drain([control_msg("pause")])
        a = session.tick()
        b = session.tick()
        assert a["step"] == b["step"] == 1
        assert a["q"] == b["q"]
        assert a["paused"] is True
        session.drain([control_msg("start")])
        c = session.tick()
        assert c["step"] == 2 and c["paused"] is False

    def test_last_writer_wins_per_tick(self):
        full = make_session()
        full.drain([obstacle_msg(10.0, 200.0), obstacle_msg(90.0, 300.0), obstacle_msg(55.0, 250.0)])
        only_last = make_session()
        only_last.drain([obstacle_msg(55.0, 250.0)])
        for _ in range(5):
            assert full.tick() == only_last.tick()

    def test_target_update_moves_the_pin(self):
        session = make_session()
        session.drain([{"kind": "target_update", "payload": {"x": 30.0, "y": 460.0}}])
        snap = session.snapshot()
        tip = np.asarray(snap["nodes"])[-1, :2]
        assert snap["tip_error"] == pytest.approx(
            float(np.linalg.norm(tip - [30.0, 460.0])), abs=1e-9
        )

    def test_matches_headless_session_runner(self):
        # Driving the tick core with one obstacle frame every
        # replan_every ticks must reproduce the file-driven runner
        # bit for bit: same plant noise, same plans, same commands.
        frames, per = 6, 4
        xs = np.linspace(100.0, 40.0, frames)
        trace = np.column_stack(
            [np.arange(frames) * 0.1, xs, np.full(frames, 250.0), np.full(frames, 15.0)]
        )
        log = avoidance_session(None, PROFILE, trace, PLAN, PHY, GEO, steps_per_frame=per)

        session = make_session(replan_every=per)
        qs, tips, clears = [], [], []
        for f in range(frames):
            session.drain([obstacle_msg(float(xs[f]), 250.0, 15.0)])
            for _ in range(per):
                snap = session.tick()
                qs.append(snap["q"])
                tips.append(snap["tip_error"])
                clears.append(snap["min_clearance"])
        assert np.array_equal(np.array(qs), log.q)
        assert np.array_equal(np.array(tips), log.tip_error)
        assert np.array_equal(np.array(clears), log.min_clearance)

    def test_same_schedule_same_stream(self):
        def stream():
            session = make_session()
            out = []
            for t in range(12):
                if t == 3:
                    session.drain([obstacle_msg(60.0, 250.0)])
                if t == 7:
                    session.drain([control_msg("pause")])
                if t == 9:
                    session.drain([control_msg("start")])
                out.append(json.dumps(session.tick(), sort_keys=True))
            return out

        assert stream() == stream()

    def test_gated_session_needs_parameters(self):
        with pytest.raises(InvalidInputError):
            ServiceSession(None, PROFILE, PLAN, ControllerConfig(dt_delay=0.0), GEO)

    def test_gated_session_runs_with_parameters(self):
        params = net.init_params(2, N, hidden=16, gru_hidden=8, head_hidden=8)
        session = ServiceSession(
            params, PROFILE, PLAN, ControllerConfig(dt_delay=0.0), GEO, replan_every=4
        )
        snap = session.tick()
        beta = np.asarray(snap["beta"])
        assert np.all((beta > 0) & (beta < 1))

    def test_bad_replan_interval(self):
        with pytest.raises(InvalidInputError):
            make_session(replan_every=0)

    def test_session_from_config(self):
        cfg = from_dict({"controller": {"force_beta": 1.0, "dt_delay": 0.0}})
        session = session_from_config(cfg, None)
        assert session.tick()["step"] == 1


class TestBroadcastDecimation:
    def test_half_rate(self):
        assert broadcast_decimation(ServiceSettings(tick_hz=50.0, broadcast_hz=30.0)) == 2

    def test_equal_rates(self):
        assert broadcast_decimation(ServiceSettings(tick_hz=50.0, broadcast_hz=50.0)) == 1


async def _run_service(test_body, record_path=None, session=None):
    """Spin a service on an ephemeral port, run the client body, stop."""
    session = session or make_session()
    service = LiveService(session, FAST, record_path=record_path)
    loop = asyncio.get_running_loop()
    ready: asyncio.Future = loop.create_future()
    stop = asyncio.Event()
    task = asyncio.create_task(service.run(port=0, ready=ready, stop=stop))
    host, port = await asyncio.wait_for(ready, 5)
    try:
        await asyncio.wait_for(test_body(f"ws://{host}:{port}"), 20)
    finally:
        stop.set()
        await task


class TestLiveService:
    def test_hello_then_states_with_increasing_seq(self):
        async def body(uri):
            from websockets.asyncio.client import connect

            async with connect(uri) as ws:
                hello = json.loads(await ws.recv())
                assert hello["kind"] == "hello"
                assert hello["seq"] == 0
                assert hello["payload"]["schema_version"] == 1
                assert hello["payload"]["n_segments"] == N
                seqs = [hello["seq"]]
                for _ in range(5):
                    msg = json.loads(await ws.recv())
                    assert msg["kind"] == "state"
                    seqs.append(msg["seq"])
                assert all(b > a for a, b in zip(seqs, seqs[1:]))

        asyncio.run(_run_service(body))

    def test_malformed_frame_faults_but_connection_survives(self):
        async def body(uri):
            from websockets.asyncio.client import connect

            async with connect(uri) as ws:
                await ws.recv()  # hello
                await ws.send("garbage")
                fault = None
                states_after = 0
                while fault is None or states_after < 2:
                    msg = json.loads(await ws.recv())
                    if msg["kind"] == "fault":
                        fault = msg["payload"]["message"]
                    elif fault is not None:
                        states_after += 1
                assert "JSON" in fault

        asyncio.run(_run_service(body))

    def test_obstacle_update_reaches_the_state_stream(self):
        async def body(uri):
            from websockets.asyncio.client import connect

            async with connect(uri) as ws:
                await ws.recv()
                await ws.send(json.dumps(obstacle_msg(60.0, 250.0, 12.0)))
                while True:
                    msg = json.loads(await ws.recv())
                    if msg["kind"] == "state" and msg["payload"]["obstacle"] is not None:
                        assert msg["payload"]["obstacle"] == {"x": 60.0, "y": 250.0, "radius": 12.0}
                        assert msg["payload"]["min_clearance"] > 0
                        return

        asyncio.run(_run_service(body))

    def test_reset_over_the_wire(self):
        async def body(uri):
            from websockets.asyncio.client import connect

            async with connect(uri) as ws:
                await ws.recv()  # hello
                await ws.send(json.dumps(obstacle_msg(25.0, 250.0, 12.0)))
                last_step = 0
                while True:  # wait until the arm has visibly deformed
                    msg = json.loads(await ws.recv())
                    if msg["kind"] != "state":
                        continue
                    last_step = msg["payload"]["step"]
                    if max(abs(v - 100.0) for v in msg["payload"]["q"]) > 3.0:
                        break
                await ws.send(json.dumps(control_msg("reset")))
                while True:
                    msg = json.loads(await ws.recv())
                    if msg["kind"] != "state":
                        continue
                    payload = msg["payload"]
                    if payload["step"] >= last_step:
                        continue
                    # the first post-reset state is the restored posture
                    assert payload["step"] == 0
                    assert payload["q"] == [100.0] * GEO.n_joints
                    assert payload["obstacle"] is None
                    return

        asyncio.run(_run_service(body))

    def test_two_clients_get_independent_sequences(self):
        async def body(uri):
            from websockets.asyncio.client import connect

            async with connect(uri) as a, connect(uri) as b:
                ha = json.loads(await a.recv())
                hb = json.loads(await b.recv())
                assert ha["seq"] == 0 and hb["seq"] == 0
                sa = json.loads(await a.recv())
                sb = json.loads(await b.recv())
                assert sa["kind"] == "state" and sb["kind"] == "state"

        asyncio.run(_run_service(body))

    def test_record_replay_reproduces_state_stream(self, tmp_path):
        record = str(tmp_path / "session.ndjson")

        async def body(uri):
            from websockets.asyncio.client import connect

            async with connect(uri) as ws:
                await ws.recv()
                await ws.send(json.dumps(obstacle_msg(70.0, 250.0, 12.0)))
                for _ in range(8):
                    await ws.recv()
                await ws.send(json.dumps(obstacle_msg(45.0, 255.0, 12.0)))
                for _ in range(8):
                    await ws.recv()
                await ws.send(json.dumps(control_msg("reset")))
                for _ in range(4):
                    await ws.recv()

        asyncio.run(_run_service(body, record_path=record))

        rows = load_recording(record)
        rec_out = [r["msg"] for r in rows if r["dir"] == "out"]
        rec_in = [r for r in rows if r["dir"] == "in"]
        assert len(rec_out) >= 8 and len(rec_in) == 3

        replayed = replay_recording(record, None, PROFILE, PLAN, PHY, GEO, FAST, replan_every=4)
        assert len(replayed) >= len(rec_out)
        assert replayed[: len(rec_out)] == rec_out
