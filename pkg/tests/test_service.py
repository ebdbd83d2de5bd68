import json
import time
from pathlib import Path

import pytest
from starlette.testclient import TestClient

from cobotcell import ADAPTIVE, POLICY_IDS, Engine, HumanTrace, TaskConfig
from cobotcell.config import AppConfig
from cobotcell.human import PopulationModel
from cobotcell.policies import SensorPolicyConfig, TimingPolicyConfig
from cobotcell.service import create_app

# A deciseconds-scale task so live sessions complete quickly: 2 cycles of
# 4 cubes, sensor trigger on the 2nd pick.
FAST_TASK = TaskConfig(cycles_total=2, cubes_b_per_cycle=4,
                       place_a_duration=0.04, handover_prep_duration=0.03,
                       secondary_unit_duration=0.05, buffer_capacity=2)


def fast_config(timeout=5.0):
    return AppConfig(
        task=FAST_TASK,
        population=PopulationModel(pop_mean_place_b=0.05, pop_sd=0.0,
                                   mean_place_a=0.04, fetch_reaction=0.01),
        timing=TimingPolicyConfig(interval=0.4),
        sensor=SensorPolicyConfig(trigger_pick_index=2),
        session_timeout=timeout,
    )


def recv(ws):
    return json.loads(ws.receive_text())


def recv_until(ws, *types, limit=60):
    """Collect frames until one of the wanted types arrives."""
    seen = []
    for _ in range(limit):
        frame = recv(ws)
        seen.append(frame)
        if frame["type"] in types:
            return frame, seen
    raise AssertionError(f"no {types} frame within {limit} messages: {seen}")


def drive_full_run(ws, policy, gap=0.012):
    """Scripted client: performs the whole task at a constant pace and
    returns every frame the server sent. Handovers may be presented early
    (mid-cycle), so they are matched by cycle index against everything
    received so far."""
    frames = []

    def send(obj):
        ws.send_text(json.dumps(obj))

    def pull(*types):
        frame, seen = recv_until(ws, *types)
        frames.extend(seen)
        return frame

    def wait_ready(cycle):
        while not any(f["type"] == "handover_ready" and f["cycle"] == cycle
                      for f in frames):
            frames.append(recv(ws))

    send({"type": "hello"})
    assert pull("state")["status"] == "waiting"

    send({"type": "start", "policy": policy})
    assert pull("state")["status"] == "running"

    task = FAST_TASK
    for cycle in range(task.cycles_total):
        wait_ready(cycle)
        time.sleep(gap)
        send({"type": "take_a"})
        assert "place_a" in pull("state")["awaiting"]
        time.sleep(gap)
        send({"type": "place_a"})
        pull("state")
        for _ in range(task.cubes_b_per_cycle):
            send({"type": "pick_b"})
            pull("state")
            time.sleep(gap)
            send({"type": "place_b"})
            pull("state")
    while not any(f["type"] == "run_complete" for f in frames):
        frames.append(recv(ws))
    final = next(f for f in frames if f["type"] == "run_complete")
    return frames, final


@pytest.fixture()
def app_client(tmp_path):
    cfg = fast_config()
    app = create_app(cfg, out_dir=tmp_path)
    with TestClient(app) as client:
        yield client, tmp_path


def test_health(app_client):
    client, _ = app_client
    assert client.get("/healthz").json() == {"status": "ok"}


def test_hello_gives_waiting_state(app_client):
    client, _ = app_client
    with client.websocket_connect("/ws/session") as ws:
        ws.send_text(json.dumps({"type": "hello"}))
        frame = recv(ws)
        assert frame["type"] == "state"
        assert frame["status"] == "waiting"
        assert frame["t_ms"] == 0


@pytest.mark.parametrize("policy", POLICY_IDS)
def test_full_live_run_per_policy(app_client, policy):
    client, out_dir = app_client
    with client.websocket_connect("/ws/session") as ws:
        frames, final = drive_full_run(ws, policy)
    assert final["summary"]["policy_id"] == policy
    assert final["summary"]["total_time_ms"] > 0
    readies = [f for f in frames if f["type"] == "handover_ready"]
    assert len(readies) == FAST_TASK.cycles_total
    cycles = [f for f in frames if f["type"] == "cycle_complete"]
    assert len(cycles) == FAST_TASK.cycles_total
    # Every server frame carries the session-relative clock.
    assert all("t_ms" in f for f in frames)
    if policy == ADAPTIVE:
        assert any(f["type"] == "prediction" and len(f["weights"]) == 6
                   for f in frames)
    # Completed sessions persist record, trace and event log.
    sess_dirs = list(out_dir.iterdir())
    assert len(sess_dirs) == 1
    names = {p.name for p in sess_dirs[0].iterdir()}
    assert names == {"run_record.json", "trace.json", "events.jsonl"}


def test_sensor_handover_follows_trigger_pick(app_client):
    client, _ = app_client
    # A slower pace leaves the scaled robot the same proportional slack the
    # full-size task has between the trigger pick and the cycle end.
    with client.websocket_connect("/ws/session") as ws:
        frames, _ = drive_full_run(ws, "sensor", gap=0.035)
    # The second handover_ready must arrive while cycle 0 is still being
    # assembled (triggered by its 2nd pick, served before its last place).
    readies = [f for f in frames if f["type"] == "handover_ready"]
    first_cycle_end = next(f for f in frames if f["type"] == "cycle_complete")
    assert readies[1]["t_ms"] <= first_cycle_end["t_ms"]


def test_protocol_order_violations_rejected(app_client):
    client, _ = app_client
    with client.websocket_connect("/ws/session") as ws:
        ws.send_text(json.dumps({"type": "pick_b"}))
        frame = recv(ws)
        assert frame["type"] == "error" and frame["code"] == "order"

        ws.send_text(json.dumps({"type": "start", "policy": "sensor"}))
        recv_until(ws, "state")
        # Cube A not yet presented or taken: picking B is illegal.
        ws.send_text(json.dumps({"type": "pick_b"}))
        frame, _ = recv_until(ws, "error")
        assert frame["code"] == "order"

        recv_until(ws, "handover_ready")
        ws.send_text(json.dumps({"type": "take_a"}))
        recv_until(ws, "state")
        ws.send_text(json.dumps({"type": "place_a"}))
        recv_until(ws, "state")
        # pick twice without placing
        ws.send_text(json.dumps({"type": "pick_b"}))
        recv_until(ws, "state")
        ws.send_text(json.dumps({"type": "pick_b"}))
        frame, _ = recv_until(ws, "error")
        assert frame["code"] == "order"


def test_malformed_and_unknown_frames(app_client):
    client, _ = app_client
    with client.websocket_connect("/ws/session") as ws:
        ws.send_text("this is not json")
        assert recv(ws)["code"] == "malformed"
        ws.send_text(json.dumps({"type": "warp_drive"}))
        assert recv(ws)["code"] == "type"
        ws.send_text(json.dumps({"type": "start", "policy": "psychic"}))
        assert recv(ws)["code"] == "type"


def test_inactivity_timeout_aborts(tmp_path):
    app = create_app(fast_config(timeout=0.25), out_dir=tmp_path)
    with TestClient(app) as client:
        with client.websocket_connect("/ws/session") as ws:
            ws.send_text(json.dumps({"type": "start", "policy": "timing"}))
            recv_until(ws, "state")
            frame, _ = recv_until(ws, "error", limit=200)
            assert frame["code"] == "timeout"
    record = json.loads(
        next(tmp_path.iterdir()).joinpath("run_record.json").read_text())
    assert record["aborted"] is True


def test_live_session_replays_through_batch_engine(app_client):
    """The recorded trace of a live run reproduces the live metrics in the
    batch engine within 1 ms."""
    client, out_dir = app_client
    with client.websocket_connect("/ws/session") as ws:
        _, final = drive_full_run(ws, "sensor")
    sess_dir = next(out_dir.iterdir())
    trace = HumanTrace.from_json((sess_dir / "trace.json").read_text())
    live = json.loads((sess_dir / "run_record.json").read_text())

    cfg = fast_config().engine_config("sensor")
    replay = Engine(cfg, trace).run()
    assert abs(round(replay.total_time * 1000) - live["total_time_ms"]) <= 1
    assert abs(round(replay.human_idle * 1000) - live["human_idle_ms"]) <= 1
    assert abs(round(replay.robot_idle * 1000) - live["robot_idle_ms"]) <= 1
