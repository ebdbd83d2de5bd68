"""Live-session server: a real person drives the human side of the cell
over a JSON websocket while the robot runs the chosen policy.

Timing is server-authoritative: human actions are stamped with the server
receipt time, robot events carry exact schedule arithmetic, and every
outbound frame carries the session-relative time in milliseconds. A
completed session persists its run record, recorded human trace and event
log as flat files, so any live run can be replayed through the batch
engine.
"""

from __future__ import annotations

import asyncio
import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import model
from .config import AppConfig
from .engine import ADAPTIVE, POLICY_IDS, Engine, ProtocolError
from .model import MS, SimEvent

CLIENT_ACTIONS = ("pick_b", "place_b", "take_a", "place_a")

WAITING = "waiting"
RUNNING = "running"
COMPLETE = "complete"
ABORTED = "aborted"


def _ms(t: float) -> int:
    return round(t * MS)


@dataclass
class LiveSession:
    """One websocket session: a live engine plus wall-clock bookkeeping."""

    config: AppConfig
    out_dir: Path
    session_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    status: str = WAITING
    policy_id: Optional[str] = None
    engine: Optional[Engine] = None
    started_at: Optional[float] = None      # monotonic epoch of run start
    last_client_event: float = field(default_factory=time.monotonic)
    _sent_predictions: int = 0

    def session_now(self) -> float:
        if self.started_at is None:
            return 0.0
        return time.monotonic() - self.started_at

    def start(self, policy: str) -> None:
        if self.status != WAITING:
            raise ProtocolError("order", "session already started")
        if policy not in POLICY_IDS:
            raise ProtocolError("type", f"unknown policy {policy!r}")
        self.policy_id = policy
        self.engine = Engine(self.config.engine_config(policy),
                             subject_id=f"live-{self.session_id}")
        self.started_at = time.monotonic()
        self.status = RUNNING

    def state_message(self) -> dict:
        t_ms = _ms(self.engine.now) if self.engine else 0
        return {
            "type": "state",
            "t_ms": t_ms,
            "status": self.status,
            "policy": self.policy_id,
            "robot_mode": self.engine.robot_mode if self.engine else None,
            "cycle": self.engine.cycle if self.engine else 0,
            "n_placed": self.engine.placed_in_cycle if self.engine else 0,
            "buffer_level": (self.engine.buffer_level
                             if self.engine else None),
            "awaiting": self.engine.legal_actions() if self.engine else [],
            "cycles_total": self.config.task.cycles_total,
            "cubes_per_cycle": self.config.task.cubes_b_per_cycle,
            "buffer_capacity": self.config.task.buffer_capacity,
        }

    def new_predictions(self) -> list[dict]:
        if self.engine is None or self.engine.predictor is None:
            return []
        out = []
        trace = self.engine._prediction_trace
        for p in trace[self._sent_predictions:]:
            out.append({"type": "prediction", "t_ms": _ms(p.t), "n": p.n,
                        "f_ms": _ms(p.f), "weights": list(p.weights)})
        self._sent_predictions = len(trace)
        return out

    def persist(self) -> Path:
        rec = self.engine.record()
        sess_dir = self.out_dir / self.session_id
        sess_dir.mkdir(parents=True, exist_ok=True)
        (sess_dir / "run_record.json").write_text(rec.to_json())
        (sess_dir / "trace.json").write_text(
            self.engine.recorded_trace().to_json())
        (sess_dir / "events.jsonl").write_text(
            model.events_to_jsonl(rec.event_log))
        return sess_dir


def _cycle_metrics(log: list[SimEvent], cycle: int) -> dict:
    ready = take = end = None
    prior_ready = 0.0
    for e in log:
        if e.cycle == cycle:
            if e.kind == model.HANDOVER_READY:
                ready = e.t
            elif e.kind == model.TAKE_A:
                take = e.t
            elif e.kind == model.CYCLE_END:
                end = e.t
        if e.kind == model.CYCLE_END and e.cycle == cycle - 1:
            prior_ready = e.t
    return {
        "cycle": cycle,
        "assembly_ms": _ms(end - take) if end and take else None,
        "human_idle_ms": _ms(max(0.0, ready - prior_ready))
        if ready is not None else None,
        "robot_idle_ms": _ms(take - ready)
        if take is not None and ready is not None else None,
    }


def _event_frames(session: LiveSession, events: list[SimEvent]) -> list[dict]:
    """Outbound frames triggered by newly logged engine events."""
    frames: list[dict] = []
    for e in events:
        if e.kind == model.HANDOVER_READY:
            frames.append({"type": "handover_ready", "t_ms": e.t_ms,
                           "cycle": e.cycle})
        elif e.kind == model.CYCLE_END:
            frames.append({
                "type": "cycle_complete", "t_ms": e.t_ms,
                "metrics": _cycle_metrics(session.engine._log, e.cycle)})
    frames.extend(session.new_predictions())
    frames.sort(key=lambda f: f["t_ms"])
    return frames


def _run_complete_frame(session: LiveSession) -> dict:
    rec = session.engine.record()
    return {
        "type": "run_complete",
        "t_ms": _ms(rec.total_time),
        "summary": {
            "policy_id": rec.policy_id,
            "subject_id": rec.subject_id,
            "total_time_ms": _ms(rec.total_time),
            "human_idle_ms": _ms(rec.human_idle),
            "robot_idle_ms": _ms(rec.robot_idle),
            "total_idle_ms": _ms(rec.total_idle),
            "per_cycle": [
                {
                    "cycle_index": c.cycle_index,
                    "assembly_ms": _ms(c.assembly_time),
                    "human_idle_ms": _ms(c.human_idle),
                    "robot_idle_ms": _ms(c.robot_idle),
                }
                for c in rec.per_cycle
            ],
        },
    }


def create_app(config: Optional[AppConfig] = None,
               out_dir: Optional[Path] = None) -> FastAPI:
    config = config or AppConfig()
    config.validate()
    out_dir = Path(out_dir) if out_dir else Path(config.session_dir)

    app = FastAPI(title="cobotcell live cell")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.websocket("/ws/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        session = LiveSession(config=config, out_dir=out_dir)
        lock = asyncio.Lock()
        pump_task: Optional[asyncio.Task] = None

        async def send(frame: dict) -> None:
            await ws.send_text(json.dumps(frame, separators=(",", ":")))

        async def finish_if_done() -> bool:
            if session.engine is not None and session.engine.finished \
                    and session.status == RUNNING:
                session.status = COMPLETE
                await send(_run_complete_frame(session))
                session.persist()
                return True
            return False

        async def pump() -> None:
            # Fire robot events (prep completions, wakes) at their logical
            # times even while the client is silent.
            try:
                while session.status == RUNNING:
                    if (time.monotonic() - session.last_client_event
                            > config.session_timeout):
                        raise TimeoutError
                    async with lock:
                        eng = session.engine
                        nxt = eng.next_event_time()
                    if nxt is None:
                        await asyncio.sleep(0.01)
                        continue
                    delay = nxt - session.session_now()
                    if delay > 0:
                        await asyncio.sleep(min(delay, 0.05))
                        continue
                    async with lock:
                        events = eng.advance_to(nxt)
                        frames = _event_frames(session, events)
                    for f in frames:
                        await send(f)
                    await finish_if_done()
            except TimeoutError:
                async with lock:
                    session.status = ABORTED
                    session.engine.abort()
                    session.persist()
                await send({"type": "error", "code": "timeout",
                            "t_ms": _ms(session.session_now()),
                            "msg": "session aborted after inactivity"})
                await ws.close()
            except (WebSocketDisconnect, RuntimeError):
                pass

        try:
            while True:
                raw = await ws.receive_text()
                session.last_client_event = time.monotonic()
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict) or "type" not in msg:
                        raise ValueError
                except ValueError:
                    await send({"type": "error", "code": "malformed",
                                "t_ms": _ms(session.session_now()),
                                "msg": "frames must be JSON objects with a "
                                       "'type' field"})
                    continue

                kind = msg["type"]
                if kind == "hello":
                    await send(session.state_message())
                elif kind == "start":
                    try:
                        async with lock:
                            session.start(msg.get("policy", ""))
                    except ProtocolError as err:
                        await send({"type": "error", "code": err.code,
                                    "t_ms": _ms(session.session_now()),
                                    "msg": str(err)})
                        continue
                    pump_task = asyncio.create_task(pump())
                    await send(session.state_message())
                elif kind in CLIENT_ACTIONS:
                    if session.status != RUNNING:
                        await send({"type": "error", "code": "order",
                                    "t_ms": _ms(session.session_now()),
                                    "msg": "no active run"})
                        continue
                    t = session.session_now()
                    try:
                        async with lock:
                            events = session.engine.feed_human(
                                kind, round(t * MS) / MS)
                            frames = _event_frames(session, events)
                    except ProtocolError as err:
                        await send({"type": "error", "code": err.code,
                                    "t_ms": _ms(t), "msg": str(err)})
                        continue
                    for f in frames:
                        await send(f)
                    await send(session.state_message())
                    await finish_if_done()
                else:
                    await send({"type": "error", "code": "type",
                                "t_ms": _ms(session.session_now()),
                                "msg": f"unknown message type {kind!r}"})
        except WebSocketDisconnect:
            if session.status == RUNNING:
                session.status = ABORTED
                session.engine.abort()
                session.persist()
        finally:
            if pump_task is not None:
                pump_task.cancel()

    return app
