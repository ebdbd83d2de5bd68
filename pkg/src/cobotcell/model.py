"""Shared vocabulary for the assembly cell: task constants, event log, run metrics.

Times are float seconds internally and integer milliseconds on every
serialized surface, so logs and reports round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Iterable, Optional

MS = 1000


class ConfigError(ValueError):
    """A configuration value violates an invariant."""


class MalformedLogError(ValueError):
    """An event log is incomplete or out of order."""


# Event kinds, in the vocabulary used throughout the cell.
RUN_START = "run_start"
HANDOVER_PREP_START = "handover_prep_start"
HANDOVER_READY = "handover_ready"
TAKE_A = "take_a"
PLACE_A_DONE = "place_a_done"
PICK_B = "pick_b"
PLACE_B_DONE = "place_b_done"
SECONDARY_START = "secondary_start"
SECONDARY_DONE = "secondary_done"
ROBOT_WAIT_START = "robot_wait_start"
HUMAN_WAIT_START = "human_wait_start"
CYCLE_END = "cycle_end"
RUN_END = "run_end"

EVENT_KINDS = frozenset({
    RUN_START, HANDOVER_PREP_START, HANDOVER_READY, TAKE_A, PLACE_A_DONE,
    PICK_B, PLACE_B_DONE, SECONDARY_START, SECONDARY_DONE,
    ROBOT_WAIT_START, HUMAN_WAIT_START, CYCLE_END, RUN_END,
})

# Events on the robot's side of the cell sort before human events at equal
# timestamps; replay needs a total order.
ROBOT_RANK = 0
HUMAN_RANK = 1

_ROBOT_KINDS = frozenset({
    HANDOVER_PREP_START, HANDOVER_READY, SECONDARY_START, SECONDARY_DONE,
    ROBOT_WAIT_START,
})


def agent_rank(kind: str) -> int:
    return ROBOT_RANK if kind in _ROBOT_KINDS else HUMAN_RANK


@dataclass(frozen=True)
class TaskConfig:
    """Structural constants of the tower-assembly task."""

    cycles_total: int = 5
    cubes_b_per_cycle: int = 20
    place_a_duration: float = 4.0
    handover_prep_duration: float = 6.0
    secondary_unit_duration: float = 8.0
    buffer_capacity: int = 5

    def validate(self) -> None:
        validate_config(self)


def validate_config(cfg: TaskConfig) -> None:
    """Raise ConfigError naming the offending field if any invariant fails."""
    if cfg.cycles_total < 1:
        raise ConfigError("cycles_total must be >= 1")
    if cfg.cubes_b_per_cycle < 1:
        raise ConfigError("cubes_b_per_cycle must be >= 1")
    if cfg.buffer_capacity < 1:
        raise ConfigError("buffer_capacity must be >= 1")
    for name in ("place_a_duration", "handover_prep_duration",
                 "secondary_unit_duration"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be > 0")


@dataclass(frozen=True)
class SimEvent:
    """One timestamped cell event.

    ``t_ms`` is the canonical time; ``t`` is a derived convenience in
    seconds. ``detail`` carries a small scalar such as the B-cube index
    within the cycle or the buffer level after a refill.
    """

    t_ms: int
    seq: int
    kind: str
    cycle: int
    detail: Optional[int] = None

    @property
    def t(self) -> float:
        return self.t_ms / MS

    def to_json(self) -> str:
        return json.dumps(
            {"t_ms": self.t_ms, "seq": self.seq, "kind": self.kind,
             "cycle": self.cycle, "detail": self.detail},
            separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "SimEvent":
        d = json.loads(line)
        return cls(t_ms=d["t_ms"], seq=d["seq"], kind=d["kind"],
                   cycle=d["cycle"], detail=d.get("detail"))


def events_to_jsonl(events: Iterable[SimEvent]) -> str:
    return "".join(e.to_json() + "\n" for e in events)


def events_from_jsonl(text: str) -> list[SimEvent]:
    return [SimEvent.from_json(line) for line in text.splitlines() if line.strip()]


@dataclass
class CycleMetrics:
    cycle_index: int
    assembly_time: float
    human_idle: float
    robot_idle: float
    predicted_time: Optional[float] = None


@dataclass
class PredictionPoint:
    t: float
    n: int
    f: float
    weights: tuple[float, ...]


@dataclass
class RunRecord:
    """Metrics and full event log of one run."""

    policy_id: str
    subject_id: str
    seed: Optional[int]
    total_time: float
    human_idle: float
    robot_idle: float
    total_idle: float
    per_cycle: list[CycleMetrics]
    event_log: list[SimEvent]
    prediction_trace: list[PredictionPoint] = field(default_factory=list)
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "subject_id": self.subject_id,
            "seed": self.seed,
            "aborted": self.aborted,
            "total_time_ms": _ms(self.total_time),
            "human_idle_ms": _ms(self.human_idle),
            "robot_idle_ms": _ms(self.robot_idle),
            "total_idle_ms": _ms(self.total_idle),
            "per_cycle": [
                {
                    "cycle_index": c.cycle_index,
                    "assembly_time_ms": _ms(c.assembly_time),
                    "human_idle_ms": _ms(c.human_idle),
                    "robot_idle_ms": _ms(c.robot_idle),
                    "predicted_time_ms": (
                        None if c.predicted_time is None else _ms(c.predicted_time)),
                }
                for c in self.per_cycle
            ],
            "prediction_trace": [
                {"t_ms": _ms(p.t), "n": p.n, "f_ms": _ms(p.f),
                 "weights": list(p.weights)}
                for p in self.prediction_trace
            ],
            "event_log": [
                {"t_ms": e.t_ms, "seq": e.seq, "kind": e.kind,
                 "cycle": e.cycle, "detail": e.detail}
                for e in self.event_log
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _ms(seconds: float) -> int:
    return round(seconds * MS)


@dataclass
class _CycleTrace:
    ready_at: Optional[float] = None      # human became ready for cube A
    handover_ready: Optional[float] = None
    take_a: Optional[float] = None
    cycle_end: Optional[float] = None
    picks: int = 0
    places: int = 0
    first_pick: Optional[float] = None
    last_place: Optional[float] = None


def derive_metrics(event_log: list[SimEvent], cfg: TaskConfig) -> RunRecord:
    """Recompute run metrics from an event log alone.

    Human idle is, per cycle, the wait between the human becoming ready for
    cube A and the robot presenting it. Robot idle is the span the robot
    spends holding a presented cube until the human takes it (the robot is
    blocked in that posture). Both are recoverable from the primary events,
    so a serialized log reproduces stored metrics exactly.
    """
    validate_config(cfg)
    if not event_log:
        raise MalformedLogError("empty event log")
    if event_log[0].kind != RUN_START:
        raise MalformedLogError("log does not start with run_start")
    if event_log[-1].kind != RUN_END:
        raise MalformedLogError("log does not end with run_end")

    last_ms = -1
    last_seq = -1
    for e in event_log:
        if e.kind not in EVENT_KINDS:
            raise MalformedLogError(f"unknown event kind {e.kind!r}")
        if e.t_ms < last_ms or e.seq <= last_seq:
            raise MalformedLogError(
                f"event out of order at seq={e.seq} t_ms={e.t_ms}")
        last_ms, last_seq = e.t_ms, e.seq

    cycles: dict[int, _CycleTrace] = {
        k: _CycleTrace() for k in range(cfg.cycles_total)}
    run_end_t: Optional[float] = None
    pending_pick = False

    for e in event_log:
        if e.kind == RUN_START:
            cycles[0].ready_at = e.t
        elif e.kind == RUN_END:
            run_end_t = e.t
        elif e.kind in (HANDOVER_READY, TAKE_A, CYCLE_END, PICK_B, PLACE_B_DONE):
            if e.cycle not in cycles:
                raise MalformedLogError(f"event for unknown cycle {e.cycle}")
            c = cycles[e.cycle]
            if e.kind == HANDOVER_READY:
                if c.handover_ready is not None:
                    raise MalformedLogError(
                        f"duplicate handover_ready in cycle {e.cycle}")
                c.handover_ready = e.t
            elif e.kind == TAKE_A:
                c.take_a = e.t
            elif e.kind == PICK_B:
                if pending_pick:
                    raise MalformedLogError(
                        f"pick_b without matching place_b_done in cycle {e.cycle}")
                pending_pick = True
                c.picks += 1
                if c.first_pick is None:
                    c.first_pick = e.t
            elif e.kind == PLACE_B_DONE:
                if not pending_pick:
                    raise MalformedLogError(
                        f"place_b_done without pick_b in cycle {e.cycle}")
                pending_pick = False
                c.places += 1
                c.last_place = e.t
            elif e.kind == CYCLE_END:
                c.cycle_end = e.t
                if e.cycle + 1 in cycles:
                    cycles[e.cycle + 1].ready_at = e.t

    if run_end_t is None:
        raise MalformedLogError("missing run_end")

    per_cycle: list[CycleMetrics] = []
    human_idle = 0.0
    robot_idle = 0.0
    for k in range(cfg.cycles_total):
        c = cycles[k]
        if None in (c.ready_at, c.handover_ready, c.take_a, c.cycle_end):
            raise MalformedLogError(f"cycle {k} is incomplete")
        if c.picks != cfg.cubes_b_per_cycle or c.places != cfg.cubes_b_per_cycle:
            raise MalformedLogError(
                f"cycle {k} has {c.places} placements, expected "
                f"{cfg.cubes_b_per_cycle}")
        h_idle = max(0.0, c.handover_ready - c.ready_at)
        r_idle = c.take_a - c.handover_ready
        if r_idle < 0:
            raise MalformedLogError(f"take_a precedes handover_ready in cycle {k}")
        human_idle += h_idle
        robot_idle += r_idle
        per_cycle.append(CycleMetrics(
            cycle_index=k,
            assembly_time=c.cycle_end - c.take_a,
            human_idle=h_idle,
            robot_idle=r_idle,
        ))

    return RunRecord(
        policy_id="", subject_id="", seed=None,
        total_time=run_end_t,
        human_idle=human_idle,
        robot_idle=robot_idle,
        total_idle=human_idle + robot_idle,
        per_cycle=per_cycle,
        event_log=list(event_log),
    )
