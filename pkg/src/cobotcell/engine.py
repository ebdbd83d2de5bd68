"""Discrete-event loop coupling one human with the robot under a policy.

The queue orders events by (time, agent rank, insertion sequence) with the
robot winning ties, so replays are total-ordered and deterministic. Event
timestamps are quantized to milliseconds at log emission; all metrics are
derived from the quantized log.

The human is strictly sequential: wait for cube A, take it after a
reaction delay, place it, then place the cycle's B cubes back to back.
The policies differ only in when the robot stops secondary work, prepares
and presents cube A:

* timing:   presentation targeted at k * interval, open loop; secondary
            units are fitted into the window before each scheduled prep;
* sensor:   purely reactive; after a handover it restores the buffer and
            then stands by for the trigger pick, and the in-flight
            secondary unit always completes before prep starts;
* adaptive: at each cycle start the full-cycle forecast fixes a planned
            presentation time; secondary units are fitted into the
            predicted slack and prep starts at the planned instant (or
            immediately, should the human finish first).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Union

from . import model
from .model import (
    HUMAN_RANK, MS, ROBOT_RANK, RunRecord, SimEvent, TaskConfig,
)
from .human import HumanTrace
from .policies import (
    Action, AdaptiveConfig, PredictorState, SensorPolicyConfig,
    TimingPolicyConfig, adaptive_schedule, end_of_cycle_repair,
    observe_placement, predict_remaining, sensor_on_pick, start_cycle,
    timing_schedule,
)

TIMING = "timing"
SENSOR = "sensor"
ADAPTIVE = "adaptive"
POLICY_IDS = (TIMING, SENSOR, ADAPTIVE)

PolicyConfig = Union[TimingPolicyConfig, SensorPolicyConfig, AdaptiveConfig]


class SimulationError(RuntimeError):
    pass


class ProtocolError(ValueError):
    """A live human event arrived out of order."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class EngineConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    policy_id: str = SENSOR
    timing: TimingPolicyConfig = field(default_factory=TimingPolicyConfig)
    sensor: SensorPolicyConfig = field(default_factory=SensorPolicyConfig)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    population_mean_place_b: float = 2.8
    fetch_reaction: float = 1.0
    initial_buffer: Optional[int] = None  # None: start full

    def validate(self) -> None:
        self.task.validate()
        if self.policy_id not in POLICY_IDS:
            raise model.ConfigError(f"unknown policy {self.policy_id!r}")
        self.timing.validate()
        self.sensor.validate(self.task)
        self.adaptive.validate()
        if not self.population_mean_place_b > 0:
            raise model.ConfigError("population_mean_place_b must be > 0")
        if self.initial_buffer is not None and not (
                0 <= self.initial_buffer <= self.task.buffer_capacity):
            raise model.ConfigError("initial_buffer out of range")


# Robot modes.
IDLE_EMPTY = "idle_empty"
DOING_SECONDARY = "doing_secondary"
PREPARING = "preparing_handover"
PRESENTING = "presenting"
IDLE_HOLDING = "idle_holding"

# Human phases.
H_WAITING = "waiting_a"
H_REACTING = "reacting"
H_PLACING_A = "placing_a"
H_PLACING_B = "placing_b"
H_DONE = "done"


class Engine:
    """One run of the cell. Either replays a trace or is fed live events."""

    def __init__(self, cfg: EngineConfig, trace: Optional[HumanTrace] = None,
                 subject_id: str = "", seed: Optional[int] = None):
        cfg.validate()
        if trace is not None:
            trace.validate(cfg.task)
        self.cfg = cfg
        self.task = cfg.task
        self.trace = trace
        self.live = trace is None
        self.subject_id = subject_id or (trace.subject_id if trace else "live")
        self.seed = seed

        self._heap: list[tuple[float, int, int, str, tuple]] = []
        self._qseq = 0
        self._log: list[SimEvent] = []
        self._logseq = 0
        self._now = 0.0
        self._run_over = False

        # Human state.
        self._phase = H_WAITING
        self._cycle = 0                   # cycle currently being assembled
        self._placed_b = 0                # placements done in current cycle
        self._pick_pending = False
        self._ready_since: Optional[float] = 0.0
        self._took_at: Optional[float] = None
        self._first_pick_t: Optional[float] = None
        self._last_pick_t: Optional[float] = None

        # Robot state.
        self._mode = IDLE_EMPTY
        self._buffer = (cfg.initial_buffer if cfg.initial_buffer is not None
                        else cfg.task.buffer_capacity)
        self._next_handover = 0
        self._presented: Optional[int] = None  # cycle of cube held out
        self._serve_on_unit_end = False
        self._obligation = False          # sensor: trigger fired, not served
        self._sensor_fired = False        # latch, re-arms at cycle end
        self._wake_version = 0
        self._unit_end: Optional[float] = None

        self._plan_ready: Optional[float] = None  # adaptive per-cycle plan
        self.predictor: Optional[PredictorState] = None
        if cfg.policy_id == ADAPTIVE:
            self.predictor = PredictorState(
                weights=cfg.adaptive.weights,
                d_t=cfg.population_mean_place_b,
                cubes_per_cycle=cfg.task.cubes_b_per_cycle,
                config=cfg.adaptive,
            )
        self._cycle_predictions: dict[int, float] = {}
        self._prediction_trace: list[model.PredictionPoint] = []

        self._push(0.0, ROBOT_RANK, "run_start", ())

    # -- queue plumbing ----------------------------------------------------

    def _push(self, t: float, rank: int, tag: str, payload: tuple) -> None:
        # The whole timeline lives on the millisecond grid: quantizing at
        # scheduling time (not just at log emission) keeps logged durations,
        # serialized logs and trace replays exactly consistent.
        self._qseq += 1
        heapq.heappush(self._heap,
                       (round(t * MS) / MS, rank, self._qseq, tag, payload))

    def _emit(self, kind: str, cycle: int, detail: Optional[int] = None) -> None:
        self._logseq += 1
        self._log.append(SimEvent(
            t_ms=round(self._now * MS), seq=self._logseq, kind=kind,
            cycle=cycle, detail=detail))

    def step(self) -> tuple[float, str]:
        """Pop and process the next event; returns (time, tag)."""
        if self._run_over:
            raise SimulationError("run already complete")
        if not self._heap:
            raise SimulationError("deadlock: event queue empty before run_end")
        t, rank, _, tag, payload = heapq.heappop(self._heap)
        if t < self._now:
            raise SimulationError("clock went backwards")
        self._now = t
        getattr(self, f"_on_{tag}")(*payload)
        return t, tag

    def run(self) -> RunRecord:
        if self.live:
            raise SimulationError("live engine must be fed events")
        while not self._run_over:
            self.step()
        return self.record()

    # -- live-mode surface ---------------------------------------------------

    def advance_to(self, t: float) -> list[SimEvent]:
        """Process queued robot events up to time t; returns newly logged events."""
        mark = len(self._log)
        while self._heap and self._heap[0][0] <= t and not self._run_over:
            self.step()
        return self._log[mark:]

    def next_event_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def feed_human(self, kind: str, t: float) -> list[SimEvent]:
        """Apply one live human action at server time t (seconds)."""
        if not self.live:
            raise SimulationError("feed_human is live-mode only")
        if self._run_over:
            raise ProtocolError("state", "run already complete")
        mark = len(self._log)
        self.advance_to(t)  # robot events that fell due before the action
        self._now = max(self._now, t)
        if kind == "take_a":
            if self._presented is None or self._phase != H_WAITING:
                raise ProtocolError("order", "no cube presented to take")
            self._do_take()
        elif kind == "place_a":
            if self._phase != H_PLACING_A:
                raise ProtocolError("order", "no cube A in hand")
            self._do_place_a_done()
        elif kind == "pick_b":
            if self._phase != H_PLACING_B or self._pick_pending:
                raise ProtocolError("order", "cannot pick a cube B now")
            if self._placed_b >= self.task.cubes_b_per_cycle:
                raise ProtocolError("order", "cycle already complete")
            self._do_pick()
        elif kind == "place_b":
            if self._phase != H_PLACING_B or not self._pick_pending:
                raise ProtocolError("order", "no cube B in hand")
            self._do_place_b_done()
        else:
            raise ProtocolError("type", f"unknown action {kind!r}")
        self.advance_to(self._now)
        return self._log[mark:]

    def legal_actions(self) -> list[str]:
        if self._run_over:
            return []
        if self._phase == H_WAITING:
            return ["take_a"] if self._presented is not None else []
        if self._phase == H_PLACING_A:
            return ["place_a"]
        if self._phase == H_PLACING_B:
            if self._pick_pending:
                return ["place_b"]
            if self._placed_b < self.task.cubes_b_per_cycle:
                return ["pick_b"]
        return []

    # -- event handlers ------------------------------------------------------

    def _on_run_start(self) -> None:
        self._emit(model.RUN_START, 0)
        self._ready_since = self._now
        self._emit(model.HUMAN_WAIT_START, 0)
        self._robot_reconsider()

    def _on_human_take(self, cycle: int) -> None:
        self._do_take()

    def _do_take(self) -> None:
        cycle = self._presented
        self._emit(model.TAKE_A, cycle)
        self._presented = None
        self._took_at = self._now
        self._phase = H_PLACING_A
        self._ready_since = None
        if self.predictor is not None:
            f0 = start_cycle(self.predictor)
            self._cycle_predictions[cycle] = f0
            self._record_prediction(0, f0)
            # The cycle plan: the robot aims its presentation at the
            # forecast end of this cycle's assembly. Snapped to the grid
            # so schedule comparisons against the clock are exact.
            self._plan_ready = round(
                (self._now + self.task.place_a_duration + f0) * MS) / MS
        self._mode = IDLE_EMPTY
        self._robot_reconsider()
        if not self.live:
            dur = self.trace.cycles[cycle].place_a_time
            self._push(self._now + dur, HUMAN_RANK, "human_place_a_done", ())

    def _on_human_place_a_done(self) -> None:
        self._do_place_a_done()

    def _do_place_a_done(self) -> None:
        self._emit(model.PLACE_A_DONE, self._cycle)
        self._phase = H_PLACING_B
        self._placed_b = 0
        self._first_pick_t = None
        self._last_pick_t = None
        if not self.live:
            self._do_pick()  # live humans announce their own picks

    def _do_pick(self) -> None:
        j = self._placed_b + 1
        self._pick_pending = True
        self._emit(model.PICK_B, self._cycle, detail=j)
        if self._first_pick_t is None:
            self._first_pick_t = self._now
        if self.predictor is not None and j >= 2:
            # The pick signal closes the previous cube's interval; in batch
            # replay picks coincide with placement completions, live they
            # also cover the human's reach back to the container.
            self._observe(self._now - self._last_pick_t, n_after=j - 1)
        self._last_pick_t = self._now
        if self.cfg.policy_id == SENSOR:
            self._sensor_pick(j)
        if not self.live:
            dur = self.trace.cycles[self._cycle].place_b_times[j - 1]
            self._push(self._now + dur, HUMAN_RANK, "human_place_b_done", ())

    def _on_human_place_b_done(self) -> None:
        self._do_place_b_done()

    def _do_place_b_done(self) -> None:
        j = self._placed_b + 1
        self._pick_pending = False
        self._placed_b = j
        self._emit(model.PLACE_B_DONE, self._cycle, detail=j)
        if j < self.task.cubes_b_per_cycle:
            if self._mode == IDLE_EMPTY:
                self._robot_reconsider()
            if not self.live:
                self._do_pick()
        else:
            # No further pick closes the last cube; observe its span now.
            if self.predictor is not None:
                self._observe(self._now - self._last_pick_t, n_after=j)
            self._end_cycle()

    def _observe(self, duration: float, n_after: int) -> None:
        observe_placement(self.predictor, max(duration, 1e-9))
        self._record_prediction(
            n_after, predict_remaining(
                self.predictor, min(n_after, self.task.cubes_b_per_cycle)))

    def _end_cycle(self) -> None:
        cycle = self._cycle
        self._emit(model.CYCLE_END, cycle)
        if self.predictor is not None and self._first_pick_t is not None:
            actual = self._now - self._first_pick_t
            if actual > 0:
                end_of_cycle_repair(self.predictor, actual)
        self._sensor_fired = False
        if cycle + 1 >= self.task.cycles_total:
            self._phase = H_DONE
            self._run_over = True
            self._emit(model.RUN_END, cycle)
            return
        self._cycle = cycle + 1
        self._phase = H_WAITING
        self._ready_since = self._now
        if self._presented is not None:
            if not self.live:
                self._push(self._now + self._take_delay(self._cycle),
                           HUMAN_RANK, "human_take", (self._cycle,))
        else:
            self._emit(model.HUMAN_WAIT_START, self._cycle)
            if self._mode == IDLE_EMPTY:
                self._robot_reconsider()

    def _take_delay(self, cycle: int) -> float:
        if self.trace is not None:
            recorded = self.trace.cycles[cycle].take_delay
            if recorded is not None:
                return recorded
        return self.cfg.fetch_reaction

    # -- robot ---------------------------------------------------------------

    def _on_robot_prep_done(self, cycle: int) -> None:
        self._emit(model.HANDOVER_READY, cycle)
        self._mode = PRESENTING
        self._presented = cycle
        if self._phase == H_WAITING:
            if not self.live:
                self._push(self._now + self._take_delay(cycle),
                           HUMAN_RANK, "human_take", (cycle,))
        else:
            self._emit(model.ROBOT_WAIT_START, cycle)

    def _on_robot_secondary_done(self) -> None:
        self._buffer = min(self.task.buffer_capacity, self._buffer + 1)
        self._emit(model.SECONDARY_DONE, self._next_handover, detail=self._buffer)
        self._mode = IDLE_EMPTY
        self._unit_end = None
        if self._serve_on_unit_end:
            self._serve_on_unit_end = False
            self._begin_serve()
        else:
            self._robot_reconsider()

    def _on_robot_wake(self, version: int) -> None:
        if version != self._wake_version or self._mode != IDLE_EMPTY:
            return
        self._robot_reconsider()

    def _schedule_wake(self, t: float) -> None:
        # Round up to the next grid instant so the wake never fires just
        # short of its target and re-arms itself forever.
        self._wake_version += 1
        t_q = math.ceil(t * MS - 1e-6) / MS
        self._push(max(t_q, self._now), ROBOT_RANK, "robot_wake",
                   (self._wake_version,))

    def _start_unit(self) -> None:
        self._mode = DOING_SECONDARY
        self._emit(model.SECONDARY_START, self._next_handover)
        self._unit_end = self._now + self.task.secondary_unit_duration
        self._push(self._unit_end, ROBOT_RANK, "robot_secondary_done", ())

    def _begin_serve(self) -> None:
        """Commit to the next handover: in-line refill if the buffer is
        empty, then the prep motion."""
        if self._buffer == 0:
            self._serve_on_unit_end = True
            self._start_unit()
            return
        self._obligation = False
        self._buffer -= 1
        cycle = self._next_handover
        self._next_handover += 1
        self._mode = PREPARING
        self._emit(model.HANDOVER_PREP_START, cycle)
        self._push(self._now + self.task.handover_prep_duration, ROBOT_RANK,
                   "robot_prep_done", (cycle,))

    def _sensor_pick(self, pick_index: int) -> None:
        if sensor_on_pick(self.cfg.sensor, pick_index, self._sensor_fired):
            self._sensor_fired = True
            if self._next_handover < self.task.cycles_total:
                self._obligation = True
                if self._mode == IDLE_EMPTY:
                    self._begin_serve()
                elif self._mode == DOING_SECONDARY:
                    self._serve_on_unit_end = True

    def _robot_reconsider(self) -> None:
        if self._mode != IDLE_EMPTY or self._run_over:
            return
        if self._next_handover >= self.task.cycles_total:
            return
        policy = self.cfg.policy_id
        now = self._now
        if policy == TIMING:
            prep_at = timing_schedule(self.cfg.timing, self._next_handover,
                                      self.task)
            if now >= prep_at - 5e-4:
                self._begin_serve()
            elif (now + self.task.secondary_unit_duration <= prep_at + 5e-4
                  and self._buffer < self.task.buffer_capacity):
                self._start_unit()
            else:
                self._schedule_wake(prep_at)
        elif policy == SENSOR:
            if self._obligation or self._next_handover == 0:
                self._begin_serve()
            elif self._buffer < self.task.buffer_capacity:
                self._start_unit()
            # Buffer restored: a reactive robot stands by for its signal.
        else:
            if self._next_handover == 0:
                self._begin_serve()
                return
            estimate = self._adaptive_ready_estimate()
            action = adaptive_schedule(
                self.predictor, now, self.task,
                buffer_full=self._buffer >= self.task.buffer_capacity,
                human_ready_estimate=estimate)
            if action is Action.START_PREP:
                self._begin_serve()
            elif action is Action.DO_SECONDARY_UNIT:
                self._start_unit()
            else:
                self._schedule_wake(
                    estimate - self.task.handover_prep_duration)

    def _adaptive_ready_estimate(self) -> float:
        if self._phase == H_WAITING or self._plan_ready is None:
            return self._now
        return self._plan_ready

    def _record_prediction(self, n: int, f: float) -> None:
        self._prediction_trace.append(model.PredictionPoint(
            t=self._now, n=n, f=f,
            weights=self.predictor.weights.as_tuple()))

    # -- results ---------------------------------------------------------------

    def abort(self) -> None:
        self._run_over = True

    def record(self) -> RunRecord:
        """Metrics derived from the quantized event log."""
        complete = bool(self._log) and self._log[-1].kind == model.RUN_END
        if complete:
            rec = model.derive_metrics(self._log, self.task)
        else:
            rec = RunRecord(
                policy_id="", subject_id="", seed=None,
                total_time=self._now, human_idle=0.0, robot_idle=0.0,
                total_idle=0.0, per_cycle=[], event_log=list(self._log),
                aborted=True)
        rec.policy_id = self.cfg.policy_id
        rec.subject_id = self.subject_id
        rec.seed = self.seed
        rec.prediction_trace = list(self._prediction_trace)
        for c in rec.per_cycle:
            if c.cycle_index in self._cycle_predictions:
                c.predicted_time = self._cycle_predictions[c.cycle_index]
        return rec

    def recorded_trace(self) -> HumanTrace:
        """Reconstruct the human trace from the (quantized) event log, for
        replaying live sessions through the batch engine.

        Per-cube durations are pick-to-pick intervals (the last cube runs
        to its placement), and the cube-A time runs from the take to the
        first pick: that is exactly the continuous-placement shape the
        batch engine assumes, so a replay lands on the same cycle ends.
        """
        from .human import TraceCycle

        n = self.task.cubes_b_per_cycle
        takes: dict[int, float] = {}
        ready: dict[int, float] = {}
        ready_since: dict[int, float] = {0: 0.0}
        picks: dict[int, list[float]] = {}
        places: dict[int, list[float]] = {}
        for e in self._log:
            if e.kind == model.HANDOVER_READY:
                ready[e.cycle] = e.t
            elif e.kind == model.TAKE_A:
                takes[e.cycle] = e.t
            elif e.kind == model.PICK_B:
                picks.setdefault(e.cycle, []).append(e.t)
            elif e.kind == model.PLACE_B_DONE:
                places.setdefault(e.cycle, []).append(e.t)
            elif e.kind == model.CYCLE_END:
                ready_since[e.cycle + 1] = e.t
        cycles = []
        for k in sorted(takes):
            ps, qs = picks.get(k, []), places.get(k, [])
            if len(ps) != n or len(qs) != n:
                continue  # incomplete (aborted) cycle
            bs = [ps[j + 1] - ps[j] for j in range(n - 1)]
            bs.append(qs[-1] - ps[-1])
            delay = takes[k] - max(ready.get(k, 0.0), ready_since.get(k, 0.0))
            cycles.append(TraceCycle(
                place_a_time=max(ps[0] - takes[k], 1e-3),
                place_b_times=tuple(max(b, 1e-3) for b in bs),
                take_delay=max(delay, 0.0),
            ))
        return HumanTrace(subject_id=self.subject_id,
                          provenance=f"recorded({self.subject_id})",
                          cycles=tuple(cycles))

    # Introspection used by the service layer.

    @property
    def now(self) -> float:
        return self._now

    @property
    def robot_mode(self) -> str:
        if self._mode == PRESENTING and self._phase != H_WAITING:
            return IDLE_HOLDING
        return self._mode

    @property
    def buffer_level(self) -> int:
        return self._buffer

    @property
    def cycle(self) -> int:
        return self._cycle

    @property
    def placed_in_cycle(self) -> int:
        return self._placed_b

    @property
    def finished(self) -> bool:
        return self._run_over


def run_once(cfg: EngineConfig, trace: HumanTrace,
             subject_id: str = "", seed: Optional[int] = None) -> RunRecord:
    return Engine(cfg, trace, subject_id=subject_id, seed=seed).run()
