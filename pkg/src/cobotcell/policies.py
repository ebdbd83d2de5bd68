"""The three robot coordination policies: timing, sensor and adaptive.

The adaptive policy forecasts the remaining cube-B assembly time of the
current cycle as

    F = (C - n) * (alpha*d_t + beta*d_s + gamma*(delta*P_n + eps*P_nm1 + theta*P_nm2))

where C is the cubes-per-cycle count, n the cubes placed so far, d_t the
population per-cube mean, d_s the running mean of the current subject and
P_* the last three observed placement times. An end-of-cycle controller
classifies the relative prediction error and shifts the outer weights
toward the term that tracked reality best.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

from .model import ConfigError, TaskConfig

WEIGHT_MIN = 0.05
WEIGHT_MAX = 0.90
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class TimingPolicyConfig:
    interval: float = 70.0

    def validate(self) -> None:
        if not self.interval > 0:
            raise ConfigError("interval must be > 0")


def timing_schedule(cfg: TimingPolicyConfig, cycle_index: int,
                    task: TaskConfig) -> float:
    """Prep start time for the given handover under the fixed schedule.

    Presentation is targeted at cycle_index * interval; the first cube is
    targeted at run start, so its prep is clamped to t=0.
    """
    if cycle_index < 0:
        raise ConfigError("cycle_index must be >= 0")
    target = cycle_index * cfg.interval
    return max(0.0, target - task.handover_prep_duration)


@dataclass(frozen=True)
class SensorPolicyConfig:
    trigger_pick_index: int = 13

    def validate(self, task: Optional[TaskConfig] = None) -> None:
        if self.trigger_pick_index < 1:
            raise ConfigError("trigger_pick_index must be >= 1")
        if task is not None and self.trigger_pick_index > task.cubes_b_per_cycle:
            raise ConfigError(
                "trigger_pick_index must be <= cubes_b_per_cycle")


def sensor_on_pick(cfg: SensorPolicyConfig, pick_index: int,
                   already_fired: bool = False) -> bool:
    """True iff this pick is the action-triggering signal.

    Fires at most once per cycle; the latch re-arms at cycle end.
    """
    if pick_index < 1:
        raise ConfigError("pick_index must be >= 1")
    return (not already_fired) and pick_index == cfg.trigger_pick_index


@dataclass(frozen=True)
class Weights:
    """Outer weights over (population, subject, moving-average) and inner
    weights over the last three placements, each triple on the simplex."""

    alpha: float = 0.2
    beta: float = 0.3
    gamma: float = 0.5
    delta: float = 0.5
    epsilon: float = 0.3
    theta: float = 0.2

    def outer(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    def inner(self) -> tuple[float, float, float]:
        return (self.delta, self.epsilon, self.theta)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.alpha, self.beta, self.gamma,
                self.delta, self.epsilon, self.theta)

    def validate(self) -> None:
        for triple, label in ((self.outer(), "outer"), (self.inner(), "inner")):
            if abs(sum(triple) - 1.0) > SIMPLEX_TOL:
                raise ConfigError(f"{label} weights must sum to 1")
            for w in triple:
                if not (WEIGHT_MIN - SIMPLEX_TOL <= w <= WEIGHT_MAX + SIMPLEX_TOL):
                    raise ConfigError(
                        f"{label} weights must lie in "
                        f"[{WEIGHT_MIN}, {WEIGHT_MAX}]")


def _project_simplex(w: list[float], lo: float = WEIGHT_MIN,
                     hi: float = WEIGHT_MAX) -> tuple[float, float, float]:
    """Clamp to [lo, hi] and redistribute so the triple sums to exactly 1."""
    w = [min(hi, max(lo, x)) for x in w]
    for _ in range(8):
        diff = 1.0 - sum(w)
        if abs(diff) <= 1e-15:
            break
        if diff > 0:
            room = [hi - x for x in w]
        else:
            room = [x - lo for x in w]
        total_room = sum(room)
        if total_room <= 0:
            break
        for i in range(3):
            w[i] += diff * room[i] / total_room
        w = [min(hi, max(lo, x)) for x in w]
    return (w[0], w[1], w[2])


@dataclass(frozen=True)
class AdaptiveConfig:
    weights: Weights = field(default_factory=Weights)
    error_band_small: float = 0.05
    error_band_large: float = 0.15
    step: float = 0.05
    adjust_inner: bool = False

    def validate(self) -> None:
        self.weights.validate()
        if not (0 < self.error_band_small < self.error_band_large):
            raise ConfigError("error bands must satisfy 0 < small < large")
        if not 0 < self.step < 1:
            raise ConfigError("step must be in (0, 1)")


class Action(enum.Enum):
    DO_SECONDARY_UNIT = "do_secondary_unit"
    START_PREP = "start_prep"
    HOLD = "hold"


@dataclass
class PredictorState:
    """Mutable per-run state of the adaptive predictor."""

    weights: Weights
    d_t: float
    cubes_per_cycle: int
    config: AdaptiveConfig
    d_s: float = 0.0
    window: list[float] = field(default_factory=list)  # most recent first
    n_placed_in_cycle: int = 0
    samples_seen: int = 0
    last_cycle_prediction: Optional[float] = None
    # Standalone per-term predictions captured at the cycle's n=0 evaluation,
    # used by the repair controller to attribute the error.
    _cycle_terms_outer: Optional[tuple[float, float, float]] = None
    _cycle_terms_inner: Optional[tuple[float, float, float]] = None

    def __post_init__(self) -> None:
        # Weights are validated at the config boundary; ad-hoc states may
        # carry degenerate weights to isolate single formula terms.
        if not self.d_t > 0:
            raise ConfigError("d_t must be > 0")
        if self.d_s == 0.0:
            self.d_s = self.d_t  # population mean as prior until observed

    def effective_window(self) -> tuple[float, float, float]:
        """(P_n, P_nm1, P_nm2) with cold-start backfill from d_s, else d_t."""
        fill = self.d_s if self.samples_seen >= 1 else self.d_t
        w = list(self.window[:3])
        while len(w) < 3:
            w.append(fill)
        return (w[0], w[1], w[2])


def predict_remaining(state: PredictorState, n: int) -> float:
    """Forecast of the remaining B-assembly time with n cubes placed."""
    if not 0 <= n <= state.cubes_per_cycle:
        raise ConfigError(
            f"n must be in [0, {state.cubes_per_cycle}], got {n}")
    p_n, p_nm1, p_nm2 = state.effective_window()
    w = state.weights
    inner = w.delta * p_n + w.epsilon * p_nm1 + w.theta * p_nm2
    blend = w.alpha * state.d_t + w.beta * state.d_s + w.gamma * inner
    return (state.cubes_per_cycle - n) * blend


def start_cycle(state: PredictorState) -> float:
    """Evaluate the full-cycle forecast at n=0 and snapshot the standalone
    term predictions the repair controller will compare against."""
    state.n_placed_in_cycle = 0
    c = state.cubes_per_cycle
    p_n, p_nm1, p_nm2 = state.effective_window()
    w = state.weights
    inner = w.delta * p_n + w.epsilon * p_nm1 + w.theta * p_nm2
    state._cycle_terms_outer = (c * state.d_t, c * state.d_s, c * inner)
    state._cycle_terms_inner = (c * p_n, c * p_nm1, c * p_nm2)
    f0 = predict_remaining(state, 0)
    state.last_cycle_prediction = f0
    return f0


def observe_placement(state: PredictorState, duration: float) -> None:
    """Feed one observed cube-B placement time into the predictor."""
    if not duration > 0:
        raise ConfigError("placement duration must be > 0")
    prior = state.samples_seen
    if prior == 0:
        # Materialize the cold-start backfill: the prior d_s (which is the
        # population mean until anything is observed) pads the window.
        state.window = [state.d_s, state.d_s]
    state.d_s = (state.d_s * prior + duration) / (prior + 1) if prior else duration
    state.samples_seen = prior + 1
    state.n_placed_in_cycle += 1
    state.window.insert(0, duration)
    del state.window[3:]


def _shift(triple: tuple[float, float, float], donor: int, receiver: int,
           amount: float) -> tuple[float, float, float]:
    w = list(triple)
    transfer = min(amount, WEIGHT_MAX - w[receiver], w[donor] - WEIGHT_MIN)
    if transfer > 0:
        w[donor] -= transfer
        w[receiver] += transfer
    return _project_simplex(w)


def _repair_triple(triple: tuple[float, float, float],
                   term_preds: tuple[float, float, float],
                   actual: float, error: float, cfg: AdaptiveConfig,
                   large_receiver: int) -> tuple[float, float, float]:
    if error < cfg.error_band_small:
        return _project_simplex(list(triple))
    term_errors = [abs(p - actual) for p in term_preds]
    if error < cfg.error_band_large:
        donor = max(range(3), key=lambda i: (term_errors[i], -i))
        receiver = min(range(3), key=lambda i: (term_errors[i], i))
        if donor == receiver:
            return _project_simplex(list(triple))
        return _shift(triple, donor, receiver, cfg.step)
    # Large error: lean harder on the recency term, taking from whichever
    # of the other terms tracked reality worst.
    others = [i for i in range(3) if i != large_receiver]
    donor = max(others, key=lambda i: (term_errors[i], -i))
    return _shift(triple, donor, large_receiver, 2 * cfg.step)


def end_of_cycle_repair(state: PredictorState, actual_cycle_time: float) -> None:
    """Classify the prediction error of the finished cycle and adjust weights.

    Small errors leave the weights alone; medium errors move one step of
    outer weight from the worst standalone term to the best; large errors
    move two steps toward the moving-average term.
    """
    if not actual_cycle_time > 0:
        raise ConfigError("actual_cycle_time must be > 0")
    if state.last_cycle_prediction is None or state._cycle_terms_outer is None:
        raise ConfigError("no cycle prediction recorded; call start_cycle first")
    cfg = state.config
    e = abs(state.last_cycle_prediction - actual_cycle_time) / actual_cycle_time
    outer = _repair_triple(state.weights.outer(), state._cycle_terms_outer,
                           actual_cycle_time, e, cfg, large_receiver=2)
    if cfg.adjust_inner:
        inner = _repair_triple(state.weights.inner(), state._cycle_terms_inner,
                               actual_cycle_time, e, cfg, large_receiver=0)
    else:
        inner = state.weights.inner()
    state.weights = Weights(alpha=outer[0], beta=outer[1], gamma=outer[2],
                            delta=inner[0], epsilon=inner[1], theta=inner[2])
    state.weights.validate()


def adaptive_schedule(state: PredictorState, now: float, task: TaskConfig,
                      buffer_full: bool = False,
                      human_ready_estimate: Optional[float] = None) -> Action:
    """Choose the robot's next move given the current forecast.

    ``human_ready_estimate`` anchors the forecast at the last observed
    human event; without it the forecast is taken from ``now``.
    """
    if human_ready_estimate is not None:
        t_ready = human_ready_estimate
    else:
        t_ready = now + predict_remaining(state, state.n_placed_in_cycle)
    prep_at = t_ready - task.handover_prep_duration
    # Engine clocks sit on a millisecond grid; half a quantum of slack
    # keeps the comparisons immune to float representation drift.
    if now >= prep_at - 5e-4:
        return Action.START_PREP
    if (now + task.secondary_unit_duration <= prep_at + 5e-4
            and not buffer_full):
        return Action.DO_SECONDARY_UNIT
    # Nothing fits before the prep window opens; wait for it rather than
    # presenting early and pinning the robot in a holding posture.
    return Action.HOLD
