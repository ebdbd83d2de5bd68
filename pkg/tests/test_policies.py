import math

import pytest
from hypothesis import given, settings, strategies as st

from cobotcell import ConfigError, TaskConfig
from cobotcell.policies import (
    Action, AdaptiveConfig, PredictorState, SensorPolicyConfig,
    TimingPolicyConfig, Weights, adaptive_schedule, end_of_cycle_repair,
    observe_placement, predict_remaining, sensor_on_pick, start_cycle,
    timing_schedule, WEIGHT_MAX, WEIGHT_MIN,
)

TASK = TaskConfig()


def make_state(weights=None, d_t=2.8, config=None):
    return PredictorState(
        weights=weights or Weights(),
        d_t=d_t,
        cubes_per_cycle=20,
        config=config or AdaptiveConfig(),
    )


# -- timing -------------------------------------------------------------------

def test_timing_schedule_arithmetic():
    cfg = TimingPolicyConfig(interval=70.0)
    # Presentation target 70 with a 6 s prep motion.
    assert timing_schedule(cfg, 1, TASK) == 64.0
    # First cube is targeted at run start; prep cannot precede t=0.
    assert timing_schedule(cfg, 0, TASK) == 0.0
    assert timing_schedule(cfg, 4, TASK) == 4 * 70.0 - 6.0


def test_timing_is_open_loop():
    cfg = TimingPolicyConfig()
    starts = [timing_schedule(cfg, k, TASK) for k in range(5)]
    assert starts == [timing_schedule(cfg, k, TASK) for k in range(5)]
    assert starts == sorted(starts)


# -- sensor -------------------------------------------------------------------

def test_sensor_trigger_on_configured_pick():
    cfg = SensorPolicyConfig()
    assert sensor_on_pick(cfg, 13) is True
    assert sensor_on_pick(cfg, 12) is False
    assert sensor_on_pick(cfg, 14) is False
    # Latched: once fired, later picks (or a repeat) do not re-trigger.
    assert sensor_on_pick(cfg, 13, already_fired=True) is False


def test_sensor_config_bounds():
    with pytest.raises(ConfigError):
        SensorPolicyConfig(trigger_pick_index=0).validate()
    with pytest.raises(ConfigError):
        SensorPolicyConfig(trigger_pick_index=21).validate(TASK)
    SensorPolicyConfig(trigger_pick_index=20).validate(TASK)


# -- weights ------------------------------------------------------------------

def test_weights_validation():
    Weights().validate()
    with pytest.raises(ConfigError):
        Weights(alpha=0.5, beta=0.3, gamma=0.3).validate()
    with pytest.raises(ConfigError):
        Weights(alpha=0.95, beta=0.025, gamma=0.025).validate()


# -- prediction formula ---------------------------------------------------------

def test_predict_zero_factor_at_cycle_end():
    state = make_state()
    for _ in range(5):
        observe_placement(state, 3.1)
    assert predict_remaining(state, 20) == 0.0


def test_predict_single_term_isolation():
    # Degenerate weights isolate the population term.
    state = make_state(weights=Weights(alpha=1.0, beta=0.0, gamma=0.0),
                       d_t=3.0)
    assert predict_remaining(state, 10) == pytest.approx(30.0, rel=1e-12)


def test_predict_hand_arithmetic_example():
    state = make_state(d_t=2.8)
    state.d_s = 3.0
    state.window = [3.2, 2.9, 3.1]
    state.samples_seen = 3
    f = predict_remaining(state, 13)
    inner = 0.5 * 3.2 + 0.3 * 2.9 + 0.2 * 3.1
    assert inner == pytest.approx(3.09, rel=1e-12)
    blend = 0.2 * 2.8 + 0.3 * 3.0 + 0.5 * inner
    assert blend == pytest.approx(3.005, rel=1e-12)
    assert f == pytest.approx(7 * 3.005, rel=1e-12)
    assert f == pytest.approx(21.035, rel=1e-12)


def test_predict_rejects_out_of_range_n():
    state = make_state()
    with pytest.raises(ConfigError):
        predict_remaining(state, 21)
    with pytest.raises(ConfigError):
        predict_remaining(state, -1)


def test_predict_monotone_in_n():
    state = make_state()
    for d in (3.3, 2.9, 3.1, 2.7):
        observe_placement(state, d)
    values = [predict_remaining(state, n) for n in range(21)]
    assert all(a > b for a, b in zip(values, values[1:]))


# -- observation ------------------------------------------------------------------

def test_first_observation_backfills_window():
    state = make_state(d_t=2.8)
    observe_placement(state, 3.0)
    assert state.effective_window() == (3.0, 2.8, 2.8)
    assert state.d_s == 3.0


def test_running_mean():
    state = make_state()
    observe_placement(state, 2.0)
    observe_placement(state, 4.0)
    assert state.d_s == pytest.approx(3.0)
    assert state.samples_seen == 2


def test_window_shift_semantics():
    state = make_state()
    for d in (1.0, 2.0, 3.0):
        observe_placement(state, d)
    assert state.effective_window() == (3.0, 2.0, 1.0)
    observe_placement(state, 4.0)
    assert state.effective_window() == (4.0, 3.0, 2.0)


def test_observe_rejects_nonpositive():
    with pytest.raises(ConfigError):
        observe_placement(make_state(), 0.0)


# -- repair controller ----------------------------------------------------------

def _primed_state(weights, d_t=2.8, d_s=None, window=None):
    state = make_state(weights=weights, d_t=d_t)
    if d_s is not None:
        state.d_s = d_s
        state.samples_seen = 3
        state.window = list(window or [d_s] * 3)
    return state


def test_small_error_leaves_weights():
    state = _primed_state(Weights(), d_s=3.0)
    start_cycle(state)
    f0 = state.last_cycle_prediction
    end_of_cycle_repair(state, f0 / 1.02)  # e ~= 2%
    assert state.weights.outer() == pytest.approx(Weights().outer(), abs=1e-12)


def test_medium_error_moves_step_from_worst_to_best():
    # Population term far off, moving-average term close: one step of
    # weight moves from alpha to gamma.
    state = _primed_state(Weights(alpha=0.2, beta=0.3, gamma=0.5),
                          d_t=2.0, d_s=2.9, window=[3.05, 3.05, 3.05])
    start_cycle(state)
    actual = 61.0  # prediction 55.45 -> e ~= 0.091 (medium)
    assert abs(state.last_cycle_prediction - actual) / actual < 0.15
    end_of_cycle_repair(state, actual)
    assert state.weights.outer() == pytest.approx((0.15, 0.3, 0.55), abs=1e-9)


def test_large_error_moves_two_steps_toward_recency():
    state = _primed_state(Weights(alpha=0.3, beta=0.3, gamma=0.4),
                          d_t=2.0, d_s=2.2, window=[2.4, 2.4, 2.4])
    start_cycle(state)
    end_of_cycle_repair(state, 62.0)  # e ~ 0.3: large
    # alpha is the worst standalone term; two steps go to gamma.
    assert state.weights.outer() == pytest.approx((0.2, 0.3, 0.5), abs=1e-9)


def test_capped_receiver_stays_capped():
    state = _primed_state(Weights(alpha=0.05, beta=0.05, gamma=0.90),
                          d_t=2.0, d_s=2.1, window=[2.6, 2.6, 2.6])
    start_cycle(state)
    end_of_cycle_repair(state, 64.0)  # large error
    w = state.weights
    assert w.gamma == pytest.approx(0.90, abs=1e-9)
    assert sum(w.outer()) == pytest.approx(1.0, abs=1e-9)
    assert all(WEIGHT_MIN - 1e-9 <= x <= WEIGHT_MAX + 1e-9 for x in w.outer())


def test_inner_weights_untouched_by_default():
    state = _primed_state(Weights(), d_s=3.4, window=[3.4, 3.4, 3.4])
    start_cycle(state)
    end_of_cycle_repair(state, 80.0)
    assert state.weights.inner() == Weights().inner()


def test_inner_adjustment_behind_flag():
    cfg = AdaptiveConfig(adjust_inner=True)
    state = make_state(config=cfg)
    state.d_s = 3.0
    state.samples_seen = 3
    state.window = [3.5, 3.0, 2.5]
    start_cycle(state)
    end_of_cycle_repair(state, 75.0)  # large error: lean on P_n
    assert state.weights.delta > Weights().delta


@given(
    actuals=st.lists(st.floats(20.0, 200.0), min_size=1, max_size=60),
    durations=st.lists(st.floats(0.5, 12.0), min_size=1, max_size=60),
)
@settings(max_examples=200, deadline=None)
def test_simplex_preserved_under_any_repair_sequence(actuals, durations):
    state = make_state(config=AdaptiveConfig(adjust_inner=True))
    for i, actual in enumerate(actuals):
        start_cycle(state)
        observe_placement(state, durations[i % len(durations)])
        end_of_cycle_repair(state, actual)
        for triple in (state.weights.outer(), state.weights.inner()):
            assert sum(triple) == pytest.approx(1.0, abs=1e-9)
            assert all(WEIGHT_MIN - 1e-9 <= w <= WEIGHT_MAX + 1e-9
                       for w in triple)


def test_repair_requires_recorded_prediction():
    with pytest.raises(ConfigError):
        end_of_cycle_repair(make_state(), 60.0)


# -- schedule decisions -----------------------------------------------------------

def test_schedule_runs_secondary_when_slack_allows():
    # F = 21: an 8 s unit fits before the prep window at F - 6 = 15.
    state = make_state(weights=Weights(alpha=1.0, beta=0.0, gamma=0.0), d_t=3.0)
    state.n_placed_in_cycle = 13
    assert adaptive_schedule(state, 0.0, TASK) is Action.DO_SECONDARY_UNIT


def test_schedule_preps_inside_window():
    # F = 5 < prep duration: the prediction is already inside the window.
    state = make_state(weights=Weights(alpha=1.0, beta=0.0, gamma=0.0), d_t=0.25)
    state.n_placed_in_cycle = 0
    assert adaptive_schedule(state, 0.0, TASK) is Action.START_PREP


def test_schedule_holds_when_buffer_full_until_window():
    state = make_state(weights=Weights(alpha=1.0, beta=0.0, gamma=0.0), d_t=3.0)
    state.n_placed_in_cycle = 0  # F = 60: plenty of slack
    assert adaptive_schedule(state, 0.0, TASK, buffer_full=True) is Action.HOLD
    # Window reached: prep regardless of the buffer.
    assert adaptive_schedule(state, 54.0, TASK, buffer_full=True,
                             human_ready_estimate=60.0) is Action.START_PREP


def test_schedule_holds_when_no_unit_fits():
    state = make_state(weights=Weights(alpha=1.0, beta=0.0, gamma=0.0), d_t=3.0)
    state.n_placed_in_cycle = 16  # F = 12, window at +6, unit needs 8
    assert adaptive_schedule(state, 0.0, TASK) is Action.HOLD
