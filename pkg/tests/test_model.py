import pytest

from cobotcell import model
from cobotcell.model import (
    MS, ConfigError, MalformedLogError, SimEvent, TaskConfig,
    derive_metrics, events_from_jsonl, events_to_jsonl, validate_config,
)


def test_default_config_is_valid():
    validate_config(TaskConfig())
    validate_config(TaskConfig(5, 20, 4.0, 6.0, 8.0, 5))


@pytest.mark.parametrize("kwargs,fragment", [
    (dict(cycles_total=0), "cycles_total"),
    (dict(cubes_b_per_cycle=0), "cubes_b_per_cycle"),
    (dict(buffer_capacity=0), "buffer_capacity"),
    (dict(secondary_unit_duration=-1.0), "secondary_unit_duration"),
    (dict(place_a_duration=0.0), "place_a_duration"),
    (dict(handover_prep_duration=-0.5), "handover_prep_duration"),
])
def test_config_violations_name_the_field(kwargs, fragment):
    with pytest.raises(ConfigError, match=fragment):
        validate_config(TaskConfig(**kwargs))


def _ev(t, seq, kind, cycle, detail=None):
    return SimEvent(t_ms=round(t * MS), seq=seq, kind=kind, cycle=cycle,
                    detail=detail)


def _cycle_events(seq0, t_take, cycle, place_a, place_bs, ready_t,
                  cycle_end_extra=()):
    """Events of one complete cycle starting at handover_ready."""
    events = [_ev(ready_t, seq0, model.HANDOVER_READY, cycle)]
    seq = seq0 + 1
    events.append(_ev(t_take, seq, model.TAKE_A, cycle)); seq += 1
    t = t_take + place_a
    events.append(_ev(t, seq, model.PLACE_A_DONE, cycle)); seq += 1
    for j, dur in enumerate(place_bs, start=1):
        events.append(_ev(t, seq, model.PICK_B, cycle, j)); seq += 1
        t += dur
        events.append(_ev(t, seq, model.PLACE_B_DONE, cycle, j)); seq += 1
    events.append(_ev(t, seq, model.CYCLE_END, cycle)); seq += 1
    return events, seq, t


def _two_cycle_log(ready2_t):
    """Two-cycle task, 2 B cubes of 3 s; cycle assembly = 4 + 6 = 10 s.

    Cycle 0: ready at 6, take at 7, ends at 17. Cycle 1 handover at
    ready2_t, take 1 s after the later of (ready2_t, 17).
    """
    cfg = TaskConfig(cycles_total=2, cubes_b_per_cycle=2)
    log = [_ev(0.0, 1, model.RUN_START, 0)]
    c0, seq, end0 = _cycle_events(2, 7.0, 0, 4.0, (3.0, 3.0), 6.0)
    log += c0
    take1 = max(ready2_t, end0) + 1.0
    c1, seq, end1 = _cycle_events(seq, take1, 1, 4.0, (3.0, 3.0), ready2_t)
    log += c1
    log.append(_ev(end1, seq, model.RUN_END, 1))
    # Early handovers interleave with the previous cycle; renumber in time
    # order (stable, so intra-instant ordering is preserved).
    log.sort(key=lambda e: e.t_ms)
    log = [SimEvent(t_ms=e.t_ms, seq=i + 1, kind=e.kind, cycle=e.cycle,
                    detail=e.detail) for i, e in enumerate(log)]
    end_events = [e for e in log if e.kind == model.CYCLE_END]
    return cfg, log, end_events[0].t, end_events[1].t


def test_derive_metrics_late_handover_charges_human_idle():
    # Next handover 3 s after the human finished the first cycle.
    cfg, log, end0, end1 = _two_cycle_log(ready2_t=20.0)
    rec = derive_metrics(log, cfg)
    assert end0 == 17.0
    assert rec.per_cycle[0].human_idle == 6.0   # waited for the first cube
    assert rec.per_cycle[1].human_idle == 3.0   # 20 - 17
    assert rec.per_cycle[0].assembly_time == 10.0
    assert rec.total_time == end1
    assert rec.total_idle == rec.human_idle + rec.robot_idle


def test_derive_metrics_exact_meeting_has_zero_idle():
    # handover_ready coincides exactly with the human becoming ready.
    cfg, log, end0, _ = _two_cycle_log(ready2_t=17.0)
    rec = derive_metrics(log, cfg)
    assert rec.per_cycle[1].human_idle == 0.0
    # Robot holds only for the 1 s reaction before take_a.
    assert rec.per_cycle[1].robot_idle == 1.0


def test_derive_metrics_early_handover_charges_robot_idle():
    cfg, log, end0, _ = _two_cycle_log(ready2_t=12.0)
    rec = derive_metrics(log, cfg)
    assert rec.per_cycle[1].human_idle == 0.0
    # Presented at 12, human ready at 17, take at 18.
    assert rec.per_cycle[1].robot_idle == 6.0


def test_derive_metrics_timing_style_gap():
    # Cycle assembly 10 s ending at 17; next handover on a fixed 20 s grid
    # charges the human the 3 s schedule gap.
    cfg, log, *_ = _two_cycle_log(ready2_t=20.0)
    rec = derive_metrics(log, cfg)
    assert rec.human_idle == 6.0 + 3.0


@pytest.mark.parametrize("mutate,fragment", [
    (lambda log: log[:-1], "run_end"),
    (lambda log: log[1:], "run_start"),
    (lambda log: [log[0]] + log[2:], "incomplete"),
    (lambda log: log + [log[-1]], "out of order"),
])
def test_malformed_logs_rejected(mutate, fragment):
    cfg, log, *_ = _two_cycle_log(ready2_t=20.0)
    with pytest.raises(MalformedLogError, match=fragment):
        derive_metrics(mutate(list(log)), cfg)


def test_double_pick_rejected():
    cfg, log, *_ = _two_cycle_log(ready2_t=20.0)
    picks = [e for e in log if e.kind == model.PICK_B]
    clone = SimEvent(t_ms=picks[0].t_ms, seq=picks[0].seq, kind=model.PICK_B,
                     cycle=picks[0].cycle, detail=2)
    bad = sorted(log + [clone], key=lambda e: (e.t_ms, e.seq))
    with pytest.raises(MalformedLogError):
        derive_metrics(bad, cfg)


def test_jsonl_round_trip_is_bit_exact():
    cfg, log, *_ = _two_cycle_log(ready2_t=20.0)
    text = events_to_jsonl(log)
    back = events_from_jsonl(text)
    assert back == log
    assert events_to_jsonl(back) == text
    rec1 = derive_metrics(log, cfg)
    rec2 = derive_metrics(back, cfg)
    assert rec1.total_time == rec2.total_time
    assert rec1.human_idle == rec2.human_idle
    assert rec1.robot_idle == rec2.robot_idle


def test_event_seconds_property():
    e = SimEvent(t_ms=70880, seq=3, kind=model.PICK_B, cycle=1, detail=4)
    assert e.t == 70.88
    assert SimEvent.from_json(e.to_json()) == e
