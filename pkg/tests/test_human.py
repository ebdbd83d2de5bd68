import numpy as np
import pytest

from cobotcell import (
    ConfigError, HumanProfile, HumanTrace, PopulationModel, TaskConfig,
    generate_trace, replay_trace, sample_subject,
)
from cobotcell.human import TraceCycle


def test_degenerate_population_gives_exact_mean():
    pop = PopulationModel(pop_sd=0.0)
    p = sample_subject(pop, seed=42)
    assert p.mean_place_b == pop.pop_mean_place_b


def test_same_seed_same_profile():
    pop = PopulationModel()
    assert sample_subject(pop, 7) == sample_subject(pop, 7)
    assert sample_subject(pop, 7) != sample_subject(pop, 8)


def test_population_sample_mean_law_of_large_numbers():
    pop = PopulationModel(pop_mean_place_b=2.8, pop_sd=0.45)
    means = [sample_subject(pop, s).mean_place_b for s in range(10_000)]
    assert abs(np.mean(means) - 2.8) < 0.02


def test_truncation_floor():
    pop = PopulationModel(pop_mean_place_b=0.6, pop_sd=0.6)
    means = [sample_subject(pop, s).mean_place_b for s in range(500)]
    assert min(means) >= 0.5


def test_zero_variance_trace_is_constant():
    profile = HumanProfile("s", mean_place_b=3.0, cv=0.0, mean_place_a=4.0)
    trace = generate_trace(profile, TaskConfig(), seed=1)
    assert all(t == 3.0 for c in trace.cycles for t in c.place_b_times)
    assert all(c.place_a_time == 4.0 for c in trace.cycles)


def test_drift_closed_form():
    profile = HumanProfile("s", mean_place_b=3.0, cv=0.0, drift_per_cube=0.01)
    trace = generate_trace(profile, TaskConfig(), seed=1)
    # 100th cube overall: drift compounded 99 times.
    last = trace.cycles[4].place_b_times[19]
    assert last == pytest.approx(3.0 * 1.01 ** 99, rel=1e-12)
    assert last == pytest.approx(8.0295, abs=0.01)


def test_trace_determinism_and_seed_sensitivity():
    profile = HumanProfile("s", mean_place_b=2.8)
    cfg = TaskConfig()
    t1 = generate_trace(profile, cfg, seed=5)
    t2 = generate_trace(profile, cfg, seed=5)
    t3 = generate_trace(profile, cfg, seed=6)
    assert t1 == t2
    assert t1 != t3
    # Per-trace mean stays within 3 sigma of the latent mean.
    for tr in (t1, t3):
        durs = tr.placement_durations()
        sd_of_mean = profile.cv * profile.mean_place_b / np.sqrt(len(durs))
        assert abs(np.mean(durs) - profile.mean_place_b) < 3 * sd_of_mean


def test_trace_shape_matches_config():
    cfg = TaskConfig(cycles_total=3, cubes_b_per_cycle=7)
    profile = HumanProfile("s", mean_place_b=2.0)
    trace = generate_trace(profile, cfg, seed=0)
    assert len(trace.cycles) == 3
    assert all(len(c.place_b_times) == 7 for c in trace.cycles)
    assert len(trace.placement_durations()) == 21


def test_replay_round_trips_durations():
    cfg = TaskConfig()
    profile = HumanProfile("s", mean_place_b=2.8)
    trace = generate_trace(profile, cfg, seed=3)
    stream = replay_trace(trace, cfg)
    expected = []
    for c in trace.cycles:
        expected.append(("place_a", c.place_a_time))
        expected.extend(("place_b", t) for t in c.place_b_times)
    assert stream == expected


def test_replay_rejects_shape_mismatch():
    cfg = TaskConfig()
    empty = HumanTrace("s", "fixture", cycles=())
    with pytest.raises(ConfigError):
        replay_trace(empty, cfg)
    short = HumanTrace("s", "fixture", cycles=tuple(
        TraceCycle(4.0, (3.0,) * 19) for _ in range(5)))
    with pytest.raises(ConfigError):
        replay_trace(short, cfg)


def test_trace_json_round_trip():
    cfg = TaskConfig(cycles_total=2, cubes_b_per_cycle=3)
    cycles = tuple(
        TraceCycle(place_a_time=4.125, place_b_times=(2.5, 3.0, 2.75),
                   take_delay=0.8)
        for _ in range(2))
    trace = HumanTrace("s9", "recorded(sess)", cycles)
    back = HumanTrace.from_json(trace.to_json())
    assert back == trace
    assert back.to_json() == trace.to_json()


def test_profile_validation():
    with pytest.raises(ConfigError):
        HumanProfile("s", mean_place_b=0.0).validate()
    with pytest.raises(ConfigError):
        HumanProfile("s", mean_place_b=2.0, drift_per_cube=0.06).validate()
    with pytest.raises(ConfigError):
        HumanProfile("s", mean_place_b=2.0, cv=-0.1).validate()
